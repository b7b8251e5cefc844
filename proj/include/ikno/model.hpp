#pragma once

// Encoder–processor–decoder operator network on a latent product grid.
//
//   tokens   V_P  = MLP_tok([x, cos x, sin x, a(x)])              (n × h)
//   encode   V_G  = Fuse_enc( concat_q  R_q · K_GP^(q) · V_P )     (M × h)
//   process  V'_G = P(V_G)                                         (M × h)
//   decode   û    = MLP_head( Fuse_dec( concat_q  K_QG^(q) · R_q · V'_G ) )
//
// R_q is the branch-q grid operator: the Vanilla resolvent, the TP resolvent
// or the truncated propagator. Kernel parameters are shared between encoder
// and decoder within a branch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ikno/kernels.hpp"
#include "ikno/linalg.hpp"

namespace ikno {

enum class ProcessorKind { Identity, Mlp, TinyAttention };
enum class OperatorVariant { Vanilla, TP, Truncated };
enum class KernelFamily { Learnable, LinearWindow };
enum class Activation { None, GeluTanh };

std::string_view to_string(ProcessorKind k);
std::string_view to_string(OperatorVariant v);
std::string_view to_string(KernelFamily f);
ProcessorKind parse_processor(std::string_view s);
OperatorVariant parse_variant(std::string_view s);
KernelFamily parse_kernel_family(std::string_view s);

struct ModelConfig {
  std::size_t dim = 2;
  std::size_t grid_points = 8;  // L per axis
  std::size_t hidden = 16;      // h
  std::size_t branches = 3;     // Q
  std::size_t nerf_levels = 1;
  std::size_t in_channels = 1;   // condition channels a(x)
  std::size_t out_channels = 1;  // predicted channels
  ProcessorKind processor = ProcessorKind::Mlp;
  std::size_t processor_depth = 1;
  std::size_t processor_width = 16;
  std::size_t attention_heads = 2;
  OperatorVariant variant = OperatorVariant::TP;
  std::size_t truncation_order = 1;  // p, truncated variant only
  std::size_t head_depth = 2;        // linear layers in the output head
  KernelFamily kernel = KernelFamily::Learnable;
  LinearWindowKernel window{};  // used when kernel == LinearWindow
  double grid_min = -1.0;
  double grid_max = 1.0;
  std::vector<double> init_scales{1.0, 2.0, 4.0};
  double init_alpha = -1.0;

  void validate() const;
};

/// GELU, tanh approximation:
///   0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
double gelu_tanh(double x);
double gelu_tanh_derivative(double x);

/// Fully connected stack. Parameters are laid out per layer as W (in × out,
/// row-major) followed by b (out). The activation sits between layers, never
/// after the last one.
struct Mlp {
  std::vector<std::size_t> widths;
  Activation activation = Activation::GeluTanh;

  std::size_t layers() const noexcept { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t param_count() const noexcept;
};

struct MlpCache {
  std::vector<DenseMatrix> inputs;  // input to each layer
  std::vector<DenseMatrix> pre;     // pre-activation output of each layer
};

DenseMatrix mlp_forward(const Mlp& mlp, std::span<const double> params, const DenseMatrix& x,
                        MlpCache* cache = nullptr);
/// Returns dL/dx and accumulates dL/dparams into `grad`.
DenseMatrix mlp_backward(const Mlp& mlp, std::span<const double> params, const MlpCache& cache,
                         const DenseMatrix& dy, std::span<double> grad);

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

class ParamLayout {
 public:
  void add(std::string name, std::size_t length);
  const Segment& find(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t size() const noexcept { return total_; }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  std::vector<double> values;

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;
};

/// (x, cos x, sin x) laid out as all coordinates, all cosines, all sines.
/// Only one frequency level is supported; other values throw UnsupportedLevels.
std::vector<double> positional_encode(std::span<const double> x, std::size_t levels = 1);

class IknoModel {
 public:
  explicit IknoModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  const LatentGrid& grid() const noexcept { return grid_; }

  const Mlp& tokenizer_mlp() const noexcept { return tokenizer_; }
  const Mlp& head_mlp() const noexcept { return head_; }
  const Mlp& processor_mlp() const noexcept { return processor_mlp_; }

  /// Deterministic initialization; see the README for the scheme.
  ParamVector init_params(std::uint64_t seed) const;

  /// Decodes the kernel segment (c = exp(log c)). For the linear-window
  /// family this returns empty branches carrying the fixed α.
  MultiScaleKernelParams kernel_params(const ParamVector& params) const;

  DenseMatrix tokenize(const ParamVector& params, const PointCloud& input) const;
  DenseMatrix encode(const ParamVector& params, const DenseMatrix& tokens,
                     const PointCloud& input) const;
  DenseMatrix process(const ParamVector& params, const DenseMatrix& latent) const;
  DenseMatrix decode(const ParamVector& params, const DenseMatrix& latent,
                     const PointCloud& queries) const;
  DenseMatrix forward(const ParamVector& params, const PointCloud& input,
                      const PointCloud& queries) const;

  /// Relative L2 loss of one sample; the gradient is added into `grad`.
  /// Throws ZeroTarget when the target norm is below 1e-30.
  double loss_and_gradient(const ParamVector& params, const PointCloud& input,
                           const PointCloud& queries, const DenseMatrix& target,
                           std::span<double> grad) const;

  /// Absolute parameter indices of branch q: log c, β, γ of axis j, and α.
  /// Only meaningful for the learnable kernel family.
  std::size_t kernel_index_log_c(std::size_t q, std::size_t j) const;
  std::size_t kernel_index_beta(std::size_t q, std::size_t j) const;
  std::size_t kernel_index_gamma(std::size_t q, std::size_t j) const;
  std::size_t kernel_index_alpha(std::size_t q) const;

 private:
  struct Trace;
  class BranchOperators;

  void check_input(const PointCloud& input) const;
  void check_queries(const PointCloud& queries) const;
  DenseMatrix encode_impl(const ParamVector& params, const BranchOperators& ops,
                          const DenseMatrix& tokens, const PointCloud& input, Trace* trace) const;
  DenseMatrix process_impl(const ParamVector& params, const DenseMatrix& latent,
                           Trace* trace) const;
  DenseMatrix decode_impl(const ParamVector& params, const BranchOperators& ops,
                          const DenseMatrix& latent, const PointCloud& queries,
                          Trace* trace) const;

  ModelConfig config_;
  LatentGrid grid_;
  PointCloud grid_cloud_;
  std::vector<std::size_t> grid_index_;  // M x d per-axis indices
  ParamLayout layout_;
  Mlp tokenizer_;
  Mlp fusion_;
  Mlp processor_mlp_;
  Mlp head_;
};

}  // namespace ikno
