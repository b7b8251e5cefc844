#include "ikno/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ikno/error.hpp"
#include "ikno/resolvent.hpp"
#include "ikno/rng.hpp"
#include "ikno/training.hpp"

namespace ikno {

std::string_view to_string(ProcessorKind k) {
  switch (k) {
    case ProcessorKind::Identity: return "identity";
    case ProcessorKind::Mlp: return "mlp";
    case ProcessorKind::TinyAttention: return "tiny_attention";
  }
  return "unknown";
}

std::string_view to_string(OperatorVariant v) {
  switch (v) {
    case OperatorVariant::Vanilla: return "vanilla";
    case OperatorVariant::TP: return "tp";
    case OperatorVariant::Truncated: return "truncated";
  }
  return "unknown";
}

std::string_view to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::Learnable: return "learnable";
    case KernelFamily::LinearWindow: return "linear_window";
  }
  return "unknown";
}

ProcessorKind parse_processor(std::string_view s) {
  if (s == "identity") return ProcessorKind::Identity;
  if (s == "mlp") return ProcessorKind::Mlp;
  if (s == "tiny_attention" || s == "attention") return ProcessorKind::TinyAttention;
  throw Error(Errc::InvalidArgument, "unknown processor '" + std::string(s) + "'");
}

OperatorVariant parse_variant(std::string_view s) {
  if (s == "vanilla") return OperatorVariant::Vanilla;
  if (s == "tp") return OperatorVariant::TP;
  if (s == "truncated") return OperatorVariant::Truncated;
  throw Error(Errc::InvalidArgument, "unknown variant '" + std::string(s) + "'");
}

KernelFamily parse_kernel_family(std::string_view s) {
  if (s == "learnable") return KernelFamily::Learnable;
  if (s == "linear_window" || s == "window") return KernelFamily::LinearWindow;
  throw Error(Errc::InvalidArgument, "unknown kernel family '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  require(dim >= 1, Errc::InvalidArgument, "dim must be >= 1");
  require(grid_points >= 2, Errc::BadRange, "grid_points must be >= 2");
  require(hidden >= 1, Errc::InvalidArgument, "hidden width must be >= 1");
  require(branches >= 1, Errc::InvalidArgument, "need at least one kernel branch");
  require(nerf_levels >= 1, Errc::InvalidArgument, "nerf_levels must be >= 1");
  if (nerf_levels != 1)
    throw Error(Errc::UnsupportedLevels, "only one positional-encoding level is supported");
  require(out_channels >= 1, Errc::InvalidArgument, "out_channels must be >= 1");
  require(head_depth >= 1, Errc::InvalidArgument, "head_depth must be >= 1");
  require(grid_min < grid_max, Errc::BadRange, "grid_min must be < grid_max");
  if (processor == ProcessorKind::Mlp)
    require(processor_depth >= 1 && processor_width >= 1, Errc::InvalidArgument,
            "mlp processor needs depth and width >= 1");
  if (processor == ProcessorKind::TinyAttention)
    require(attention_heads >= 1 && hidden % attention_heads == 0, Errc::InvalidArgument,
            "attention heads must divide the hidden width");
  if (kernel == KernelFamily::LinearWindow)
    require(window.radius > 0.0 && window.scale > 0.0, Errc::InvalidArgument,
            "linear window needs positive radius and scale");
  require(!init_scales.empty(), Errc::InvalidArgument, "init_scales must not be empty");
}

// ---------------------------------------------------------------------------
// MLP

namespace {
constexpr double kGeluC = 0.7978845608028654;  // √(2/π)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_tanh(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_tanh_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

std::size_t Mlp::param_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

namespace {

DenseMatrix weight_view(std::span<const double> params, std::size_t offset, std::size_t in,
                        std::size_t out) {
  return DenseMatrix(in, out,
                     std::vector<double>(params.begin() + static_cast<long>(offset),
                                         params.begin() + static_cast<long>(offset + in * out)));
}

}  // namespace

DenseMatrix mlp_forward(const Mlp& mlp, std::span<const double> params, const DenseMatrix& x,
                        MlpCache* cache) {
  require(params.size() == mlp.param_count(), Errc::ShapeMismatch, "MLP parameter count");
  require(mlp.layers() >= 1 && x.cols() == mlp.widths.front(), Errc::ShapeMismatch,
          "MLP input width");
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  DenseMatrix cur = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l < mlp.layers(); ++l) {
    const std::size_t in = mlp.widths[l];
    const std::size_t out = mlp.widths[l + 1];
    DenseMatrix y = matmul(cur, weight_view(params, off, in, out));
    off += in * out;
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < out; ++c) y(r, c) += params[off + c];
    off += out;
    if (cache != nullptr) {
      cache->inputs.push_back(cur);
      cache->pre.push_back(y);
    }
    if (l + 1 < mlp.layers() && mlp.activation == Activation::GeluTanh)
      for (auto& v : y.values()) v = gelu_tanh(v);
    cur = std::move(y);
  }
  return cur;
}

DenseMatrix mlp_backward(const Mlp& mlp, std::span<const double> params, const MlpCache& cache,
                         const DenseMatrix& dy, std::span<double> grad) {
  require(grad.size() == mlp.param_count(), Errc::ShapeMismatch, "MLP gradient size");
  require(cache.inputs.size() == mlp.layers(), Errc::ShapeMismatch, "MLP cache is stale");
  std::vector<std::size_t> offsets(mlp.layers());
  std::size_t off = 0;
  for (std::size_t l = 0; l < mlp.layers(); ++l) {
    offsets[l] = off;
    off += mlp.widths[l] * mlp.widths[l + 1] + mlp.widths[l + 1];
  }
  DenseMatrix dpre = dy;
  DenseMatrix dx;
  for (std::size_t l = mlp.layers(); l-- > 0;) {
    const std::size_t in = mlp.widths[l];
    const std::size_t out = mlp.widths[l + 1];
    const DenseMatrix dw = matmul_tn(cache.inputs[l], dpre);
    double* gw = grad.data() + offsets[l];
    for (std::size_t i = 0; i < in * out; ++i) gw[i] += dw.values()[i];
    double* gb = gw + in * out;
    for (std::size_t r = 0; r < dpre.rows(); ++r)
      for (std::size_t c = 0; c < out; ++c) gb[c] += dpre(r, c);
    dx = matmul_nt(dpre, weight_view(params, offsets[l], in, out));
    if (l > 0) {
      if (mlp.activation == Activation::GeluTanh) {
        const auto& pre = cache.pre[l - 1].values();
        for (std::size_t i = 0; i < dx.values().size(); ++i)
          dx.values()[i] *= gelu_tanh_derivative(pre[i]);
      }
      dpre = std::move(dx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Parameter layout

void ParamLayout::add(std::string name, std::size_t length) {
  require(!contains(name), Errc::InvalidArgument, "duplicate segment '" + name + "'");
  segments_.push_back({std::move(name), total_, length});
  total_ += length;
}

const Segment& ParamLayout::find(std::string_view name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw Error(Errc::InvalidArgument, "no parameter segment '" + std::string(name) + "'");
}

bool ParamLayout::contains(std::string_view name) const {
  return std::any_of(segments_.begin(), segments_.end(),
                     [&](const Segment& s) { return s.name == name; });
}

std::span<double> ParamVector::segment(std::string_view name) {
  const auto& s = layout.find(name);
  return {values.data() + s.offset, s.length};
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const auto& s = layout.find(name);
  return {values.data() + s.offset, s.length};
}

std::vector<double> positional_encode(std::span<const double> x, std::size_t levels) {
  if (levels != 1)
    throw Error(Errc::UnsupportedLevels, "levels = " + std::to_string(levels) + " (only 1)");
  const std::size_t d = x.size();
  std::vector<double> out(3 * d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = x[j];
    out[d + j] = std::cos(x[j]);
    out[2 * d + j] = std::sin(x[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention processor

namespace {

struct AttentionCache {
  DenseMatrix x, q, k, v, o;
  std::vector<DenseMatrix> probs;  // per head, M x M
};

struct AttentionWeights {
  DenseMatrix wq, wk, wv, wo;
  std::span<const double> bo;
};

AttentionWeights attention_weights(std::span<const double> p, std::size_t h) {
  const std::size_t hh = h * h;
  return {weight_view(p, 0, h, h), weight_view(p, hh, h, h), weight_view(p, 2 * hh, h, h),
          weight_view(p, 3 * hh, h, h), p.subspan(4 * hh, h)};
}

DenseMatrix attention_forward(std::span<const double> p, const DenseMatrix& x, std::size_t heads,
                              AttentionCache* cache) {
  const std::size_t m = x.rows();
  const std::size_t h = x.cols();
  const std::size_t dk = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const AttentionWeights w = attention_weights(p, h);
  DenseMatrix q = matmul(x, w.wq);
  DenseMatrix k = matmul(x, w.wk);
  DenseMatrix v = matmul(x, w.wv);
  DenseMatrix o(m, h);
  std::vector<DenseMatrix> probs;
  for (std::size_t a = 0; a < heads; ++a) {
    const std::size_t c0 = a * dk;
    DenseMatrix pm(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q(i, c0 + c) * k(j, c0 + c);
        pm(i, j) = s * scale;
        mx = std::max(mx, pm(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        pm(i, j) = std::exp(pm(i, j) - mx);
        z += pm(i, j);
      }
      for (std::size_t j = 0; j < m; ++j) pm(i, j) /= z;
      for (std::size_t j = 0; j < m; ++j) {
        const double pij = pm(i, j);
        for (std::size_t c = 0; c < dk; ++c) o(i, c0 + c) += pij * v(j, c0 + c);
      }
    }
    probs.push_back(std::move(pm));
  }
  DenseMatrix y = matmul(o, w.wo);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < h; ++c) y(i, c) += x(i, c) + w.bo[c];
  if (cache != nullptr) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->probs = std::move(probs);
  }
  return y;
}

DenseMatrix attention_backward(std::span<const double> p, const AttentionCache& cache,
                               const DenseMatrix& dy, std::size_t heads, std::span<double> grad) {
  const std::size_t m = dy.rows();
  const std::size_t h = dy.cols();
  const std::size_t hh = h * h;
  const std::size_t dk = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const AttentionWeights w = attention_weights(p, h);

  auto accumulate = [&](std::size_t offset, const DenseMatrix& g) {
    for (std::size_t i = 0; i < g.values().size(); ++i) grad[offset + i] += g.values()[i];
  };
  accumulate(3 * hh, matmul_tn(cache.o, dy));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < h; ++c) grad[4 * hh + c] += dy(i, c);

  const DenseMatrix d_o = matmul_nt(dy, w.wo);
  DenseMatrix dq(m, h), dkm(m, h), dv(m, h);
  for (std::size_t a = 0; a < heads; ++a) {
    const std::size_t c0 = a * dk;
    const DenseMatrix& pm = cache.probs[a];
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> dp(m);
      double rowdot = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += d_o(i, c0 + c) * cache.v(j, c0 + c);
        dp[j] = s;
        rowdot += s * pm(i, j);
        for (std::size_t c = 0; c < dk; ++c) dv(j, c0 + c) += pm(i, j) * d_o(i, c0 + c);
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double ds = pm(i, j) * (dp[j] - rowdot) * scale;
        for (std::size_t c = 0; c < dk; ++c) {
          dq(i, c0 + c) += ds * cache.k(j, c0 + c);
          dkm(j, c0 + c) += ds * cache.q(i, c0 + c);
        }
      }
    }
  }
  accumulate(0, matmul_tn(cache.x, dq));
  accumulate(hh, matmul_tn(cache.x, dkm));
  accumulate(2 * hh, matmul_tn(cache.x, dv));
  DenseMatrix dx = dy;
  dx = add(dx, matmul_nt(dq, w.wq));
  dx = add(dx, matmul_nt(dkm, w.wk));
  dx = add(dx, matmul_nt(dv, w.wv));
  return dx;
}

// ---------------------------------------------------------------------------
// Separable grid-vs-cloud cross kernels

// K[g, i] = ∏_j F_j[g_j, i], multiplied in axis order so that the result is
// bitwise equal to product_kernel_eval.
DenseMatrix separable_cross(const std::vector<DenseMatrix>& factors,
                            const std::vector<std::size_t>& grid_index, std::size_t m) {
  const std::size_t d = factors.size();
  const std::size_t n = factors.front().cols();
  DenseMatrix k(m, n);
  for (std::size_t g = 0; g < m; ++g) {
    const std::size_t* idx = grid_index.data() + g * d;
    for (std::size_t i = 0; i < n; ++i) {
      double v = 1.0;
      for (std::size_t j = 0; j < d; ++j) v *= factors[j](idx[j], i);
      k(g, i) = v;
    }
  }
  return k;
}

// G_j[p, i] = Σ_{g : g_j = p} dK[g, i] ∏_{k≠j} F_k[g_k, i]
std::vector<DenseMatrix> separable_cross_backward(const std::vector<DenseMatrix>& factors,
                                                  const std::vector<std::size_t>& grid_index,
                                                  const DenseMatrix& dk) {
  const std::size_t d = factors.size();
  const std::size_t n = dk.cols();
  std::vector<DenseMatrix> out;
  for (const auto& f : factors) out.emplace_back(f.rows(), f.cols());
  for (std::size_t g = 0; g < dk.rows(); ++g) {
    const std::size_t* idx = grid_index.data() + g * d;
    for (std::size_t i = 0; i < n; ++i) {
      const double dgi = dk(g, i);
      if (dgi == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        double prod = dgi;
        for (std::size_t k = 0; k < d; ++k)
          if (k != j) prod *= factors[k](idx[k], i);
        out[j](idx[j], i) += prod;
      }
    }
  }
  return out;
}

void copy_columns(const DenseMatrix& src, DenseMatrix& dst, std::size_t col0) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, col0 + c) = src(r, c);
}

DenseMatrix take_columns(const DenseMatrix& src, std::size_t col0, std::size_t count) {
  DenseMatrix out(src.rows(), count);
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = src(r, col0 + c);
  return out;
}

LatentTensor apply_except(std::span<const DenseMatrix> mats, const LatentTensor& t,
                          std::size_t skip) {
  LatentTensor cur = t;
  for (std::size_t j = 0; j < mats.size(); ++j)
    if (j != skip) cur = mode_apply(cur, j, mats[j]);
  return cur;
}

double frobenius_inner(const DenseMatrix& a, const DenseMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Per-branch grid operators

class IknoModel::BranchOperators {
 public:
  // Both constructions are (I - αK_1)^{-1} on one axis. Routing TP through
  // the vanilla code keeps the two bitwise identical over training.
  static OperatorVariant effective_variant(const ModelConfig& c) {
    return c.dim == 1 && c.variant == OperatorVariant::TP ? OperatorVariant::Vanilla : c.variant;
  }

  BranchOperators(const IknoModel& model, const ParamVector& params)
      : variant_(effective_variant(model.config_)),
        order_(model.config_.truncation_order),
        learnable_(model.config_.kernel == KernelFamily::Learnable),
        kernel_(model.kernel_params(params)) {
    const LatentGrid& grid = model.grid_;
    if (learnable_) {
      for (const auto& b : kernel_.branches) {
        Branch br;
        for (std::size_t j = 0; j < grid.dim(); ++j)
          br.grams.push_back(axis_gram(b.axes[j], grid.axis(j)));
        prepare(br, b.alpha);
        branches_.push_back(std::move(br));
      }
      return;
    }
    // Fixed linear window. The grid operator of the truncated and vanilla
    // variants uses the full (non-separable) window Gram; the TP variant
    // uses the tensor product of 1-D window resolvents.
    const LinearWindowKernel& w = model.config_.window;
    Branch br;
    if (variant_ == OperatorVariant::TP) {
      for (std::size_t j = 0; j < grid.dim(); ++j)
        br.grams.push_back(axis_gram_linear_window(w, grid.axis(j)));
      prepare(br, w.alpha);
    } else {
      const std::size_t m = grid.size();
      if (m > kDefaultNaiveCap)
        throw Error(Errc::CapExceeded, "dense window operator needs M <= " +
                                           std::to_string(kDefaultNaiveCap));
      dense_k_ = cross_kernel_linear_window(w, model.grid_cloud_, model.grid_cloud_);
      if (variant_ == OperatorVariant::Vanilla) {
        DenseMatrix a = dense_k_;
        for (auto& v : a.values()) v *= -w.alpha;
        for (std::size_t i = 0; i < m; ++i) a(i, i) += 1.0;
        dense_r_ = dense_inverse(a, kSingularityTolerance);
        dense_rt_ = transpose(dense_r_);
      }
    }
    window_alpha_ = w.alpha;
    branches_.assign(model.config_.branches, br);
  }

  const MultiScaleKernelParams& kernel() const noexcept { return kernel_; }
  const std::vector<DenseMatrix>& grams(std::size_t q) const { return branches_[q].grams; }

  LatentTensor apply(std::size_t q, const LatentTensor& t) const { return run(q, t, false); }
  LatentTensor apply_transpose(std::size_t q, const LatentTensor& t) const {
    return run(q, t, true);
  }

  /// Given e, z = R e and dz = dL/dz, accumulates dL/dK_j into dgram and
  /// dL/dα into dalpha. Learnable family only.
  void backward(std::size_t q, const LatentTensor& e, const LatentTensor& z,
                const LatentTensor& dz, std::vector<DenseMatrix>& dgram, double& dalpha) const {
    const Branch& br = branches_[q];
    const double alpha = kernel_.branches[q].alpha;
    const std::size_t d = br.grams.size();
    switch (variant_) {
      case OperatorVariant::Vanilla: {
        // dR = R (dα K + α dK) R, so dL = ⟨Rᵀdz, (dα K + α dK) z⟩.
        const LatentTensor a = apply_transpose(q, dz);
        dalpha += inner(a, kron_apply(br.grams, z));
        for (std::size_t j = 0; j < d; ++j) {
          const DenseMatrix c = mode_contract(a, apply_except(br.grams, z, j), j);
          for (std::size_t i = 0; i < c.values().size(); ++i)
            dgram[j].values()[i] += alpha * c.values()[i];
        }
        break;
      }
      case OperatorVariant::TP: {
        for (std::size_t j = 0; j < d; ++j) {
          const DenseMatrix c = mode_contract(dz, apply_except(br.factors, e, j), j);
          const DenseMatrix dj = matmul(matmul(br.factors_t[j], c), br.factors_t[j]);
          dalpha += frobenius_inner(dj, br.grams[j]);
          for (std::size_t i = 0; i < dj.values().size(); ++i)
            dgram[j].values()[i] += alpha * dj.values()[i];
        }
        break;
      }
      case OperatorVariant::Truncated: {
        // s_0 = e, s_{k+1} = e + α K s_k, z = s_p
        std::vector<LatentTensor> s{e};
        for (std::size_t k = 0; k + 1 < order_; ++k) {
          LatentTensor next = kron_apply(br.grams, s.back());
          for (std::size_t i = 0; i < next.values().size(); ++i)
            next.values()[i] = e.values()[i] + alpha * next.values()[i];
          s.push_back(std::move(next));
        }
        LatentTensor ds = dz;
        for (std::size_t k = order_; k-- > 0;) {
          dalpha += inner(ds, kron_apply(br.grams, s[k]));
          for (std::size_t j = 0; j < d; ++j) {
            const DenseMatrix c = mode_contract(ds, apply_except(br.grams, s[k], j), j);
            for (std::size_t i = 0; i < c.values().size(); ++i)
              dgram[j].values()[i] += alpha * c.values()[i];
          }
          ds = kron_apply(br.grams, ds);
          for (auto& v : ds.values()) v *= alpha;
        }
        break;
      }
    }
  }

 private:
  struct Branch {
    std::vector<DenseMatrix> grams;
    ResolventVanilla vanilla;
    std::vector<DenseMatrix> factors;    // TP: (I - αK_j)^{-1}
    std::vector<DenseMatrix> factors_t;  // their transposes
  };

  void prepare(Branch& br, double alpha) const {
    switch (variant_) {
      case OperatorVariant::Vanilla:
        br.vanilla = build_vanilla(br.grams, alpha);
        break;
      case OperatorVariant::TP: {
        ResolventTP tp = build_tp(br.grams, alpha);
        br.factors = std::move(tp.axis_inverses);
        for (const auto& f : br.factors) br.factors_t.push_back(transpose(f));
        break;
      }
      case OperatorVariant::Truncated:
        break;
    }
  }

  LatentTensor run(std::size_t q, const LatentTensor& t, bool transposed) const {
    const Branch& br = branches_[q];
    const bool dense = !learnable_ && variant_ != OperatorVariant::TP;
    const double alpha = learnable_ ? kernel_.branches[q].alpha : window_alpha_;
    if (variant_ == OperatorVariant::TP)
      return kron_apply(transposed ? br.factors_t : br.factors, t);
    if (variant_ == OperatorVariant::Vanilla) {
      if (dense)
        return LatentTensor::from_matrix(t.axis_sizes(),
                                         matmul(transposed ? dense_rt_ : dense_r_, t.to_matrix()));
      return apply_vanilla(br.vanilla, t);  // U·D·Uᵀ is symmetric by construction
    }
    // Truncated; K is symmetric, so the transpose is the same recursion.
    if (dense) {
      const DenseMatrix tm = t.to_matrix();
      DenseMatrix s = tm;
      for (std::size_t k = 0; k < order_; ++k) s = add(tm, matmul(dense_k_, s), alpha);
      return LatentTensor::from_matrix(t.axis_sizes(), s);
    }
    return apply_truncated(TruncatedPropagator{br.grams, alpha, order_}, t);
  }

  OperatorVariant variant_;
  std::size_t order_;
  bool learnable_;
  MultiScaleKernelParams kernel_;
  std::vector<Branch> branches_;
  DenseMatrix dense_k_, dense_r_, dense_rt_;
  double window_alpha_ = 0.0;
};

// ---------------------------------------------------------------------------
// Forward trace

struct IknoModel::Trace {
  DenseMatrix features;
  MlpCache tokenizer;
  DenseMatrix tokens;

  std::vector<std::vector<DenseMatrix>> enc_factors;  // [q][j], N_j x n
  std::vector<DenseMatrix> enc_kgp;                   // [q], M x n
  std::vector<LatentTensor> enc_e, enc_z;
  MlpCache enc_fusion;
  DenseMatrix latent;

  MlpCache processor;
  AttentionCache attention;
  DenseMatrix processed;

  std::vector<std::vector<DenseMatrix>> dec_factors;  // [q][j], N_j x n_q
  std::vector<DenseMatrix> dec_kgq;                   // [q], M x n_q
  std::vector<LatentTensor> dec_y;
  MlpCache dec_fusion;
  MlpCache head;
};

// ---------------------------------------------------------------------------
// Model

IknoModel::IknoModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  grid_ = grid_linspace(config_.dim, config_.grid_points, config_.grid_min, config_.grid_max);
  grid_cloud_ = grid_.as_cloud();
  const std::size_t d = config_.dim;
  grid_index_.resize(grid_.size() * d);
  for (std::size_t g = 0; g < grid_.size(); ++g) {
    const auto idx = grid_.multi_index(g);
    std::copy(idx.begin(), idx.end(), grid_index_.begin() + static_cast<long>(g * d));
  }

  const std::size_t h = config_.hidden;
  const std::size_t q = config_.branches;
  tokenizer_ = Mlp{{3 * d + config_.in_channels, h, h}, Activation::GeluTanh};
  fusion_ = Mlp{{q * h, h}, Activation::None};
  if (config_.processor == ProcessorKind::Mlp) {
    processor_mlp_.widths = {h};
    for (std::size_t i = 0; i < config_.processor_depth; ++i)
      processor_mlp_.widths.push_back(config_.processor_width);
    processor_mlp_.widths.push_back(h);
  }
  head_.widths = {h};
  for (std::size_t i = 0; i + 1 < config_.head_depth; ++i) head_.widths.push_back(h);
  head_.widths.push_back(config_.out_channels);

  std::size_t processor_len = 0;
  if (config_.processor == ProcessorKind::Mlp) processor_len = processor_mlp_.param_count();
  if (config_.processor == ProcessorKind::TinyAttention) processor_len = 4 * h * h + h;

  layout_.add("tokenizer", tokenizer_.param_count());
  layout_.add("kernel", config_.kernel == KernelFamily::Learnable ? q * (3 * d + 1) : 0);
  layout_.add("encoder_fusion", fusion_.param_count());
  layout_.add("processor", processor_len);
  layout_.add("decoder_fusion", fusion_.param_count());
  layout_.add("head", head_.param_count());
}

std::size_t IknoModel::kernel_index_log_c(std::size_t q, std::size_t j) const {
  return layout_.find("kernel").offset + q * (3 * config_.dim + 1) + 3 * j;
}
std::size_t IknoModel::kernel_index_beta(std::size_t q, std::size_t j) const {
  return kernel_index_log_c(q, j) + 1;
}
std::size_t IknoModel::kernel_index_gamma(std::size_t q, std::size_t j) const {
  return kernel_index_log_c(q, j) + 2;
}
std::size_t IknoModel::kernel_index_alpha(std::size_t q) const {
  return layout_.find("kernel").offset + q * (3 * config_.dim + 1) + 3 * config_.dim;
}

namespace {

void init_mlp(const Mlp& mlp, std::span<double> out, Rng64& rng) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < mlp.layers(); ++l) {
    const std::size_t in = mlp.widths[l];
    const std::size_t n = in * mlp.widths[l + 1] + mlp.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < n; ++i) out[off + i] = rng.uniform(-bound, bound);
    off += n;
  }
}

void init_fusion(std::span<double> out, std::size_t branches, std::size_t h) {
  std::fill(out.begin(), out.end(), 0.0);
  const double w = 1.0 / static_cast<double>(branches);
  for (std::size_t q = 0; q < branches; ++q)
    for (std::size_t c = 0; c < h; ++c) out[(q * h + c) * h + c] = w;
}

}  // namespace

ParamVector IknoModel::init_params(std::uint64_t seed) const {
  ParamVector p;
  p.layout = layout_;
  p.values.assign(layout_.size(), 0.0);
  const std::size_t h = config_.hidden;

  Rng64 tok = Rng64::child(seed, 0);
  init_mlp(tokenizer_, p.segment("tokenizer"), tok);

  if (config_.kernel == KernelFamily::Learnable) {
    for (std::size_t q = 0; q < config_.branches; ++q) {
      double scale = q < config_.init_scales.size()
                         ? config_.init_scales[q]
                         : config_.init_scales.back() *
                               std::pow(2.0, static_cast<double>(q + 1 - config_.init_scales.size()));
      for (std::size_t j = 0; j < config_.dim; ++j) {
        p.values[kernel_index_log_c(q, j)] = 0.0;
        p.values[kernel_index_beta(q, j)] = scale;
        p.values[kernel_index_gamma(q, j)] = scale;
      }
      p.values[kernel_index_alpha(q)] = config_.init_alpha;
    }
  }

  init_fusion(p.segment("encoder_fusion"), config_.branches, h);
  init_fusion(p.segment("decoder_fusion"), config_.branches, h);

  Rng64 proc = Rng64::child(seed, 1);
  if (config_.processor == ProcessorKind::Mlp) init_mlp(processor_mlp_, p.segment("processor"), proc);
  if (config_.processor == ProcessorKind::TinyAttention) {
    auto seg = p.segment("processor");
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (auto& v : seg) v = proc.uniform(-bound, bound);
  }

  Rng64 head = Rng64::child(seed, 2);
  init_mlp(head_, p.segment("head"), head);
  return p;
}

MultiScaleKernelParams IknoModel::kernel_params(const ParamVector& params) const {
  require(params.values.size() == layout_.size(), Errc::ShapeMismatch,
          "parameter vector does not match the model layout");
  MultiScaleKernelParams k;
  for (std::size_t q = 0; q < config_.branches; ++q) {
    KernelBranch b;
    if (config_.kernel == KernelFamily::LinearWindow) {
      b.alpha = config_.window.alpha;
    } else {
      for (std::size_t j = 0; j < config_.dim; ++j)
        b.axes.push_back({std::exp(params.values[kernel_index_log_c(q, j)]),
                          params.values[kernel_index_beta(q, j)],
                          params.values[kernel_index_gamma(q, j)]});
      b.alpha = params.values[kernel_index_alpha(q)];
    }
    k.branches.push_back(std::move(b));
  }
  k.validate();
  return k;
}

void IknoModel::check_input(const PointCloud& input) const {
  require(input.size() == 0 || input.dim == config_.dim, Errc::DimMismatch,
          "input cloud dimension differs from the model");
  require(input.channels == config_.in_channels, Errc::ChannelMismatch,
          "input carries " + std::to_string(input.channels) + " condition channels, model expects " +
              std::to_string(config_.in_channels));
}

void IknoModel::check_queries(const PointCloud& queries) const {
  require(queries.size() == 0 || queries.dim == config_.dim, Errc::DimMismatch,
          "query cloud dimension differs from the model");
}

namespace {

DenseMatrix token_features(const PointCloud& input, std::size_t dim, std::size_t channels) {
  const std::size_t n = input.size();
  DenseMatrix f(n, 3 * dim + channels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto enc = positional_encode(input.point(i));
    std::copy(enc.begin(), enc.end(), f.row(i).begin());
    const auto a = input.channel_row(i);
    std::copy(a.begin(), a.end(), f.row(i).begin() + static_cast<long>(3 * dim));
  }
  return f;
}

}  // namespace

DenseMatrix IknoModel::tokenize(const ParamVector& params, const PointCloud& input) const {
  check_input(input);
  return mlp_forward(tokenizer_, params.segment("tokenizer"),
                     token_features(input, config_.dim, config_.in_channels));
}

DenseMatrix IknoModel::encode_impl(const ParamVector& params, const BranchOperators& ops,
                                   const DenseMatrix& tokens, const PointCloud& input,
                                   Trace* trace) const {
  const std::size_t h = config_.hidden;
  const std::size_t m = grid_.size();
  const std::size_t n = input.size();
  require(tokens.rows() == n && tokens.cols() == h, Errc::ShapeMismatch,
          "token matrix must be n x hidden");
  const auto sizes = grid_.axis_sizes();
  DenseMatrix concat(m, config_.branches * h);
  for (std::size_t q = 0; q < config_.branches; ++q) {
    DenseMatrix kgp;
    std::vector<DenseMatrix> factors;
    if (config_.kernel == KernelFamily::Learnable) {
      if (n > 0) {
        for (std::size_t j = 0; j < config_.dim; ++j)
          factors.push_back(axis_cross(ops.kernel().branches[q].axes[j], grid_.axis(j), input, j));
        kgp = separable_cross(factors, grid_index_, m);
      } else {
        kgp = DenseMatrix(m, 0);
      }
    } else {
      kgp = n > 0 ? cross_kernel_linear_window(config_.window, grid_cloud_, input)
                  : DenseMatrix(m, 0);
    }
    LatentTensor e = LatentTensor::from_matrix(sizes, matmul(kgp, tokens));
    LatentTensor z = ops.apply(q, e);
    copy_columns(z.to_matrix(), concat, q * h);
    if (trace != nullptr) {
      trace->enc_factors.push_back(std::move(factors));
      trace->enc_kgp.push_back(std::move(kgp));
      trace->enc_e.push_back(std::move(e));
      trace->enc_z.push_back(std::move(z));
    }
  }
  return mlp_forward(fusion_, params.segment("encoder_fusion"), concat,
                     trace != nullptr ? &trace->enc_fusion : nullptr);
}

DenseMatrix IknoModel::process_impl(const ParamVector& params, const DenseMatrix& latent,
                                    Trace* trace) const {
  require(latent.rows() == grid_.size() && latent.cols() == config_.hidden, Errc::ShapeMismatch,
          "latent matrix must be M x hidden");
  switch (config_.processor) {
    case ProcessorKind::Identity:
      return latent;
    case ProcessorKind::Mlp: {
      DenseMatrix y = mlp_forward(processor_mlp_, params.segment("processor"), latent,
                                  trace != nullptr ? &trace->processor : nullptr);
      return add(latent, y);
    }
    case ProcessorKind::TinyAttention:
      return attention_forward(params.segment("processor"), latent, config_.attention_heads,
                               trace != nullptr ? &trace->attention : nullptr);
  }
  return latent;
}

DenseMatrix IknoModel::decode_impl(const ParamVector& params, const BranchOperators& ops,
                                   const DenseMatrix& latent, const PointCloud& queries,
                                   Trace* trace) const {
  const std::size_t h = config_.hidden;
  const std::size_t m = grid_.size();
  const std::size_t nq = queries.size();
  require(latent.rows() == m && latent.cols() == h, Errc::ShapeMismatch,
          "latent matrix must be M x hidden");
  const LatentTensor lt = LatentTensor::from_matrix(grid_.axis_sizes(), latent);
  DenseMatrix concat(nq, config_.branches * h);
  for (std::size_t q = 0; q < config_.branches; ++q) {
    DenseMatrix kgq;
    std::vector<DenseMatrix> factors;
    if (config_.kernel == KernelFamily::Learnable) {
      if (nq > 0) {
        for (std::size_t j = 0; j < config_.dim; ++j)
          factors.push_back(axis_cross(ops.kernel().branches[q].axes[j], grid_.axis(j), queries, j));
        kgq = separable_cross(factors, grid_index_, m);
      } else {
        kgq = DenseMatrix(m, 0);
      }
    } else {
      kgq = nq > 0 ? cross_kernel_linear_window(config_.window, grid_cloud_, queries)
                   : DenseMatrix(m, 0);
    }
    LatentTensor y = ops.apply(q, lt);
    copy_columns(matmul_tn(kgq, y.to_matrix()), concat, q * h);
    if (trace != nullptr) {
      trace->dec_factors.push_back(std::move(factors));
      trace->dec_kgq.push_back(std::move(kgq));
      trace->dec_y.push_back(std::move(y));
    }
  }
  const DenseMatrix fused = mlp_forward(fusion_, params.segment("decoder_fusion"), concat,
                                        trace != nullptr ? &trace->dec_fusion : nullptr);
  return mlp_forward(head_, params.segment("head"), fused,
                     trace != nullptr ? &trace->head : nullptr);
}

DenseMatrix IknoModel::encode(const ParamVector& params, const DenseMatrix& tokens,
                              const PointCloud& input) const {
  check_input(input);
  const BranchOperators ops(*this, params);
  return encode_impl(params, ops, tokens, input, nullptr);
}

DenseMatrix IknoModel::process(const ParamVector& params, const DenseMatrix& latent) const {
  return process_impl(params, latent, nullptr);
}

DenseMatrix IknoModel::decode(const ParamVector& params, const DenseMatrix& latent,
                              const PointCloud& queries) const {
  check_queries(queries);
  const BranchOperators ops(*this, params);
  return decode_impl(params, ops, latent, queries, nullptr);
}

DenseMatrix IknoModel::forward(const ParamVector& params, const PointCloud& input,
                               const PointCloud& queries) const {
  check_input(input);
  check_queries(queries);
  const BranchOperators ops(*this, params);
  const DenseMatrix tokens = tokenize(params, input);
  const DenseMatrix latent = encode_impl(params, ops, tokens, input, nullptr);
  const DenseMatrix processed = process_impl(params, latent, nullptr);
  return decode_impl(params, ops, processed, queries, nullptr);
}

double IknoModel::loss_and_gradient(const ParamVector& params, const PointCloud& input,
                                    const PointCloud& queries, const DenseMatrix& target,
                                    std::span<double> grad) const {
  require(grad.size() == layout_.size(), Errc::ShapeMismatch, "gradient buffer size");
  check_input(input);
  check_queries(queries);
  require(target.rows() == queries.size() && target.cols() == config_.out_channels,
          Errc::ShapeMismatch, "target must be n_q x out_channels");

  const BranchOperators ops(*this, params);
  Trace tr;
  tr.features = token_features(input, config_.dim, config_.in_channels);
  tr.tokens = mlp_forward(tokenizer_, params.segment("tokenizer"), tr.features, &tr.tokenizer);
  tr.latent = encode_impl(params, ops, tr.tokens, input, &tr);
  tr.processed = process_impl(params, tr.latent, &tr);
  const DenseMatrix pred = decode_impl(params, ops, tr.processed, queries, &tr);

  const auto loss = relative_l2_loss(target.values(), pred.values());
  if (!loss) throw Error(Errc::ZeroTarget, "target norm is zero");

  auto seg_grad = [&](std::string_view name) {
    const auto& s = layout_.find(name);
    return grad.subspan(s.offset, s.length);
  };

  // dL/dŷ for L = ‖ŷ - y‖ / ‖y‖
  DenseMatrix dpred(pred.rows(), pred.cols());
  double diff_norm = 0.0, target_norm = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    const double r = pred.values()[i] - target.values()[i];
    diff_norm += r * r;
    target_norm += target.values()[i] * target.values()[i];
  }
  diff_norm = std::sqrt(diff_norm);
  target_norm = std::sqrt(target_norm);
  if (diff_norm > 0.0)
    for (std::size_t i = 0; i < pred.values().size(); ++i)
      dpred.values()[i] = (pred.values()[i] - target.values()[i]) / (diff_norm * target_norm);

  const std::size_t h = config_.hidden;
  const std::size_t d = config_.dim;
  const bool learnable = config_.kernel == KernelFamily::Learnable;
  const auto sizes = grid_.axis_sizes();
  const auto kp = ops.kernel();

  // per branch, per axis: gradient w.r.t. the axis Gram and the cross factors
  std::vector<std::vector<DenseMatrix>> dgram(config_.branches);
  std::vector<double> dalpha(config_.branches, 0.0);
  for (auto& g : dgram)
    for (std::size_t j = 0; j < d; ++j) g.emplace_back(grid_.axis(j).size(), grid_.axis(j).size());

  auto add_cross_grads = [&](std::size_t q, const std::vector<DenseMatrix>& factors,
                             const DenseMatrix& dk, const PointCloud& cloud) {
    const auto g = separable_cross_backward(factors, grid_index_, dk);
    for (std::size_t j = 0; j < d; ++j) {
      const auto& ax = grid_.axis(j);
      const auto& p = kp.branches[q].axes[j];
      double dc = 0.0, db = 0.0, dgm = 0.0;
      for (std::size_t a = 0; a < ax.size(); ++a)
        for (std::size_t i = 0; i < cloud.size(); ++i) {
          const double gi = g[j](a, i);
          if (gi == 0.0) continue;
          const AxisKernelGrad kg = axis_kernel_grad(p, ax[a], cloud.coord(i, j));
          dc += gi * kg.d_log_c;
          db += gi * kg.d_beta;
          dgm += gi * kg.d_gamma;
        }
      grad[kernel_index_log_c(q, j)] += dc;
      grad[kernel_index_beta(q, j)] += db;
      grad[kernel_index_gamma(q, j)] += dgm;
    }
  };

  // head and decoder fusion
  const DenseMatrix dfused =
      mlp_backward(head_, params.segment("head"), tr.head, dpred, seg_grad("head"));
  const DenseMatrix dconcat_dec = mlp_backward(fusion_, params.segment("decoder_fusion"),
                                               tr.dec_fusion, dfused, seg_grad("decoder_fusion"));

  const LatentTensor processed_t = LatentTensor::from_matrix(sizes, tr.processed);
  DenseMatrix dprocessed(grid_.size(), h);
  for (std::size_t q = 0; q < config_.branches; ++q) {
    const DenseMatrix dd = take_columns(dconcat_dec, q * h, h);  // n_q x h
    const LatentTensor dy = LatentTensor::from_matrix(sizes, matmul(tr.dec_kgq[q], dd));
    dprocessed = add(dprocessed, ops.apply_transpose(q, dy).to_matrix());
    if (learnable) {
      if (queries.size() > 0)
        add_cross_grads(q, tr.dec_factors[q], matmul_nt(tr.dec_y[q].to_matrix(), dd), queries);
      ops.backward(q, processed_t, tr.dec_y[q], dy, dgram[q], dalpha[q]);
    }
  }

  // processor
  DenseMatrix dlatent;
  switch (config_.processor) {
    case ProcessorKind::Identity:
      dlatent = dprocessed;
      break;
    case ProcessorKind::Mlp:
      dlatent = add(dprocessed, mlp_backward(processor_mlp_, params.segment("processor"),
                                             tr.processor, dprocessed, seg_grad("processor")));
      break;
    case ProcessorKind::TinyAttention:
      dlatent = attention_backward(params.segment("processor"), tr.attention, dprocessed,
                                   config_.attention_heads, seg_grad("processor"));
      break;
  }

  // encoder
  const DenseMatrix dconcat_enc = mlp_backward(fusion_, params.segment("encoder_fusion"),
                                               tr.enc_fusion, dlatent, seg_grad("encoder_fusion"));
  DenseMatrix dtokens(input.size(), h);
  for (std::size_t q = 0; q < config_.branches; ++q) {
    const LatentTensor dz = LatentTensor::from_matrix(sizes, take_columns(dconcat_enc, q * h, h));
    const DenseMatrix de = ops.apply_transpose(q, dz).to_matrix();
    if (input.size() > 0) dtokens = add(dtokens, matmul_tn(tr.enc_kgp[q], de));
    if (learnable) {
      if (input.size() > 0) add_cross_grads(q, tr.enc_factors[q], matmul_nt(de, tr.tokens), input);
      ops.backward(q, tr.enc_e[q], tr.enc_z[q], dz, dgram[q], dalpha[q]);
    }
  }
  if (input.size() > 0)
    mlp_backward(tokenizer_, params.segment("tokenizer"), tr.tokenizer, dtokens,
                 seg_grad("tokenizer"));

  // axis Grams → kernel parameters
  if (learnable) {
    for (std::size_t q = 0; q < config_.branches; ++q) {
      grad[kernel_index_alpha(q)] += dalpha[q];
      for (std::size_t j = 0; j < d; ++j) {
        const auto& ax = grid_.axis(j);
        const auto& p = kp.branches[q].axes[j];
        double dc = 0.0, db = 0.0, dgm = 0.0;
        for (std::size_t a = 0; a < ax.size(); ++a)
          for (std::size_t b = 0; b < ax.size(); ++b) {
            const double gi = dgram[q][j](a, b);
            const AxisKernelGrad kg = axis_kernel_grad(p, ax[a], ax[b]);
            dc += gi * kg.d_log_c;
            db += gi * kg.d_beta;
            dgm += gi * kg.d_gamma;
          }
        grad[kernel_index_log_c(q, j)] += dc;
        grad[kernel_index_beta(q, j)] += db;
        grad[kernel_index_gamma(q, j)] += dgm;
      }
    }
  }
  return *loss;
}

}  // namespace ikno
