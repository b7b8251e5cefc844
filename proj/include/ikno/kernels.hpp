#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ikno/linalg.hpp"

namespace ikno {

/// One-dimensional Gaussian + Laplace kernel
///   k(x, y) = c · (exp(-(β(x-y))²) + exp(-|γ(x-y)|)).
struct AxisKernelParams {
  double c = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  /// Throws InvalidArgument unless c > 0 and β, γ are nonzero and finite.
  void validate() const;
};

struct KernelBranch {
  std::vector<AxisKernelParams> axes;
  double alpha = -1.0;
};

struct MultiScaleKernelParams {
  std::vector<KernelBranch> branches;

  void validate() const;
};

/// Compactly supported window scale · max(1 - ‖x-y‖₂ / r, 0), with the fixed
/// propagation coefficient used alongside it.
struct LinearWindowKernel {
  double radius = 0.2;
  double scale = 1.0;
  double alpha = -0.15;
};

/// Scattered points in d dimensions with optional per-point channels.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> coords;  // count x dim, row-major
  std::size_t channels = 0;
  std::vector<double> values;  // count x channels, row-major

  PointCloud() = default;
  PointCloud(std::size_t dim, std::vector<double> coords, std::size_t channels = 0,
             std::vector<double> values = {});

  std::size_t size() const noexcept { return dim == 0 ? 0 : coords.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }
  std::span<const double> channel_row(std::size_t i) const {
    return {values.data() + i * channels, channels};
  }
  double coord(std::size_t i, std::size_t j) const { return coords[i * dim + j]; }

  /// New cloud with rows reordered as `perm[k]` → row k.
  PointCloud permuted(std::span<const std::size_t> perm) const;
  /// New cloud holding only rows `rows`.
  PointCloud subset(std::span<const std::size_t> rows) const;
};

/// Product grid with per-axis coordinates; points enumerate lexicographically
/// with axis 1 slowest.
class LatentGrid {
 public:
  LatentGrid() = default;
  LatentGrid(std::vector<std::vector<double>> axes, double lo, double hi);

  std::size_t dim() const noexcept { return axes_.size(); }
  const std::vector<double>& axis(std::size_t j) const { return axes_[j]; }
  const std::vector<std::vector<double>>& axes() const noexcept { return axes_; }
  std::vector<std::size_t> axis_sizes() const;
  std::size_t size() const noexcept;  // M
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

  /// Per-axis indices of grid point g.
  std::vector<std::size_t> multi_index(std::size_t g) const;
  std::vector<double> point(std::size_t g) const;
  PointCloud as_cloud() const;

 private:
  std::vector<std::vector<double>> axes_;
  double lo_ = -1.0;
  double hi_ = 1.0;
};

/// L equispaced points per axis on [lo, hi] including both endpoints.
LatentGrid grid_linspace(std::size_t dim, std::size_t points_per_axis, double lo = -1.0,
                         double hi = 1.0);

double axis_kernel_eval(const AxisKernelParams& p, double x, double y);

/// Value and partial derivatives with respect to (log c, β, γ).
struct AxisKernelGrad {
  double value;
  double d_log_c;
  double d_beta;
  double d_gamma;
};
AxisKernelGrad axis_kernel_grad(const AxisKernelParams& p, double x, double y);

double product_kernel_eval(std::span<const AxisKernelParams> axes, std::span<const double> x,
                           std::span<const double> y);

double linear_window_eval(const LinearWindowKernel& k, std::span<const double> x,
                          std::span<const double> y);
/// One-dimensional restriction max(1 - |x-y|/r, 0) · scale.
double linear_window_eval_1d(const LinearWindowKernel& k, double x, double y);

struct GramDiagnostics {
  std::size_t duplicate_pairs = 0;  // non-zero: Gram is only semi-definite
};

/// (K_j)_pq = k_j(y_p, y_q). Duplicated coordinates are reported through
/// `diag` rather than rejected.
DenseMatrix axis_gram(const AxisKernelParams& p, std::span<const double> coords,
                      GramDiagnostics* diag = nullptr, Exec exec = Exec::Parallel);

/// Gram of the 1-D linear window on one axis.
DenseMatrix axis_gram_linear_window(const LinearWindowKernel& k, std::span<const double> coords);

/// Rows × cols matrix of product-kernel evaluations.
DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const PointCloud& rows,
                         const PointCloud& cols, Exec exec = Exec::Parallel);
DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const LatentGrid& rows,
                         const PointCloud& cols, Exec exec = Exec::Parallel);
DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const PointCloud& rows,
                         const LatentGrid& cols, Exec exec = Exec::Parallel);

/// Rows × cols matrix of linear-window evaluations.
DenseMatrix cross_kernel_linear_window(const LinearWindowKernel& k, const PointCloud& rows,
                                       const PointCloud& cols, Exec exec = Exec::Parallel);

/// Per-axis factor of a grid-vs-cloud cross kernel: N_j x n matrix with
/// entries k_j(grid_j[p], cloud_i[j]). The product-kernel entry for grid
/// point g and cloud point i is ∏_j factor_j(g_j, i).
DenseMatrix axis_cross(const AxisKernelParams& p, std::span<const double> grid_axis,
                       const PointCloud& cloud, std::size_t axis);

}  // namespace ikno
