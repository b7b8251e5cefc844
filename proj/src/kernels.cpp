#include "ikno/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ikno/error.hpp"

namespace ikno {

void AxisKernelParams::validate() const {
  require(std::isfinite(c) && c > 0.0, Errc::InvalidArgument, "kernel amplitude c must be > 0");
  require(std::isfinite(beta) && beta != 0.0, Errc::InvalidArgument, "kernel beta must be nonzero");
  require(std::isfinite(gamma) && gamma != 0.0, Errc::InvalidArgument,
          "kernel gamma must be nonzero");
}

void MultiScaleKernelParams::validate() const {
  require(!branches.empty(), Errc::InvalidArgument, "at least one kernel branch is required");
  for (const auto& b : branches) {
    require(std::isfinite(b.alpha), Errc::InvalidArgument, "branch alpha must be finite");
    for (const auto& a : b.axes) a.validate();
  }
}

PointCloud::PointCloud(std::size_t d, std::vector<double> c, std::size_t ch, std::vector<double> v)
    : dim(d), coords(std::move(c)), channels(ch), values(std::move(v)) {
  require(dim > 0, Errc::InvalidArgument, "point cloud dimension must be positive");
  require(coords.size() % dim == 0, Errc::ShapeMismatch, "coordinate count not divisible by dim");
  require(values.size() == size() * channels, Errc::ShapeMismatch,
          "channel values do not match point count");
}

PointCloud PointCloud::permuted(std::span<const std::size_t> perm) const {
  require(perm.size() == size(), Errc::ShapeMismatch, "permutation length");
  return subset(perm);
}

PointCloud PointCloud::subset(std::span<const std::size_t> rows) const {
  PointCloud out;
  out.dim = dim;
  out.channels = channels;
  out.coords.reserve(rows.size() * dim);
  out.values.reserve(rows.size() * channels);
  for (auto r : rows) {
    require(r < size(), Errc::InvalidArgument, "row index out of range");
    auto p = point(r);
    out.coords.insert(out.coords.end(), p.begin(), p.end());
    auto v = channel_row(r);
    out.values.insert(out.values.end(), v.begin(), v.end());
  }
  return out;
}

LatentGrid::LatentGrid(std::vector<std::vector<double>> axes, double lo, double hi)
    : axes_(std::move(axes)), lo_(lo), hi_(hi) {
  require(!axes_.empty(), Errc::InvalidArgument, "grid needs at least one axis");
  for (const auto& a : axes_) {
    require(a.size() >= 2, Errc::InvalidArgument, "every grid axis needs >= 2 points");
    for (std::size_t i = 1; i < a.size(); ++i)
      require(a[i] > a[i - 1], Errc::InvalidArgument, "grid coordinates must increase strictly");
    require(a.front() >= lo_ && a.back() <= hi_, Errc::BadRange, "grid coordinates leave [lo, hi]");
  }
}

std::vector<std::size_t> LatentGrid::axis_sizes() const {
  std::vector<std::size_t> s;
  s.reserve(axes_.size());
  for (const auto& a : axes_) s.push_back(a.size());
  return s;
}

std::size_t LatentGrid::size() const noexcept {
  if (axes_.empty()) return 0;
  std::size_t m = 1;
  for (const auto& a : axes_) m *= a.size();
  return m;
}

std::vector<std::size_t> LatentGrid::multi_index(std::size_t g) const {
  std::vector<std::size_t> idx(axes_.size());
  for (std::size_t j = axes_.size(); j-- > 0;) {
    idx[j] = g % axes_[j].size();
    g /= axes_[j].size();
  }
  return idx;
}

std::vector<double> LatentGrid::point(std::size_t g) const {
  const auto idx = multi_index(g);
  std::vector<double> p(axes_.size());
  for (std::size_t j = 0; j < axes_.size(); ++j) p[j] = axes_[j][idx[j]];
  return p;
}

PointCloud LatentGrid::as_cloud() const {
  std::vector<double> coords;
  coords.reserve(size() * dim());
  for (std::size_t g = 0; g < size(); ++g) {
    const auto p = point(g);
    coords.insert(coords.end(), p.begin(), p.end());
  }
  return PointCloud(dim(), std::move(coords));
}

LatentGrid grid_linspace(std::size_t dim, std::size_t points_per_axis, double lo, double hi) {
  require(dim >= 1, Errc::InvalidArgument, "grid dimension must be >= 1");
  require(points_per_axis >= 2, Errc::BadRange, "need at least 2 points per axis");
  require(lo < hi, Errc::BadRange, "grid range requires lo < hi");
  std::vector<double> axis(points_per_axis);
  const double step = (hi - lo) / static_cast<double>(points_per_axis - 1);
  for (std::size_t i = 0; i < points_per_axis; ++i) axis[i] = lo + step * static_cast<double>(i);
  axis.back() = hi;
  return LatentGrid(std::vector<std::vector<double>>(dim, axis), lo, hi);
}

double axis_kernel_eval(const AxisKernelParams& p, double x, double y) {
  // |x-y| makes the expression bitwise symmetric in (x, y)
  const double r = std::abs(x - y);
  const double g = p.beta * r;
  return p.c * (std::exp(-(g * g)) + std::exp(-std::abs(p.gamma * r)));
}

AxisKernelGrad axis_kernel_grad(const AxisKernelParams& p, double x, double y) {
  const double r = std::abs(x - y);
  const double g = p.beta * r;
  const double gauss = std::exp(-(g * g));
  const double lap = std::exp(-std::abs(p.gamma * r));
  const double value = p.c * (gauss + lap);
  const double sign_gamma = p.gamma > 0.0 ? 1.0 : -1.0;
  return {value, value, p.c * gauss * (-2.0 * p.beta * r * r), p.c * lap * (-r * sign_gamma)};
}

double product_kernel_eval(std::span<const AxisKernelParams> axes, std::span<const double> x,
                           std::span<const double> y) {
  require(axes.size() == x.size() && x.size() == y.size(), Errc::DimMismatch,
          "product kernel needs one axis parameter set per coordinate");
  double k = 1.0;
  for (std::size_t j = 0; j < axes.size(); ++j) k *= axis_kernel_eval(axes[j], x[j], y[j]);
  return k;
}

double linear_window_eval(const LinearWindowKernel& k, std::span<const double> x,
                          std::span<const double> y) {
  require(x.size() == y.size(), Errc::DimMismatch, "linear window points differ in dimension");
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - y[j];
    s += d * d;
  }
  return k.scale * std::max(1.0 - std::sqrt(s) / k.radius, 0.0);
}

double linear_window_eval_1d(const LinearWindowKernel& k, double x, double y) {
  return k.scale * std::max(1.0 - std::abs(x - y) / k.radius, 0.0);
}

DenseMatrix axis_gram(const AxisKernelParams& p, std::span<const double> coords,
                      GramDiagnostics* diag, Exec exec) {
  p.validate();
  const std::size_t n = coords.size();
  DenseMatrix k(n, n);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && n >= 64)
  for (long i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) k(i, j) = axis_kernel_eval(p, coords[i], coords[j]);
  if (diag != nullptr) {
    diag->duplicate_pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (coords[i] == coords[j]) ++diag->duplicate_pairs;
  }
  return k;
}

DenseMatrix axis_gram_linear_window(const LinearWindowKernel& k, std::span<const double> coords) {
  const std::size_t n = coords.size();
  DenseMatrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = linear_window_eval_1d(k, coords[i], coords[j]);
  return g;
}

DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const PointCloud& rows,
                         const PointCloud& cols, Exec exec) {
  require(rows.dim == axes.size() && cols.dim == axes.size(), Errc::DimMismatch,
          "cross kernel point sets must match the kernel dimension");
  for (const auto& a : axes) a.validate();
  const std::size_t nr = rows.size();
  const std::size_t nc = cols.size();
  DenseMatrix k(nr, nc);
  const long lr = static_cast<long>(nr);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && nr * nc >= 4096)
  for (long r = 0; r < lr; ++r) {
    const auto x = rows.point(static_cast<std::size_t>(r));
    for (std::size_t c = 0; c < nc; ++c) k(r, c) = product_kernel_eval(axes, x, cols.point(c));
  }
  return k;
}

DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const LatentGrid& rows,
                         const PointCloud& cols, Exec exec) {
  return cross_kernel(axes, rows.as_cloud(), cols, exec);
}

DenseMatrix cross_kernel(std::span<const AxisKernelParams> axes, const PointCloud& rows,
                         const LatentGrid& cols, Exec exec) {
  return cross_kernel(axes, rows, cols.as_cloud(), exec);
}

DenseMatrix cross_kernel_linear_window(const LinearWindowKernel& k, const PointCloud& rows,
                                       const PointCloud& cols, Exec exec) {
  require(rows.dim == cols.dim, Errc::DimMismatch, "point sets differ in dimension");
  const std::size_t nr = rows.size();
  const std::size_t nc = cols.size();
  DenseMatrix out(nr, nc);
  const long lr = static_cast<long>(nr);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && nr * nc >= 4096)
  for (long r = 0; r < lr; ++r) {
    const auto x = rows.point(static_cast<std::size_t>(r));
    for (std::size_t c = 0; c < nc; ++c) out(r, c) = linear_window_eval(k, x, cols.point(c));
  }
  return out;
}

DenseMatrix axis_cross(const AxisKernelParams& p, std::span<const double> grid_axis,
                       const PointCloud& cloud, std::size_t axis) {
  require(axis < cloud.dim, Errc::DimMismatch, "axis outside the cloud dimension");
  const std::size_t n = grid_axis.size();
  const std::size_t m = cloud.size();
  DenseMatrix a(n, m);
  for (std::size_t p_ = 0; p_ < n; ++p_)
    for (std::size_t i = 0; i < m; ++i)
      a(p_, i) = axis_kernel_eval(p, grid_axis[p_], cloud.coord(i, axis));
  return a;
}

}  // namespace ikno
