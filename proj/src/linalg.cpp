#include "ikno/linalg.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ikno/error.hpp"

namespace ikno {

// ---------------------------------------------------------------------------
// DenseMatrix

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  require(values_.size() == rows_ * cols_, Errc::ShapeMismatch,
          "matrix storage has " + std::to_string(values_.size()) + " values, expected " +
              std::to_string(rows_ * cols_));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, Errc::ShapeMismatch, "ragged row list");
    v.insert(v.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(v));
}

double DenseMatrix::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double DenseMatrix::frobenius() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), Errc::ShapeMismatch, "matmul inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), Errc::ShapeMismatch, "matmul_tn row counts differ");
  DenseMatrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.cols(), Errc::ShapeMismatch, "matmul_nt column counts differ");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * a.cols();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.data() + j * b.cols();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b, double scale_b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeMismatch, "add shapes differ");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.values().size(); ++i) c.values()[i] += scale_b * b.values()[i];
  return c;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeMismatch, "diff shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

double max_asymmetry(const DenseMatrix& a) {
  require(a.square(), Errc::ShapeMismatch, "asymmetry of a non-square matrix");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q)
          k(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return k;
}

DenseMatrix kron_materialize(std::span<const DenseMatrix> mats) {
  require(!mats.empty(), Errc::EmptyInput, "no factors to materialize");
  DenseMatrix k = mats[0];
  for (std::size_t j = 1; j < mats.size(); ++j) k = kron(k, mats[j]);
  return k;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

double SymEig::max_abs_eigenvalue() const {
  double m = 0.0;
  for (double l : eigenvalues) m = std::max(m, std::abs(l));
  return m;
}

double SymEig::min_abs_eigenvalue() const {
  require(!eigenvalues.empty(), Errc::EmptyInput, "empty eigensystem");
  double m = std::abs(eigenvalues.front());
  for (double l : eigenvalues) m = std::min(m, std::abs(l));
  return m;
}

namespace {

double off_diagonal_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

void jacobi_rotate(DenseMatrix& a, DenseMatrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const std::size_t n = a.rows();
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;

  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

SymEig sym_eig(const DenseMatrix& input, const SymEigOptions& options) {
  require(input.square(), Errc::ShapeMismatch, "sym_eig needs a square matrix");
  require(input.all_finite(), Errc::InvalidArgument, "sym_eig input has non-finite entries");
  const std::size_t n = input.rows();
  const double scale = 1.0 + input.max_abs();
  const double asym = max_asymmetry(input);
  if (asym > 1e-10 * scale)
    throw Error(Errc::NonSymmetric, "asymmetry " + std::to_string(asym) + " exceeds tolerance");

  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  const double target = options.relative_tolerance * a.frobenius();
  bool converged = off_diagonal_norm(a) <= target;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) jacobi_rotate(a, v, p, q);
    converged = off_diagonal_norm(a) <= target;
  }
  if (!converged)
    throw Error(Errc::NoConvergence,
                "Jacobi did not converge in " + std::to_string(options.max_sweeps) + " sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  SymEig out;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.eigenvalues[k] = a(src, src);
    // sign convention: largest-magnitude component positive (first on ties)
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(v(i, src)) > std::abs(v(arg, src))) arg = i;
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = sign * v(i, src);
  }
  return out;
}

DenseMatrix eig_reconstruct(const SymEig& eig, std::span<const double> scaled) {
  const std::size_t n = eig.size();
  require(scaled.size() == n, Errc::ShapeMismatch, "eigenvalue count mismatch");
  DenseMatrix out(n, n);
  const DenseMatrix& u = eig.eigenvectors;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += u(i, k) * scaled[k] * u(j, k);
      out(i, j) = s;
    }
  return out;
}

DenseMatrix eig_reconstruct(const SymEig& eig) { return eig_reconstruct(eig, eig.eigenvalues); }

// ---------------------------------------------------------------------------
// Dense inverse (LAPACK)

DenseMatrix dense_inverse(const DenseMatrix& a, double min_rcond) {
  require(a.square(), Errc::ShapeMismatch, "dense_inverse needs a square matrix");
  require(a.all_finite(), Errc::InvalidArgument, "dense_inverse input has non-finite entries");
  const auto n = static_cast<lapack_int>(a.rows());
  if (n == 0) return DenseMatrix();

  // Row-major storage is read as column-major, i.e. as Aᵀ. inv(Aᵀ) read back
  // row-major is inv(A), so no transposition copies are needed.
  double anorm = 0.0;  // 1-norm of Aᵀ
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += std::abs(a(i, j));
    anorm = std::max(anorm, s);
  }

  const bool symmetric = max_asymmetry(a) <= 1e-12 * (1.0 + a.max_abs());
  if (symmetric) {
    DenseMatrix f = a;
    if (LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', n, f.data(), n) == 0) {
      double rcond = 0.0;
      LAPACKE_dpocon(LAPACK_COL_MAJOR, 'L', n, f.data(), n, anorm, &rcond);
      if (!(rcond > min_rcond))
        throw Error(Errc::IllConditioned, "reciprocal condition " + std::to_string(rcond));
      if (LAPACKE_dpotri(LAPACK_COL_MAJOR, 'L', n, f.data(), n) != 0)
        throw Error(Errc::Singular, "Cholesky inverse failed");
      // lower triangle (column-major) = upper triangle (row-major); mirror it
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) f(j, i) = f(i, j);
      return f;
    }
  }

  DenseMatrix f = a;
  std::vector<lapack_int> pivots(a.rows());
  const lapack_int info = LAPACKE_dgetrf(LAPACK_COL_MAJOR, n, n, f.data(), n, pivots.data());
  if (info > 0) throw Error(Errc::Singular, "zero pivot at " + std::to_string(info));
  if (info < 0) throw Error(Errc::InvalidArgument, "dgetrf argument error");
  double rcond = 0.0;
  LAPACKE_dgecon(LAPACK_COL_MAJOR, '1', n, f.data(), n, anorm, &rcond);
  if (!(rcond > min_rcond))
    throw Error(Errc::IllConditioned, "reciprocal condition " + std::to_string(rcond));
  if (LAPACKE_dgetri(LAPACK_COL_MAJOR, n, f.data(), n, pivots.data()) != 0)
    throw Error(Errc::Singular, "LU inverse failed");
  return f;
}

double spectral_radius_from_axes(std::span<const SymEig> axis_eigs, double alpha) {
  require(!axis_eigs.empty(), Errc::EmptyInput, "no axis eigensystems");
  double rho = std::abs(alpha);
  for (const auto& e : axis_eigs) {
    require(e.size() > 0, Errc::EmptyInput, "empty axis eigensystem");
    rho *= e.max_abs_eigenvalue();
  }
  return rho;
}

// ---------------------------------------------------------------------------
// LatentTensor and mode products

LatentTensor::LatentTensor(std::vector<std::size_t> axis_sizes, std::size_t channels)
    : axis_sizes_(std::move(axis_sizes)), channels_(channels) {
  require(!axis_sizes_.empty(), Errc::ShapeMismatch, "tensor needs at least one axis");
  values_.assign(points() * channels_, 0.0);
}

LatentTensor::LatentTensor(std::vector<std::size_t> axis_sizes, std::size_t channels,
                           std::vector<double> values)
    : axis_sizes_(std::move(axis_sizes)), channels_(channels), values_(std::move(values)) {
  require(!axis_sizes_.empty(), Errc::ShapeMismatch, "tensor needs at least one axis");
  require(values_.size() == points() * channels_, Errc::ShapeMismatch,
          "tensor storage does not match axis sizes x channels");
}

LatentTensor LatentTensor::from_matrix(std::vector<std::size_t> axis_sizes, const DenseMatrix& m) {
  return LatentTensor(std::move(axis_sizes), m.cols(), m.values());
}

DenseMatrix LatentTensor::to_matrix() const { return DenseMatrix(points(), channels_, values_); }

std::size_t LatentTensor::points() const noexcept {
  std::size_t m = 1;
  for (auto n : axis_sizes_) m *= n;
  return m;
}

double LatentTensor::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const LatentTensor& a, const LatentTensor& b) {
  require(a.axis_sizes() == b.axis_sizes() && a.channels() == b.channels(), Errc::ShapeMismatch,
          "tensor shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

namespace {

struct AxisView {
  std::size_t outer;
  std::size_t n;
  std::size_t inner;  // trailing axes x channels
};

AxisView axis_view(const LatentTensor& t, std::size_t axis) {
  require(axis < t.dim(), Errc::ShapeMismatch, "axis out of range");
  AxisView v{1, t.axis_sizes()[axis], t.channels()};
  for (std::size_t k = 0; k < axis; ++k) v.outer *= t.axis_sizes()[k];
  for (std::size_t k = axis + 1; k < t.dim(); ++k) v.inner *= t.axis_sizes()[k];
  return v;
}

constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

LatentTensor mode_apply(const LatentTensor& t, std::size_t axis, const DenseMatrix& a, Exec exec) {
  const AxisView v = axis_view(t, axis);
  require(a.rows() == v.n && a.cols() == v.n, Errc::ShapeMismatch,
          "mode matrix must be " + std::to_string(v.n) + " x " + std::to_string(v.n));
  LatentTensor out(t.axis_sizes(), t.channels());
  const double* src = t.values().data();
  double* dst = out.values().data();
  const double* am = a.data();
  const std::size_t n = v.n;
  const std::size_t inner = v.inner;
  const long rows = static_cast<long>(v.outer * n);
  const bool parallel = exec == Exec::Parallel && v.outer * n * n * inner >= kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
  for (long r = 0; r < rows; ++r) {
    const std::size_t o = static_cast<std::size_t>(r) / n;
    const std::size_t p = static_cast<std::size_t>(r) % n;
    double* out_row = dst + static_cast<std::size_t>(r) * inner;
    const double* a_row = am + p * n;
    for (std::size_t q = 0; q < n; ++q) {
      const double coef = a_row[q];
      const double* in_row = src + (o * n + q) * inner;
      for (std::size_t s = 0; s < inner; ++s) out_row[s] += coef * in_row[s];
    }
  }
  return out;
}

LatentTensor mode_apply_reference(const LatentTensor& t, std::size_t axis, const DenseMatrix& a) {
  const AxisView v = axis_view(t, axis);
  require(a.rows() == v.n && a.cols() == v.n, Errc::ShapeMismatch, "mode matrix shape");
  LatentTensor out(t.axis_sizes(), t.channels());
  const std::size_t total = t.values().size();
  for (std::size_t idx = 0; idx < total; ++idx) {
    const std::size_t s = idx % v.inner;
    const std::size_t p = (idx / v.inner) % v.n;
    const std::size_t o = idx / (v.inner * v.n);
    double acc = 0.0;
    for (std::size_t q = 0; q < v.n; ++q) acc += a(p, q) * t.values()[(o * v.n + q) * v.inner + s];
    out.values()[idx] = acc;
  }
  return out;
}

LatentTensor kron_apply(std::span<const DenseMatrix> mats, const LatentTensor& t, Exec exec,
                        KronStats* stats) {
  require(mats.size() == t.dim(), Errc::ShapeMismatch,
          "expected one factor per axis (" + std::to_string(t.dim()) + ")");
  LatentTensor cur = t;
  for (std::size_t j = 0; j < mats.size(); ++j) {
    cur = mode_apply(cur, j, mats[j], exec);
    if (stats != nullptr) {
      stats->mode_products += 1;
      stats->row_slab_products += t.axis_sizes()[j];
      stats->max_buffer_elements = std::max(stats->max_buffer_elements, cur.values().size());
    }
  }
  return cur;
}

DenseMatrix mode_contract(const LatentTensor& a, const LatentTensor& b, std::size_t axis, Exec exec) {
  require(a.axis_sizes() == b.axis_sizes() && a.channels() == b.channels(), Errc::ShapeMismatch,
          "mode_contract operands differ in shape");
  const AxisView v = axis_view(a, axis);
  DenseMatrix c(v.n, v.n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  const long entries = static_cast<long>(v.n * v.n);
  const bool parallel = exec == Exec::Parallel && a.values().size() * v.n >= kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
  for (long e = 0; e < entries; ++e) {
    const std::size_t p = static_cast<std::size_t>(e) / v.n;
    const std::size_t q = static_cast<std::size_t>(e) % v.n;
    double acc = 0.0;
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* ra = pa + (o * v.n + p) * v.inner;
      const double* rb = pb + (o * v.n + q) * v.inner;
      for (std::size_t s = 0; s < v.inner; ++s) acc += ra[s] * rb[s];
    }
    c(p, q) = acc;
  }
  return c;
}

double inner(const LatentTensor& a, const LatentTensor& b) {
  require(a.values().size() == b.values().size(), Errc::ShapeMismatch, "inner size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace ikno
