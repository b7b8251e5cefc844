#pragma once

// Dense symmetric linear algebra and tensor mode products. Every Kronecker
// fast path in the library is a sequence of mode products over a
// LatentTensor; nothing here materializes an M x M operator except the
// explicit `kron_materialize` used by oracles and the naive foil.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "ikno/parallel.hpp"

namespace ikno {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double max_abs() const noexcept;
  double frobenius() const noexcept;
  bool all_finite() const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ·b without forming the transpose.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// a·bᵀ without forming the transpose.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b, double scale_b = 1.0);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);
/// Largest |A_ij - A_ji|.
double max_asymmetry(const DenseMatrix& a);

/// Explicit Kronecker product A_1 ⊗ ... ⊗ A_d (oracle / naive path only).
DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix kron_materialize(std::span<const DenseMatrix> mats);

struct SymEig {
  std::vector<double> eigenvalues;  // ascending
  DenseMatrix eigenvectors;         // column k pairs with eigenvalues[k]

  std::size_t size() const noexcept { return eigenvalues.size(); }
  double max_abs_eigenvalue() const;
  double min_abs_eigenvalue() const;
};

struct SymEigOptions {
  double relative_tolerance = 1e-12;  // off-diagonal Frobenius vs ‖A‖_F
  int max_sweeps = 100;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues are
/// ascending; each eigenvector has its largest-magnitude component positive.
/// Throws NonSymmetric or NoConvergence.
SymEig sym_eig(const DenseMatrix& a, const SymEigOptions& options = {});

/// U·diag(f(λ))·Uᵀ for an eigensystem, with f given per eigenvalue.
DenseMatrix eig_reconstruct(const SymEig& eig, std::span<const double> scaled_eigenvalues);
DenseMatrix eig_reconstruct(const SymEig& eig);

/// Inverse of a square matrix. Cholesky when the matrix is symmetric
/// positive definite, LU with partial pivoting otherwise. Throws Singular
/// when factorization breaks down and IllConditioned when the reciprocal
/// condition estimate is at or below `min_rcond`.
DenseMatrix dense_inverse(const DenseMatrix& a, double min_rcond = 1e-12);

/// |α| · ∏_j max_i |λ_i^{(j)}|: the spectral radius of α·(K_1 ⊗ ... ⊗ K_d).
double spectral_radius_from_axes(std::span<const SymEig> axis_eigs, double alpha);

/// Feature tensor over a product grid: axis 1 slowest, channel fastest.
class LatentTensor {
 public:
  LatentTensor() = default;
  LatentTensor(std::vector<std::size_t> axis_sizes, std::size_t channels);
  LatentTensor(std::vector<std::size_t> axis_sizes, std::size_t channels, std::vector<double> values);

  /// Wraps an M x h matrix whose rows are grid points in lexicographic order.
  static LatentTensor from_matrix(std::vector<std::size_t> axis_sizes, const DenseMatrix& m);
  DenseMatrix to_matrix() const;

  const std::vector<std::size_t>& axis_sizes() const noexcept { return axis_sizes_; }
  std::size_t dim() const noexcept { return axis_sizes_.size(); }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t points() const noexcept;  // M = ∏ N_j

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  double max_abs() const noexcept;

 private:
  std::vector<std::size_t> axis_sizes_;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

double max_abs_diff(const LatentTensor& a, const LatentTensor& b);

/// Work accounting for the Kronecker fast path.
struct KronStats {
  std::size_t mode_products = 0;      // one per axis touched
  std::size_t row_slab_products = 0;  // Σ_j N_j
  std::size_t max_buffer_elements = 0;
};

/// Contracts A (N_j x N_j) against axis `axis` (0-based) of t.
LatentTensor mode_apply(const LatentTensor& t, std::size_t axis, const DenseMatrix& a,
                        Exec exec = Exec::Parallel);

/// Straight index-arithmetic implementation of mode_apply. Same reduction
/// order as the kernel; kept as the serial reference.
LatentTensor mode_apply_reference(const LatentTensor& t, std::size_t axis, const DenseMatrix& a);

/// (A_1 ⊗ ... ⊗ A_d) applied per channel, as d successive mode products.
LatentTensor kron_apply(std::span<const DenseMatrix> mats, const LatentTensor& t,
                        Exec exec = Exec::Parallel, KronStats* stats = nullptr);

/// C[p,q] = Σ over all other axes and channels of a[..p..]·b[..q..]:
/// the N_j x N_j matrix whose inner product with dA gives ⟨a, mode_apply(b, j, dA)⟩.
DenseMatrix mode_contract(const LatentTensor& a, const LatentTensor& b, std::size_t axis,
                          Exec exec = Exec::Parallel);

/// Elementwise ⟨a, b⟩ over all entries.
double inner(const LatentTensor& a, const LatentTensor& b);

}  // namespace ikno
