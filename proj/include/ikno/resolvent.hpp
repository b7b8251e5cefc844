#pragma once

// Discrete infinite- and finite-order grid operators built from per-axis
// Gram matrices K_1 ... K_d of a product kernel (K = K_1 ⊗ ... ⊗ K_d):
//
//   ResolventVanilla    (I_M - αK)^{-1}, via per-axis eigensystems and a
//                       diagonal reweighting 1 / (1 - α ∏_j λ_{i_j})
//   ResolventTP         ⊗_j (I_N - αK_j)^{-1}
//   TruncatedPropagator I + αK + ... + α^p K^p (Horner recursion)
//
// All three are applied through mode products at O(d·N·M) per channel.

#include <cstddef>
#include <span>
#include <vector>

#include "ikno/linalg.hpp"

namespace ikno {

inline constexpr double kSingularityTolerance = 1e-10;
inline constexpr std::size_t kDefaultNaiveCap = 8192;

struct ResolventVanilla {
  std::vector<SymEig> axis_eigs;
  double alpha = 0.0;
  std::vector<double> diag_weights;  // lexicographic, length M

  std::vector<std::size_t> axis_sizes() const;
};

struct ResolventTP {
  std::vector<DenseMatrix> axis_inverses;
  double alpha = 0.0;

  std::vector<std::size_t> axis_sizes() const;
};

struct TruncatedPropagator {
  std::vector<DenseMatrix> axis_grams;
  double alpha = 0.0;
  std::size_t order = 0;
};

struct ConvergenceReport {
  double rho_alpha_k = 0.0;           // ρ(αK)
  double abs_alpha_lambda_min = 0.0;  // |α| · min_i |λ_i(K)|
  bool positive_series_converges = false;
  bool inverse_series_converges = false;
};

/// Throws SingularDiagonal if any |1 - α∏λ| < 1e-10.
ResolventVanilla build_vanilla(std::span<const DenseMatrix> axis_grams, double alpha);
LatentTensor apply_vanilla(const ResolventVanilla& r, const LatentTensor& t,
                           Exec exec = Exec::Parallel);

/// Throws SingularAxis naming the first axis whose (I - αK_j) cannot be inverted.
ResolventTP build_tp(std::span<const DenseMatrix> axis_grams, double alpha);
LatentTensor apply_tp(const ResolventTP& r, const LatentTensor& t, Exec exec = Exec::Parallel);

LatentTensor apply_truncated(const TruncatedPropagator& p, const LatentTensor& t,
                             Exec exec = Exec::Parallel);

/// Materialized (I_M - αK)^{-1} for small grids. Throws CapExceeded past `cap`.
DenseMatrix dense_resolvent(std::span<const DenseMatrix> axis_grams, double alpha,
                            std::size_t cap = kDefaultNaiveCap);

/// The explicit foil: forms K, inverts (I - αK) densely, multiplies.
LatentTensor apply_naive_inverse(std::span<const DenseMatrix> axis_grams, double alpha,
                                 const LatentTensor& t, std::size_t cap = kDefaultNaiveCap);

ConvergenceReport convergence_report(std::span<const DenseMatrix> axis_grams, double alpha);

/// -Σ_{n=1}^{n_terms} (αK)^{-n} as a dense matrix (validation tool).
DenseMatrix inverse_power_partial_sum(std::span<const DenseMatrix> axis_grams, double alpha,
                                      std::size_t n_terms, std::size_t cap = kDefaultNaiveCap);

/// Sequence of partial sums for n = 1..n_terms (shares the work of one run).
std::vector<DenseMatrix> inverse_power_partial_sums(std::span<const DenseMatrix> axis_grams,
                                                    double alpha, std::size_t n_terms,
                                                    std::size_t cap = kDefaultNaiveCap);

}  // namespace ikno
