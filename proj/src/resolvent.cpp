#include "ikno/resolvent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ikno/error.hpp"

namespace ikno {

namespace {

void require_symmetric_axes(std::span<const DenseMatrix> axis_grams) {
  require(!axis_grams.empty(), Errc::EmptyInput, "no axis Gram matrices");
  for (std::size_t j = 0; j < axis_grams.size(); ++j) {
    const auto& k = axis_grams[j];
    require(k.square() && k.rows() > 0, Errc::ShapeMismatch,
            "axis Gram " + std::to_string(j) + " is not square");
    const double asym = max_asymmetry(k);
    if (asym > 1e-10 * (1.0 + k.max_abs()))
      throw Error(Errc::NonSymmetric, "axis Gram " + std::to_string(j) + " is not symmetric");
  }
}

std::size_t product_size(std::span<const DenseMatrix> axis_grams) {
  std::size_t m = 1;
  for (const auto& k : axis_grams) m *= k.rows();
  return m;
}

std::vector<DenseMatrix> transposes(const std::vector<SymEig>& eigs) {
  std::vector<DenseMatrix> out;
  out.reserve(eigs.size());
  for (const auto& e : eigs) out.push_back(transpose(e.eigenvectors));
  return out;
}

void require_shape(const std::vector<std::size_t>& sizes, const LatentTensor& t) {
  require(t.axis_sizes() == sizes, Errc::ShapeMismatch, "tensor axes do not match the operator");
}

}  // namespace

std::vector<std::size_t> ResolventVanilla::axis_sizes() const {
  std::vector<std::size_t> s;
  for (const auto& e : axis_eigs) s.push_back(e.size());
  return s;
}

std::vector<std::size_t> ResolventTP::axis_sizes() const {
  std::vector<std::size_t> s;
  for (const auto& m : axis_inverses) s.push_back(m.rows());
  return s;
}

ResolventVanilla build_vanilla(std::span<const DenseMatrix> axis_grams, double alpha) {
  require_symmetric_axes(axis_grams);
  ResolventVanilla r;
  r.alpha = alpha;
  r.axis_eigs.reserve(axis_grams.size());
  for (const auto& k : axis_grams) r.axis_eigs.push_back(sym_eig(k));

  // Kronecker eigenvalues in lexicographic order, axis 1 slowest.
  std::vector<double> prod{1.0};
  for (const auto& e : r.axis_eigs) {
    std::vector<double> next;
    next.reserve(prod.size() * e.size());
    for (double p : prod)
      for (double l : e.eigenvalues) next.push_back(p * l);
    prod = std::move(next);
  }
  r.diag_weights.resize(prod.size());
  for (std::size_t i = 0; i < prod.size(); ++i) {
    const double denom = 1.0 - alpha * prod[i];
    if (std::abs(denom) < kSingularityTolerance)
      throw Error(Errc::SingularDiagonal,
                  "|1 - alpha*lambda| = " + std::to_string(std::abs(denom)) + " at index " +
                      std::to_string(i));
    r.diag_weights[i] = 1.0 / denom;
  }
  return r;
}

LatentTensor apply_vanilla(const ResolventVanilla& r, const LatentTensor& t, Exec exec) {
  require_shape(r.axis_sizes(), t);
  std::vector<DenseMatrix> ut = transposes(r.axis_eigs);
  LatentTensor s = kron_apply(ut, t, exec);
  const std::size_t h = t.channels();
  auto& v = s.values();
  const long m = static_cast<long>(r.diag_weights.size());
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel && m * h >= 65536)
  for (long g = 0; g < m; ++g) {
    const double w = r.diag_weights[g];
    for (std::size_t c = 0; c < h; ++c) v[g * h + c] *= w;
  }
  std::vector<DenseMatrix> u;
  u.reserve(r.axis_eigs.size());
  for (const auto& e : r.axis_eigs) u.push_back(e.eigenvectors);
  return kron_apply(u, s, exec);
}

ResolventTP build_tp(std::span<const DenseMatrix> axis_grams, double alpha) {
  require_symmetric_axes(axis_grams);
  ResolventTP r;
  r.alpha = alpha;
  for (std::size_t j = 0; j < axis_grams.size(); ++j) {
    const auto& k = axis_grams[j];
    DenseMatrix a = DenseMatrix::identity(k.rows());
    for (std::size_t i = 0; i < a.values().size(); ++i) a.values()[i] -= alpha * k.values()[i];
    try {
      r.axis_inverses.push_back(dense_inverse(a, kSingularityTolerance));
    } catch (const Error& e) {
      throw Error(Errc::SingularAxis, "axis " + std::to_string(j) + ": " + e.what());
    }
  }
  return r;
}

LatentTensor apply_tp(const ResolventTP& r, const LatentTensor& t, Exec exec) {
  require_shape(r.axis_sizes(), t);
  return kron_apply(r.axis_inverses, t, exec);
}

LatentTensor apply_truncated(const TruncatedPropagator& p, const LatentTensor& t, Exec exec) {
  std::vector<std::size_t> sizes;
  for (const auto& k : p.axis_grams) sizes.push_back(k.rows());
  require_shape(sizes, t);
  LatentTensor s = t;
  for (std::size_t k = 0; k < p.order; ++k) {
    LatentTensor ks = kron_apply(p.axis_grams, s, exec);
    auto& kv = ks.values();
    const auto& tv = t.values();
    for (std::size_t i = 0; i < kv.size(); ++i) kv[i] = tv[i] + p.alpha * kv[i];
    s = std::move(ks);
  }
  return s;
}

DenseMatrix dense_resolvent(std::span<const DenseMatrix> axis_grams, double alpha, std::size_t cap) {
  require(!axis_grams.empty(), Errc::EmptyInput, "no axis Gram matrices");
  const std::size_t m = product_size(axis_grams);
  if (m > cap)
    throw Error(Errc::CapExceeded,
                "M = " + std::to_string(m) + " exceeds the dense cap " + std::to_string(cap));
  DenseMatrix a = kron_materialize(axis_grams);
  for (auto& v : a.values()) v *= -alpha;
  for (std::size_t i = 0; i < m; ++i) a(i, i) += 1.0;
  return dense_inverse(a);
}

LatentTensor apply_naive_inverse(std::span<const DenseMatrix> axis_grams, double alpha,
                                 const LatentTensor& t, std::size_t cap) {
  std::vector<std::size_t> sizes;
  for (const auto& k : axis_grams) sizes.push_back(k.rows());
  require_shape(sizes, t);
  const DenseMatrix inv = dense_resolvent(axis_grams, alpha, cap);
  return LatentTensor::from_matrix(t.axis_sizes(), matmul(inv, t.to_matrix()));
}

ConvergenceReport convergence_report(std::span<const DenseMatrix> axis_grams, double alpha) {
  require_symmetric_axes(axis_grams);
  std::vector<SymEig> eigs;
  for (const auto& k : axis_grams) eigs.push_back(sym_eig(k));
  ConvergenceReport rep;
  rep.rho_alpha_k = spectral_radius_from_axes(eigs, alpha);
  double min_abs = 1.0;
  for (const auto& e : eigs) min_abs *= e.min_abs_eigenvalue();
  rep.abs_alpha_lambda_min = std::abs(alpha) * min_abs;
  rep.positive_series_converges = rep.rho_alpha_k < 1.0;
  rep.inverse_series_converges = rep.abs_alpha_lambda_min > 1.0;
  return rep;
}

std::vector<DenseMatrix> inverse_power_partial_sums(std::span<const DenseMatrix> axis_grams,
                                                    double alpha, std::size_t n_terms,
                                                    std::size_t cap) {
  require(!axis_grams.empty(), Errc::EmptyInput, "no axis Gram matrices");
  const std::size_t m = product_size(axis_grams);
  if (m > cap)
    throw Error(Errc::CapExceeded,
                "M = " + std::to_string(m) + " exceeds the dense cap " + std::to_string(cap));
  require(alpha != 0.0, Errc::Singular, "alpha = 0 makes alpha*K singular");
  DenseMatrix ak = kron_materialize(axis_grams);
  for (auto& v : ak.values()) v *= alpha;
  DenseMatrix inv;
  try {
    inv = dense_inverse(ak);
  } catch (const Error& e) {
    throw Error(Errc::Singular, std::string("alpha*K is not invertible: ") + e.what());
  }
  std::vector<DenseMatrix> sums;
  sums.reserve(n_terms);
  DenseMatrix power = inv;
  DenseMatrix sum(m, m);
  for (std::size_t n = 1; n <= n_terms; ++n) {
    if (n > 1) power = matmul(power, inv);
    sum = add(sum, power, -1.0);
    sums.push_back(sum);
  }
  return sums;
}

DenseMatrix inverse_power_partial_sum(std::span<const DenseMatrix> axis_grams, double alpha,
                                      std::size_t n_terms, std::size_t cap) {
  require(n_terms >= 1, Errc::InvalidArgument, "need at least one term");
  return inverse_power_partial_sums(axis_grams, alpha, n_terms, cap).back();
}

}  // namespace ikno
