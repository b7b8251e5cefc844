#pragma once

#include <cstdint>
#include <vector>

#include "ikno/kernels.hpp"
#include "ikno/linalg.hpp"
#include "ikno/rng.hpp"

namespace ikno::test {

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng64& rng) {
  DenseMatrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

inline DenseMatrix random_symmetric(std::size_t n, Rng64& rng) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = rng.uniform(-1.0, 1.0);
  return m;
}

inline DenseMatrix random_spd(std::size_t n, Rng64& rng) {
  const DenseMatrix b = random_matrix(n, n, rng);
  DenseMatrix a = matmul_nt(b, b);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
  return a;
}

inline LatentTensor random_tensor(const std::vector<std::size_t>& sizes, std::size_t h, Rng64& rng) {
  LatentTensor t(sizes, h);
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// Distinct sorted points in [-1, 1].
inline std::vector<double> jittered_points(std::size_t n, Rng64& rng) {
  std::vector<double> x(n);
  const double step = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -1.0 + step * (static_cast<double>(i) + rng.uniform(0.1, 0.9));
  return x;
}

inline AxisKernelParams random_axis_params(Rng64& rng) {
  return {rng.uniform(0.2, 2.0), rng.uniform(0.2, 6.0), rng.uniform(0.2, 6.0)};
}

inline PointCloud random_cloud(std::size_t dim, std::size_t n, std::size_t channels, Rng64& rng) {
  std::vector<double> c(n * dim), v(n * channels);
  for (auto& x : c) x = rng.uniform(-1.0, 1.0);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return PointCloud(dim, std::move(c), channels, std::move(v));
}

}  // namespace ikno::test
