#include "ikno/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <string>

namespace ikno {

namespace {
constexpr std::size_t kDotChunks = 64;
}

int thread_count() { return omp_get_max_threads(); }

void set_thread_count(int n) {
  if (n < 1) n = omp_get_num_procs();
  omp_set_num_threads(n);
}

void configure_threads_from_env() {
  const char* env = std::getenv("IKNO_THREADS");
  if (env == nullptr || *env == '\0') return;
  try {
    const int requested = std::stoi(env);
    set_thread_count(requested);
  } catch (const std::exception&) {
    // malformed value: keep the default
  }
}

double deterministic_dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::array<double, kDotChunks> partial{};
  const std::size_t chunk = (n + kDotChunks - 1) / kDotChunks;
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::size_t c = 0; c < kDotChunks; ++c) {
    const std::size_t lo = c * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += a[i] * b[i];
    partial[c] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace ikno
