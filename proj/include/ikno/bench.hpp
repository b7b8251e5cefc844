#pragma once

// Build/apply timings of the Vanilla, TP and naive dense-inverse paths.
// Monotonic clock, warmups discarded, median of the repetitions reported.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ikno/resolvent.hpp"

namespace ikno {

struct BenchOptions {
  std::size_t sweep_points = 8;                       // N for the exponent sweep
  std::vector<std::size_t> sweep_dims{1, 2, 3, 4};    // d for the exponent sweep
  std::size_t large_points = 16;                      // speedup case
  std::size_t large_dim = 3;
  std::vector<std::size_t> doubling_points{8, 16};    // naive/fast growth at fixed d
  std::size_t doubling_dim = 2;
  std::size_t channels = 16;
  std::size_t warmups = 2;
  std::size_t repetitions = 5;
  double alpha = -1.0;
  std::size_t naive_cap = kDefaultNaiveCap;
  bool naive = true;
  std::uint64_t seed = 0;
};

struct BenchCase {
  std::string group;  // sweep | large | doubling
  std::vector<std::size_t> shape;
  std::string variant;  // vanilla | tp | naive
  double build_ns = 0.0;
  double apply_ns = 0.0;
  std::size_t warmups = 0;
  std::size_t repetitions = 0;
  std::optional<double> max_deviation;  // against the naive oracle
  bool skipped = false;
  std::string note;

  std::size_t points() const;
};

struct BenchReport {
  std::vector<BenchCase> cases;
  double speedup_large = 0.0;            // naive (build+apply) / fast (build+apply), slower fast path
  double apply_exponent_vanilla = 0.0;   // log-log slope of apply time vs M over the sweep
  double apply_exponent_tp = 0.0;
  double max_apply_ratio = 0.0;          // max over cases of max(v/tp, tp/v)
  double naive_build_growth = 0.0;       // doubling N at fixed d
  double fast_build_growth = 0.0;
  nlohmann::json environment;
};

BenchReport run_bench(const BenchOptions& o);
nlohmann::json to_json(const BenchReport& r);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ikno
