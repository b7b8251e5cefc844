#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ikno/kernels.hpp"
#include "ikno/linalg.hpp"

namespace ikno {

struct TemporalInfo {
  double t_now = 0.0;
  double tau = 0.0;
};

/// One operator-learning example: conditions a(x) on the input cloud,
/// targets u at the query points.
struct SampleRecord {
  PointCloud input;    // coords + condition channels
  PointCloud queries;  // coords only
  DenseMatrix target;  // n_q x out_channels
  std::optional<TemporalInfo> time;
};

struct Dataset {
  std::string kind;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> condition_names;
  std::vector<std::string> target_names;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::string spec_json = "{}";  // generator parameters, recorded verbatim

  std::size_t condition_channels() const noexcept { return condition_names.size(); }
  std::size_t target_channels() const noexcept { return target_names.size(); }
};

}  // namespace ikno
