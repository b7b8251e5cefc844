#pragma once

// Correctness suites shared by `ikno verify` and the acceptance tests: dense
// oracles for both resolvents, series convergence, positive definiteness and
// the model gradient.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ikno/linalg.hpp"

namespace ikno {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_deviation = 0.0;
  double threshold = 0.0;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double seconds = 0.0;
  std::string detail;
};

nlohmann::json to_json(const CheckResult& r);

enum class Fault { None, TpAsVanilla };

Fault parse_fault(std::string_view s);
std::string_view to_string(Fault f);

struct VerifyOptions {
  std::size_t cases = 100;
  std::uint64_t seed = 0;
  Fault fault = Fault::None;
  std::size_t max_dim = 3;
  std::size_t max_points = 8;
  std::size_t pd_cases = 200;
  bool gradient = true;
};

/// A random resolvent problem: SPD axis Grams from random kernel parameters
/// on distinct points, α drawn from [-2, 0) ∪ (0, 0.9/ρ(K)], random tensor.
struct RandomInstance {
  std::vector<DenseMatrix> grams;
  double alpha = 0.0;
  LatentTensor t;
};

RandomInstance random_instance(std::uint64_t seed, std::size_t index, std::size_t max_dim,
                               std::size_t max_points, std::size_t fixed_dim = 0);

CheckResult check_vanilla_oracle(const VerifyOptions& o);
CheckResult check_tp_oracle(const VerifyOptions& o);
CheckResult check_d1_coincidence(const VerifyOptions& o);
CheckResult check_d2_separation(const VerifyOptions& o);
CheckResult check_negative_alpha(const VerifyOptions& o);
CheckResult check_neumann_convergence();
CheckResult check_inverse_power_convergent();
CheckResult check_inverse_power_divergent();
CheckResult check_positive_definiteness(const VerifyOptions& o);
CheckResult check_gradient(const VerifyOptions& o);

std::vector<CheckResult> run_verify(const VerifyOptions& o);

}  // namespace ikno
