#pragma once

// The ikno subcommands as library calls. Each returns an exit code and the
// JSON report it wrote under the output directory.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ikno/bench.hpp"
#include "ikno/model.hpp"
#include "ikno/verify.hpp"

namespace ikno {

inline constexpr int kReportSchemaVersion = 1;

struct CommandResult {
  int exit_code = 0;
  nlohmann::json report;
};

struct GenDataOptions {
  std::string kind = "csines";  // csines | poisson-gauss | toy-trajectory
  std::uint64_t seed = 0;
  std::filesystem::path out = "data";
  std::size_t num_train = 256;
  std::size_t num_test = 64;
  std::size_t dim = 2;
  std::size_t max_mode = 2;
  std::size_t input_points = 128;
  std::size_t query_points = 128;
  std::size_t solver_res = 65;
  std::string cloud = "continuous";
  std::size_t stamps = 5;
  double dt = 0.1;
  double velocity = 0.5;
  std::size_t modes = 2;
  std::string target_mode = "residual";
};

struct ModelOptions {
  std::size_t grid_points = 8;
  std::size_t hidden = 16;
  std::size_t branches = 3;
  std::string processor = "mlp";
  std::size_t processor_depth = 1;
  std::size_t processor_width = 16;
  std::size_t attention_heads = 2;
  std::string variant = "tp";
  std::size_t order = 1;
  std::size_t head_depth = 2;
  double init_alpha = -1.0;

  /// Dimensions and channel counts come from the dataset.
  ModelConfig to_config(std::size_t dim, std::size_t in_channels, std::size_t out_channels) const;
};

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out = "run";
  std::filesystem::path resume;  // checkpoint directory; empty starts fresh
  std::uint64_t seed = 0;
  std::size_t steps = 0;   // takes precedence over epochs
  std::size_t epochs = 0;
  std::size_t stop_at = 0;  // stop early at this step, keeping the schedule; 0 runs to the end
  std::size_t batch = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double clip = 1.0;
  std::size_t log_every = 1;
  ModelOptions model;
};

struct EvalOptions {
  std::filesystem::path data;
  std::filesystem::path checkpoint;  // empty: evaluate the initialization
  std::filesystem::path out = "run";
  std::string split = "test";
  std::uint64_t seed = 0;
  ModelOptions model;  // only used without a checkpoint
};

struct FiniteOrderOptions {
  std::filesystem::path data;
  std::filesystem::path out = "study";
  std::uint64_t seed = 0;
  std::size_t steps = 300;
  std::size_t batch = 4;
  double lr = 1e-3;
  std::vector<std::size_t> orders{0, 1, 2, 3, 4};
  std::size_t grid_points = 16;  // spacing below the window radius
  std::size_t hidden = 16;
  std::size_t processor_width = 16;
  double radius = 0.2;
  double scale = 1.0;
  double alpha = -0.15;
};

struct VerifyCommandOptions {
  VerifyOptions verify;
  std::filesystem::path out = "verify";
};

struct BenchCommandOptions {
  BenchOptions bench;
  std::filesystem::path out = "bench";
};

CommandResult cmd_gen_data(const GenDataOptions& o);
CommandResult cmd_verify(const VerifyCommandOptions& o);
CommandResult cmd_finite_order_study(const FiniteOrderOptions& o);
CommandResult cmd_bench(const BenchCommandOptions& o);
CommandResult cmd_train(const TrainOptions& o);
CommandResult cmd_eval(const EvalOptions& o);

nlohmann::json model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Writes `report` as pretty JSON to dir/name.
void write_report(const std::filesystem::path& dir, const std::string& name,
                  const nlohmann::json& report);

}  // namespace ikno
