#pragma once

// Loss, normalization, temporal targets, gradients, AdamW, metrics, rollout
// and the training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ikno/dataset.hpp"
#include "ikno/linalg.hpp"
#include "ikno/model.hpp"

namespace ikno {

// -- normalization ----------------------------------------------------------

struct NormStats {
  std::vector<double> mu;
  std::vector<double> sigma;
  double epsilon = 1e-10;

  std::size_t channels() const noexcept { return mu.size(); }
};

/// Per-channel mean and population standard deviation pooled over the rows
/// of every field. Throws EmptyDataset when there are no rows at all.
NormStats zscore_fit(std::span<const DenseMatrix> fields);
/// (v - μ) / (σ + ε)
DenseMatrix zscore_apply(const NormStats& s, const DenseMatrix& field);
DenseMatrix zscore_invert(const NormStats& s, const DenseMatrix& field);

/// Normalization of the conditions and targets of a whole dataset, fit on
/// the training split.
struct DatasetNorm {
  NormStats conditions;
  NormStats targets;
};

DatasetNorm fit_dataset_norm(const Dataset& data);
Dataset apply_dataset_norm(const DatasetNorm& norm, const Dataset& data);

// -- loss -------------------------------------------------------------------

/// ‖y - ŷ‖₂ / ‖y‖₂ over all entries; nullopt when ‖y‖₂ < 1e-30.
std::optional<double> relative_l2_loss(std::span<const double> y, std::span<const double> yhat);

// -- temporal targets -------------------------------------------------------

enum class TemporalMode { Direct, Residual, Derivative };

std::string_view to_string(TemporalMode m);
TemporalMode parse_temporal_mode(std::string_view s);

/// Throws NonpositiveTau when tau <= 0.
std::vector<double> temporal_target(TemporalMode mode, std::span<const double> u_now,
                                    std::span<const double> u_future, double tau);
std::vector<double> temporal_reconstruct(TemporalMode mode, std::span<const double> u_now,
                                         std::span<const double> prediction, double tau);

struct TimePair {
  std::size_t i = 0;
  std::size_t j = 0;
  double t_now = 0.0;
  double tau = 0.0;
};

/// Every (i, j) with j > i. Throws NonMonotoneTimes unless strictly increasing.
std::vector<TimePair> all2all_pairs(std::span<const double> times);

// -- gradients --------------------------------------------------------------

using LossClosure = std::function<double(std::span<const double>)>;

/// Central differences with step probe_eps·(1 + |θ_k|). Throws NonFiniteLoss.
std::vector<double> grad_fd(const LossClosure& loss, std::span<const double> params,
                            double probe_eps = 1e-6);

struct LossGradient {
  double loss_sum = 0.0;
  std::vector<double> grad;  // gradient of loss_sum
};

/// Sum of per-sample relative L2 losses and its gradient. Per-sample work may
/// run in parallel; the reduction is in batch order.
LossGradient grad_analytic(const IknoModel& model, const ParamVector& params,
                           std::span<const SampleRecord> batch);

// -- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip = 1.0;            // global-norm threshold; <= 0 disables
  std::size_t horizon = 1000;   // steps of the cosine schedule
  double final_lr_ratio = 0.01;
};

struct OptimizerState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// Cosine annealing from lr0 to lr0·final_lr_ratio over `horizon` steps.
double cosine_lr(const AdamWConfig& cfg, std::size_t step);

struct StepInfo {
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  double scale = 1.0;      // clip factor applied
};

/// One AdamW step. Throws NonFiniteGradient on NaN/Inf in the gradient.
StepInfo optimizer_step(const AdamWConfig& cfg, OptimizerState& state, std::span<double> params,
                        std::span<const double> grad);

// -- metrics ----------------------------------------------------------------

/// Even counts take the mean of the two middle values.
double median(std::vector<double> values);

struct MedianMetric {
  double percent = 0.0;
  std::size_t excluded = 0;  // sample-components with ‖u‖₁ = 0
};

/// errors[c][s]: relative L1 of component c on sample s (fractions).
MedianMetric median_rel_l1_from_errors(const std::vector<std::vector<double>>& errors);
/// Per sample and component ‖u - û‖₁ / ‖u‖₁, median over samples per
/// component, mean over components, in percent.
MedianMetric median_rel_l1(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths);

double mse(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths);
double mae(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths);

struct EvalReport {
  MedianMetric median_rel_l1;
  double mse = 0.0;
  double mae = 0.0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
};

EvalReport evaluate(const IknoModel& model, const ParamVector& params,
                    std::span<const SampleRecord> samples);

// -- rollout ----------------------------------------------------------------

enum class RolloutMode { Direct, Autoregressive };

/// Predicts the model target (in target space) from the current state.
using StatePredictor =
    std::function<std::vector<double>(std::span<const double> state, double t_now, double tau)>;

struct RolloutStep {
  double t = 0.0;
  std::vector<double> state;
};

/// Direct: one prediction with τ = T - t_0. Autoregressive: chained steps of
/// the smallest spacing in `times`. Both start with the initial state.
std::vector<RolloutStep> rollout(RolloutMode mode, TemporalMode target_mode,
                                 const StatePredictor& predictor, std::span<const double> initial,
                                 std::span<const double> times);

// -- training loop ----------------------------------------------------------

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  AdamWConfig optimizer{};
  double alpha_max = -1e-4;          // branch α is clamped to <= alpha_max
  std::filesystem::path log_path;    // JSON lines; empty disables
  std::size_t log_every = 1;
};

struct TrainResult {
  ParamVector params;
  OptimizerState state;
  std::vector<double> losses;  // mean batch loss per step
  bool aborted = false;        // non-finite loss or gradient
  std::string abort_reason;
};

/// Indices of the samples in batch `step` under the per-epoch permutation
/// drawn from (seed, epoch). Stateless, so a resumed run sees the same order.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t n);

/// Steps the optimizer from `state.step` until it reaches `cfg.steps`. On a
/// non-finite loss or gradient, returns the last good parameters with
/// `aborted` set.
TrainResult train(const IknoModel& model, ParamVector params, OptimizerState state,
                  std::span<const SampleRecord> data, const TrainConfig& cfg);

}  // namespace ikno
