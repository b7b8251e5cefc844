#include "ikno/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <string>

#include "json.hpp"

#include "ikno/error.hpp"
#include "ikno/rng.hpp"

namespace ikno {

// ---------------------------------------------------------------------------
// Normalization

NormStats zscore_fit(std::span<const DenseMatrix> fields) {
  std::size_t rows = 0;
  std::size_t ch = 0;
  for (const auto& f : fields) {
    if (f.rows() == 0) continue;
    if (rows == 0) ch = f.cols();
    require(f.cols() == ch, Errc::ChannelMismatch, "fields differ in channel count");
    rows += f.rows();
  }
  if (rows == 0) throw Error(Errc::EmptyDataset, "no rows to fit normalization statistics");
  NormStats s;
  s.mu.assign(ch, 0.0);
  s.sigma.assign(ch, 0.0);
  for (const auto& f : fields)
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < ch; ++c) s.mu[c] += f(r, c);
  for (auto& m : s.mu) m /= static_cast<double>(rows);
  for (const auto& f : fields)
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = f(r, c) - s.mu[c];
        s.sigma[c] += d * d;
      }
  for (auto& v : s.sigma) v = std::sqrt(v / static_cast<double>(rows));
  return s;
}

DenseMatrix zscore_apply(const NormStats& s, const DenseMatrix& field) {
  require(field.cols() == s.channels(), Errc::ChannelMismatch, "normalization channel count");
  DenseMatrix out = field;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = (out(r, c) - s.mu[c]) / (s.sigma[c] + s.epsilon);
  return out;
}

DenseMatrix zscore_invert(const NormStats& s, const DenseMatrix& field) {
  require(field.cols() == s.channels(), Errc::ChannelMismatch, "normalization channel count");
  DenseMatrix out = field;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = out(r, c) * (s.sigma[c] + s.epsilon) + s.mu[c];
  return out;
}

namespace {

DenseMatrix condition_matrix(const PointCloud& p) {
  return DenseMatrix(p.size(), p.channels, p.values);
}

}  // namespace

DatasetNorm fit_dataset_norm(const Dataset& data) {
  if (data.train.empty()) throw Error(Errc::EmptyDataset, "training split is empty");
  std::vector<DenseMatrix> conds, targets;
  for (const auto& s : data.train) {
    conds.push_back(condition_matrix(s.input));
    targets.push_back(s.target);
  }
  DatasetNorm n;
  n.conditions = zscore_fit(conds);
  n.targets = zscore_fit(targets);
  return n;
}

Dataset apply_dataset_norm(const DatasetNorm& norm, const Dataset& data) {
  Dataset out = data;
  auto fix = [&](std::vector<SampleRecord>& split) {
    for (auto& s : split) {
      s.input.values = zscore_apply(norm.conditions, condition_matrix(s.input)).values();
      s.target = zscore_apply(norm.targets, s.target);
    }
  };
  fix(out.train);
  fix(out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Loss

std::optional<double> relative_l2_loss(std::span<const double> y, std::span<const double> yhat) {
  require(y.size() == yhat.size(), Errc::ShapeMismatch, "prediction and target sizes differ");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    num += r * r;
    den += y[i] * y[i];
  }
  den = std::sqrt(den);
  if (den < 1e-30) return std::nullopt;
  return std::sqrt(num) / den;
}

// ---------------------------------------------------------------------------
// Temporal targets

std::string_view to_string(TemporalMode m) {
  switch (m) {
    case TemporalMode::Direct: return "direct";
    case TemporalMode::Residual: return "residual";
    case TemporalMode::Derivative: return "derivative";
  }
  return "unknown";
}

TemporalMode parse_temporal_mode(std::string_view s) {
  if (s == "direct") return TemporalMode::Direct;
  if (s == "residual") return TemporalMode::Residual;
  if (s == "derivative") return TemporalMode::Derivative;
  throw Error(Errc::InvalidArgument, "unknown temporal mode '" + std::string(s) + "'");
}

std::vector<double> temporal_target(TemporalMode mode, std::span<const double> u_now,
                                    std::span<const double> u_future, double tau) {
  require(u_now.size() == u_future.size(), Errc::ShapeMismatch, "state sizes differ");
  if (!(tau > 0.0)) throw Error(Errc::NonpositiveTau, "lead time must be positive");
  std::vector<double> out(u_now.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (mode) {
      case TemporalMode::Direct: out[i] = u_future[i]; break;
      case TemporalMode::Residual: out[i] = u_future[i] - u_now[i]; break;
      case TemporalMode::Derivative: out[i] = (u_future[i] - u_now[i]) / tau; break;
    }
  }
  return out;
}

std::vector<double> temporal_reconstruct(TemporalMode mode, std::span<const double> u_now,
                                         std::span<const double> prediction, double tau) {
  require(u_now.size() == prediction.size(), Errc::ShapeMismatch, "state sizes differ");
  if (!(tau > 0.0)) throw Error(Errc::NonpositiveTau, "lead time must be positive");
  std::vector<double> out(u_now.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (mode) {
      case TemporalMode::Direct: out[i] = prediction[i]; break;
      case TemporalMode::Residual: out[i] = u_now[i] + prediction[i]; break;
      case TemporalMode::Derivative: out[i] = u_now[i] + tau * prediction[i]; break;
    }
  }
  return out;
}

std::vector<TimePair> all2all_pairs(std::span<const double> times) {
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw Error(Errc::NonMonotoneTimes, "time stamps must increase strictly");
  std::vector<TimePair> pairs;
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t j = i + 1; j < times.size(); ++j)
      pairs.push_back({i, j, times[i], times[j] - times[i]});
  return pairs;
}

// ---------------------------------------------------------------------------
// Gradients

std::vector<double> grad_fd(const LossClosure& loss, std::span<const double> params,
                            double probe_eps) {
  std::vector<double> theta(params.begin(), params.end());
  std::vector<double> g(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double x = theta[k];
    const double eps = probe_eps * (1.0 + std::abs(x));
    theta[k] = x + eps;
    const double up = loss(theta);
    theta[k] = x - eps;
    const double down = loss(theta);
    theta[k] = x;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(Errc::NonFiniteLoss, "loss is not finite near coordinate " + std::to_string(k));
    g[k] = (up - down) / (2.0 * eps);
  }
  return g;
}

LossGradient grad_analytic(const IknoModel& model, const ParamVector& params,
                           std::span<const SampleRecord> batch) {
  require(!batch.empty(), Errc::EmptyInput, "batch is empty");
  const std::size_t p = model.layout().size();
  const long n = static_cast<long>(batch.size());
  std::vector<std::vector<double>> grads(batch.size(), std::vector<double>(p, 0.0));
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::exception_ptr> errors(batch.size());

#pragma omp parallel for schedule(static) if (n > 1)
  for (long i = 0; i < n; ++i) {
    try {
      const auto& s = batch[i];
      losses[i] = model.loss_and_gradient(params, s.input, s.queries, s.target, grads[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  LossGradient out;
  out.grad.assign(p, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.loss_sum += losses[i];
    for (std::size_t k = 0; k < p; ++k) out.grad[k] += grads[i][k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// AdamW

double cosine_lr(const AdamWConfig& cfg, std::size_t step) {
  const double lr_min = cfg.lr0 * cfg.final_lr_ratio;
  if (cfg.horizon == 0) return cfg.lr0;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.horizon));
  return lr_min + 0.5 * (cfg.lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

StepInfo optimizer_step(const AdamWConfig& cfg, OptimizerState& state, std::span<double> params,
                        std::span<const double> grad) {
  require(params.size() == grad.size(), Errc::ShapeMismatch, "gradient length");
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (state.v.empty()) state.v.assign(params.size(), 0.0);
  require(state.m.size() == params.size() && state.v.size() == params.size(), Errc::ShapeMismatch,
          "optimizer moments do not match the parameters");

  StepInfo info;
  double sq = 0.0;
  for (double g : grad) {
    if (!std::isfinite(g)) throw Error(Errc::NonFiniteGradient, "gradient has NaN or Inf");
    sq += g * g;
  }
  info.grad_norm = std::sqrt(sq);
  if (cfg.clip > 0.0 && info.grad_norm > cfg.clip) info.scale = cfg.clip / info.grad_norm;
  info.lr = cosine_lr(cfg, state.step);

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grad[k] * info.scale;
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[k] / bc1;
    const double vhat = state.v[k] / bc2;
    params[k] -= info.lr * cfg.weight_decay * params[k];
    params[k] -= info.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  return info;
}

// ---------------------------------------------------------------------------
// Metrics

double median(std::vector<double> values) {
  require(!values.empty(), Errc::EmptyInput, "median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MedianMetric median_rel_l1_from_errors(const std::vector<std::vector<double>>& errors) {
  require(!errors.empty(), Errc::EmptyInput, "no components");
  MedianMetric m;
  double sum = 0.0;
  for (const auto& comp : errors) sum += median(comp);
  m.percent = 100.0 * sum / static_cast<double>(errors.size());
  return m;
}

MedianMetric median_rel_l1(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths) {
  require(preds.size() == truths.size(), Errc::ShapeMismatch, "prediction/truth count");
  require(!preds.empty(), Errc::EmptyInput, "no samples");
  const std::size_t ch = truths.front().cols();
  std::vector<std::vector<double>> errors(ch);
  std::size_t excluded = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    require(preds[s].rows() == truths[s].rows() && preds[s].cols() == ch &&
                truths[s].cols() == ch,
            Errc::ShapeMismatch, "prediction shape differs from truth");
    for (std::size_t c = 0; c < ch; ++c) {
      double num = 0.0, den = 0.0;
      for (std::size_t r = 0; r < truths[s].rows(); ++r) {
        num += std::abs(truths[s](r, c) - preds[s](r, c));
        den += std::abs(truths[s](r, c));
      }
      if (den < 1e-30) {
        ++excluded;
        continue;
      }
      errors[c].push_back(num / den);
    }
  }
  std::vector<std::vector<double>> kept;
  for (auto& e : errors)
    if (!e.empty()) kept.push_back(std::move(e));
  if (kept.empty()) throw Error(Errc::ZeroTarget, "every sample-component has a zero target");
  MedianMetric m = median_rel_l1_from_errors(kept);
  m.excluded = excluded;
  return m;
}

namespace {

template <typename F>
double mean_over_entries(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths,
                         F f) {
  require(preds.size() == truths.size(), Errc::ShapeMismatch, "prediction/truth count");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    require(preds[k].values().size() == truths[k].values().size(), Errc::ShapeMismatch,
            "prediction shape differs from truth");
    for (std::size_t i = 0; i < preds[k].values().size(); ++i)
      s += f(preds[k].values()[i] - truths[k].values()[i]);
    n += preds[k].values().size();
  }
  require(n > 0, Errc::EmptyInput, "no entries");
  return s / static_cast<double>(n);
}

}  // namespace

double mse(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths) {
  return mean_over_entries(preds, truths, [](double r) { return r * r; });
}

double mae(std::span<const DenseMatrix> preds, std::span<const DenseMatrix> truths) {
  return mean_over_entries(preds, truths, [](double r) { return std::abs(r); });
}

EvalReport evaluate(const IknoModel& model, const ParamVector& params,
                    std::span<const SampleRecord> samples) {
  require(!samples.empty(), Errc::EmptyDataset, "nothing to evaluate");
  std::vector<DenseMatrix> preds(samples.size());
  std::vector<DenseMatrix> truths;
  std::vector<std::exception_ptr> errors(samples.size());
  const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(static) if (n > 1)
  for (long i = 0; i < n; ++i) {
    try {
      preds[i] = model.forward(params, samples[i].input, samples[i].queries);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  EvalReport r;
  r.samples = samples.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    truths.push_back(samples[i].target);
    const auto l = relative_l2_loss(samples[i].target.values(), preds[i].values());
    loss += l.value_or(0.0);
  }
  r.mean_loss = loss / static_cast<double>(samples.size());
  r.median_rel_l1 = median_rel_l1(preds, truths);
  r.mse = mse(preds, truths);
  r.mae = mae(preds, truths);
  return r;
}

// ---------------------------------------------------------------------------
// Rollout

std::vector<RolloutStep> rollout(RolloutMode mode, TemporalMode target_mode,
                                 const StatePredictor& predictor, std::span<const double> initial,
                                 std::span<const double> times) {
  require(times.size() >= 2, Errc::InvalidArgument, "rollout needs at least two time stamps");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1]))
      throw Error(Errc::NonMonotoneTimes, "time stamps must increase strictly");

  const double t0 = times.front();
  const double t_end = times.back();
  std::vector<RolloutStep> out{{t0, std::vector<double>(initial.begin(), initial.end())}};
  if (mode == RolloutMode::Direct) {
    const double tau = t_end - t0;
    const auto pred = predictor(initial, t0, tau);
    out.push_back({t_end, temporal_reconstruct(target_mode, initial, pred, tau)});
    return out;
  }
  double dt = INFINITY;
  for (std::size_t k = 1; k < times.size(); ++k) dt = std::min(dt, times[k] - times[k - 1]);
  const auto steps = static_cast<std::size_t>(std::llround((t_end - t0) / dt));
  for (std::size_t k = 1; k <= steps; ++k) {
    const auto& prev = out.back();
    const auto pred = predictor(prev.state, prev.t, dt);
    const double t = k == steps ? t_end : t0 + static_cast<double>(k) * dt;
    out.push_back({t, temporal_reconstruct(target_mode, prev.state, pred, dt)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step,
                                       std::size_t batch_size, std::size_t n) {
  require(n > 0, Errc::EmptyDataset, "no training samples");
  require(batch_size > 0, Errc::InvalidArgument, "batch size must be positive");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> perm(n);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t global = step * batch_size + b;
    const std::size_t epoch = global / n;
    if (epoch != cached_epoch) {
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng64 rng = Rng64::child(seed, epoch);
      for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[global % n]);
  }
  return out;
}

namespace {

void clamp_alpha(const IknoModel& model, ParamVector& params, double alpha_max) {
  if (model.config().kernel != KernelFamily::Learnable) return;
  for (std::size_t q = 0; q < model.config().branches; ++q) {
    double& a = params.values[model.kernel_index_alpha(q)];
    a = std::min(a, alpha_max);
  }
}

}  // namespace

TrainResult train(const IknoModel& model, ParamVector params, OptimizerState state,
                  std::span<const SampleRecord> data, const TrainConfig& cfg) {
  require(!data.empty(), Errc::EmptyDataset, "no training samples");
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, state.step == 0 ? std::ios::trunc : std::ios::app);
    require(log.good(), Errc::Io, "cannot open step log " + cfg.log_path.string());
  }
  TrainResult result;
  const auto t_start = std::chrono::steady_clock::now();
  clamp_alpha(model, params, cfg.alpha_max);

  while (state.step < cfg.steps) {
    const auto idx = batch_indices(cfg.seed, state.step, cfg.batch_size, data.size());
    std::vector<SampleRecord> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(data[i]);

    LossGradient lg;
    try {
      lg = grad_analytic(model, params, batch);
    } catch (const Error& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double loss = lg.loss_sum * inv_b;
    if (!std::isfinite(loss)) {
      result.aborted = true;
      result.abort_reason = "NonFiniteLoss: loss is not finite at step " + std::to_string(state.step);
      break;
    }
    for (auto& g : lg.grad) g *= inv_b;

    ParamVector next = params;
    OptimizerState next_state = state;
    StepInfo info;
    try {
      info = optimizer_step(cfg.optimizer, next_state, next.values, lg.grad);
    } catch (const Error& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    clamp_alpha(model, next, cfg.alpha_max);
    params = std::move(next);
    state = std::move(next_state);
    result.losses.push_back(loss);

    if (log.is_open() && (state.step % std::max<std::size_t>(1, cfg.log_every) == 0 ||
                          state.step == cfg.steps)) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      nlohmann::json j{{"step", state.step},
                       {"lr", info.lr},
                       {"loss", loss},
                       {"grad_norm", info.grad_norm},
                       {"wall_time_s", wall}};
      log << j.dump() << '\n';
    }
  }
  result.params = std::move(params);
  result.state = std::move(state);
  return result;
}

}  // namespace ikno
