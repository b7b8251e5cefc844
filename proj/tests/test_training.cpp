#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ikno/error.hpp"
#include "ikno/synthetic.hpp"
#include "ikno/training.hpp"
#include "test_util.hpp"

namespace ikno {
namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::Io;
}

TEST(Zscore, ConstantField) {
  const std::vector<DenseMatrix> f{DenseMatrix(4, 1, 3.5)};
  const NormStats s = zscore_fit(f);
  EXPECT_EQ(s.mu[0], 3.5);
  EXPECT_EQ(s.sigma[0], 0.0);
  const DenseMatrix z = zscore_apply(s, f[0]);
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Zscore, MinusOneOne) {
  const std::vector<DenseMatrix> f{DenseMatrix::from_rows({{-1}, {1}})};
  const NormStats s = zscore_fit(f);
  EXPECT_EQ(s.mu[0], 0.0);
  EXPECT_EQ(s.sigma[0], 1.0);
  const DenseMatrix n = zscore_apply(s, f[0]);
  EXPECT_NEAR(n(0, 0), -1.0, 1e-9);
  EXPECT_NEAR(n(1, 0), 1.0, 1e-9);
}

TEST(Zscore, RoundTrip) {
  Rng64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DenseMatrix> fields;
    for (int k = 0; k < 3; ++k) {
      DenseMatrix m = test::random_matrix(10, 3, rng);
      for (auto& v : m.values()) v = 5.0 + 3.0 * v;
      fields.push_back(m);
    }
    const NormStats s = zscore_fit(fields);
    for (const auto& f : fields) EXPECT_LE(max_abs_diff(zscore_invert(s, zscore_apply(s, f)), f), 1e-12);
  }
}

TEST(Zscore, EmptyRejected) {
  const std::vector<DenseMatrix> none;
  EXPECT_EQ(code_of([&] { zscore_fit(none); }), Errc::EmptyDataset);
}

TEST(RelativeL2, Values) {
  const std::vector<double> y{3, 4}, zero{0, 0}, half{3, 0};
  EXPECT_EQ(*relative_l2_loss(y, y), 0.0);
  EXPECT_EQ(*relative_l2_loss(y, zero), 1.0);
  EXPECT_DOUBLE_EQ(*relative_l2_loss(y, half), 0.8);
  EXPECT_FALSE(relative_l2_loss(zero, y).has_value());
}

TEST(RelativeL2, ScaleInvariantAndNonnegative) {
  Rng64 rng(2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> y(7), yh(7);
    for (auto& v : y) v = rng.uniform(-1, 1);
    for (auto& v : yh) v = rng.uniform(-1, 1);
    const double l = *relative_l2_loss(y, yh);
    EXPECT_GE(l, 0.0);
    const double s = rng.uniform(0.1, 10.0);
    std::vector<double> ys(y), yhs(yh);
    for (auto& v : ys) v *= s;
    for (auto& v : yhs) v *= s;
    EXPECT_NEAR(*relative_l2_loss(ys, yhs), l, 1e-12);
  }
}

TEST(Temporal, HandValues) {
  const std::vector<double> now{1.0}, fut{3.0};
  EXPECT_EQ(temporal_target(TemporalMode::Derivative, now, fut, 2.0), std::vector<double>{1.0});
  const std::vector<double> one{1.0};
  EXPECT_EQ(temporal_reconstruct(TemporalMode::Derivative, now, one, 2.0), std::vector<double>{3.0});
  EXPECT_EQ(temporal_target(TemporalMode::Residual, now, now, 0.5), std::vector<double>{0.0});
  EXPECT_EQ(temporal_target(TemporalMode::Direct, now, fut, 0.5), fut);
}

TEST(Temporal, RoundTripExactOnDyadicFixtures) {
  const std::vector<double> now{0.5, -1.25, 3.0, 0.0}, fut{0.75, 2.5, -1.0, 0.125};
  for (auto mode : {TemporalMode::Direct, TemporalMode::Residual, TemporalMode::Derivative})
    for (double tau : {0.25, 1.0, 2.0}) {
      const auto t = temporal_target(mode, now, fut, tau);
      EXPECT_EQ(temporal_reconstruct(mode, now, t, tau), fut) << to_string(mode);
    }
}

TEST(Temporal, RoundTripRandom) {
  Rng64 rng(3);
  for (auto mode : {TemporalMode::Direct, TemporalMode::Residual, TemporalMode::Derivative})
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> now(9), fut(9);
      for (auto& v : now) v = rng.uniform(-2, 2);
      for (auto& v : fut) v = rng.uniform(-2, 2);
      const double tau = rng.uniform(0.01, 3.0);
      const auto back = temporal_reconstruct(mode, now, temporal_target(mode, now, fut, tau), tau);
      for (std::size_t i = 0; i < fut.size(); ++i) EXPECT_NEAR(back[i], fut[i], 1e-12);
    }
}

TEST(Temporal, NonpositiveTau) {
  const std::vector<double> a{1.0};
  for (auto mode : {TemporalMode::Direct, TemporalMode::Residual, TemporalMode::Derivative}) {
    EXPECT_EQ(code_of([&] { temporal_target(mode, a, a, 0.0); }), Errc::NonpositiveTau);
    EXPECT_EQ(code_of([&] { temporal_reconstruct(mode, a, a, -1.0); }), Errc::NonpositiveTau);
  }
}

TEST(All2All, Enumeration) {
  const std::vector<double> t2{0, 1};
  const auto p2 = all2all_pairs(t2);
  ASSERT_EQ(p2.size(), 1u);
  EXPECT_EQ(p2[0].t_now, 0.0);
  EXPECT_EQ(p2[0].tau, 1.0);
  const std::vector<double> t3{0, 1, 2};
  const auto p3 = all2all_pairs(t3);
  ASSERT_EQ(p3.size(), 3u);
  EXPECT_EQ(p3[0].tau, 1.0);
  EXPECT_EQ(p3[1].tau, 2.0);
  EXPECT_EQ(p3[2].tau, 1.0);
  std::vector<double> t11(11);
  for (int i = 0; i < 11; ++i) t11[i] = 0.1 * i;
  EXPECT_EQ(all2all_pairs(t11).size(), 55u);
  const std::vector<double> bad{0, 1, 1};
  EXPECT_EQ(code_of([&] { all2all_pairs(bad); }), Errc::NonMonotoneTimes);
}

TEST(GradFd, QuadraticAndConstant) {
  const std::vector<double> theta{0.3, -1.2, 2.5};
  const auto g = grad_fd(
      [](std::span<const double> v) {
        double s = 0;
        for (double x : v) s += x * x;
        return 0.5 * s;
      },
      theta);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], theta[i], 1e-8);
  for (double v : grad_fd([](std::span<const double>) { return 4.0; }, theta)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(code_of([&] { grad_fd([](std::span<const double>) { return NAN; }, theta); }),
            Errc::NonFiniteLoss);
}

TEST(Optimizer, ZeroGradientNoDecay) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState st;
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.0, 0.0};
  optimizer_step(cfg, st, p, g);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Optimizer, ClipScalesGradient) {
  AdamWConfig cfg;
  OptimizerState st;
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{6.0, 8.0};
  const StepInfo info = optimizer_step(cfg, st, p, g);
  EXPECT_DOUBLE_EQ(info.grad_norm, 10.0);
  EXPECT_DOUBLE_EQ(info.scale, 0.1);
  EXPECT_NEAR(st.m[0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(st.m[1], 0.1 * 0.8, 1e-15);
}

TEST(Optimizer, ScalarStepByHand) {
  AdamWConfig cfg;
  cfg.lr0 = 0.1;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.75;
  cfg.eps = 0.0;
  cfg.weight_decay = 0.5;
  cfg.clip = 0.0;
  cfg.horizon = 0;  // constant rate
  OptimizerState st;
  std::vector<double> p{2.0};
  const std::vector<double> g{0.5};
  optimizer_step(cfg, st, p, g);
  // m̂ = 0.5, v̂ = 0.25; decay: 2 - 0.1·0.5·2 = 1.9; then 1.9 - 0.1·(0.5/0.5) = 1.8
  EXPECT_DOUBLE_EQ(p[0], 1.8);
  EXPECT_EQ(code_of([&] {
              const std::vector<double> bad{NAN};
              optimizer_step(cfg, st, p, bad);
            }),
            Errc::NonFiniteGradient);
}

TEST(Optimizer, CosineSchedule) {
  AdamWConfig cfg;
  cfg.lr0 = 1.0;
  cfg.final_lr_ratio = 0.0;
  cfg.horizon = 100;
  EXPECT_DOUBLE_EQ(cosine_lr(cfg, 0), 1.0);
  EXPECT_NEAR(cosine_lr(cfg, 50), 0.5, 1e-15);
  EXPECT_NEAR(cosine_lr(cfg, 100), 0.0, 1e-15);
  EXPECT_NEAR(cosine_lr(cfg, 200), 0.0, 1e-15);
}

TEST(Median, HandFixtures) {
  EXPECT_DOUBLE_EQ(median_rel_l1_from_errors({{0.1, 0.2, 0.3}}).percent, 20.0);
  EXPECT_DOUBLE_EQ(median_rel_l1_from_errors({{0.1, 0.2}}).percent, 15.0);
  EXPECT_DOUBLE_EQ(median_rel_l1_from_errors({{0.3, 0.1, 0.2}, {0.5}}).percent, 35.0);
}

TEST(Median, PerfectPredictionsAndExclusion) {
  const std::vector<DenseMatrix> truth{DenseMatrix::from_rows({{1}, {-2}}), DenseMatrix(2, 1)};
  const MedianMetric m = median_rel_l1(truth, truth);
  EXPECT_EQ(m.percent, 0.0);
  EXPECT_EQ(m.excluded, 1u);
}

TEST(Median, OrderInvariantAndMedianCarrier) {
  std::vector<DenseMatrix> truth, pred;
  const double errs[] = {0.1, 0.4, 0.2, 0.3, 0.5};
  for (double e : errs) {
    truth.push_back(DenseMatrix::from_rows({{1.0}, {1.0}}));
    pred.push_back(DenseMatrix::from_rows({{1.0 + e}, {1.0 - e}}));
  }
  const double base = median_rel_l1(pred, truth).percent;
  EXPECT_NEAR(base, 30.0, 1e-12);
  std::vector<DenseMatrix> rp(pred.rbegin(), pred.rend()), rt(truth.rbegin(), truth.rend());
  EXPECT_EQ(median_rel_l1(rp, rt).percent, base);
  // worsening the median carrier (0.3) raises the metric
  auto worse = pred;
  worse[3] = DenseMatrix::from_rows({{1.35}, {0.65}});
  EXPECT_GT(median_rel_l1(worse, truth).percent, base);
  // worsening a sample above the median does not
  worse = pred;
  worse[4] = DenseMatrix::from_rows({{3.0}, {-1.0}});
  EXPECT_EQ(median_rel_l1(worse, truth).percent, base);
}

TEST(Metrics, MseMae) {
  const std::vector<DenseMatrix> t{DenseMatrix::from_rows({{1}, {2}})};
  const std::vector<DenseMatrix> p{DenseMatrix::from_rows({{0}, {4}})};
  EXPECT_DOUBLE_EQ(mse(p, t), 2.5);
  EXPECT_DOUBLE_EQ(mae(p, t), 1.5);
}

TEST(BatchIndices, EpochPermutations) {
  const std::size_t n = 10, b = 4;
  std::vector<std::size_t> seen;
  for (std::size_t step = 0; step < 5; ++step) {
    const auto idx = batch_indices(7, step, b, n);
    EXPECT_EQ(idx, batch_indices(7, step, b, n));
    seen.insert(seen.end(), idx.begin(), idx.end());
  }
  for (std::size_t e = 0; e < 2; ++e) {
    std::vector<std::size_t> epoch(seen.begin() + e * n, seen.begin() + (e + 1) * n);
    std::sort(epoch.begin(), epoch.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(epoch[i], i);
  }
  EXPECT_NE(batch_indices(8, 0, b, n), batch_indices(7, 0, b, n));
}

TEST(Rollout, ModesAndIdentityDynamics) {
  const std::vector<double> u0{1.0, -0.5}, times{0.0, 0.1, 0.2, 0.3, 0.4};
  // residual target of constant dynamics is zero
  const StatePredictor zero = [](std::span<const double> s, double, double) {
    return std::vector<double>(s.size(), 0.0);
  };
  for (auto mode : {RolloutMode::Direct, RolloutMode::Autoregressive}) {
    const auto traj = rollout(mode, TemporalMode::Residual, zero, u0, times);
    EXPECT_EQ(traj.size(), mode == RolloutMode::Direct ? 2u : 5u);
    EXPECT_EQ(traj.back().state, u0);
    EXPECT_DOUBLE_EQ(traj.back().t, 0.4);
  }
  // derivative target with constant slope 2
  const StatePredictor slope = [](std::span<const double> s, double, double) {
    return std::vector<double>(s.size(), 2.0);
  };
  const auto ar = rollout(RolloutMode::Autoregressive, TemporalMode::Derivative, slope, u0, times);
  const auto direct = rollout(RolloutMode::Direct, TemporalMode::Derivative, slope, u0, times);
  EXPECT_NEAR(ar.back().state[0], 1.8, 1e-12);
  EXPECT_NEAR(direct.back().state[0], 1.8, 1e-12);
  const std::vector<double> bad{0.0, 0.0};
  EXPECT_EQ(code_of([&] { rollout(RolloutMode::Direct, TemporalMode::Direct, zero, u0, bad); }),
            Errc::NonMonotoneTimes);
}

struct SmallRun : ::testing::Test {
  static Dataset data() {
    CSinesSpec s;
    s.num_train = 12;
    s.num_test = 6;
    s.input_points = 24;
    s.query_points = 16;
    s.seed = 5;
    return gen_csines(s);
  }
  static ModelConfig config() {
    ModelConfig c;
    c.grid_points = 4;
    c.hidden = 8;
    c.branches = 2;
    c.processor_width = 8;
    return c;
  }
};

TEST_F(SmallRun, DeterministicAndImproves) {
  const Dataset raw = data();
  const DatasetNorm norm = fit_dataset_norm(raw);
  const Dataset d = apply_dataset_norm(norm, raw);
  const IknoModel model(config());
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.seed = 1;
  cfg.optimizer.lr0 = 5e-3;
  cfg.optimizer.horizon = cfg.steps;
  const ParamVector init = model.init_params(1);
  const TrainResult a = train(model, init, {}, d.train, cfg);
  const TrainResult b = train(model, init, {}, d.train, cfg);
  ASSERT_FALSE(a.aborted);
  EXPECT_EQ(a.params.values, b.params.values);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.state.step, 60u);
  const double before = evaluate(model, init, d.train).mean_loss;
  const double after = evaluate(model, a.params, d.train).mean_loss;
  EXPECT_TRUE(std::isfinite(before));
  EXPECT_LT(after, before);
}

TEST_F(SmallRun, ResumeMatchesStraightRun) {
  const Dataset d = apply_dataset_norm(fit_dataset_norm(data()), data());
  const IknoModel model(config());
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.optimizer.horizon = 20;
  const TrainResult full = train(model, model.init_params(2), {}, d.train, cfg);
  TrainConfig half = cfg;
  half.steps = 10;
  const TrainResult first = train(model, model.init_params(2), {}, d.train, half);
  const TrainResult second = train(model, first.params, first.state, d.train, cfg);
  EXPECT_EQ(second.params.values, full.params.values);
  EXPECT_EQ(second.state.v, full.state.v);
}

TEST_F(SmallRun, AlphaClampedAndLogWritten) {
  const Dataset d = apply_dataset_norm(fit_dataset_norm(data()), data());
  ModelConfig c = config();
  c.init_alpha = 0.5;  // positive start is pulled back to the stable side
  const IknoModel model(c);
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.log_path = std::filesystem::temp_directory_path() / "ikno_train_log_test.jsonl";
  const TrainResult r = train(model, model.init_params(0), {}, d.train, cfg);
  for (std::size_t q = 0; q < c.branches; ++q) EXPECT_LE(r.params.values[model.kernel_index_alpha(q)], -1e-4);
  std::ifstream log(cfg.log_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 3u);
  std::filesystem::remove(cfg.log_path);
}

TEST_F(SmallRun, NonFiniteLossAborts) {
  Dataset d = apply_dataset_norm(fit_dataset_norm(data()), data());
  d.train[0].input.values[0] = NAN;
  const IknoModel model(config());
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 12;
  const ParamVector init = model.init_params(0);
  const TrainResult r = train(model, init, {}, d.train, cfg);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.params.values, init.values);
  EXPECT_EQ(r.state.step, 0u);
}

TEST(DatasetNorm, RoundTripOnTargets) {
  CSinesSpec s;
  s.num_train = 5;
  s.num_test = 2;
  s.input_points = 10;
  s.query_points = 8;
  const Dataset raw = gen_csines(s);
  const DatasetNorm norm = fit_dataset_norm(raw);
  const Dataset n = apply_dataset_norm(norm, raw);
  for (std::size_t i = 0; i < raw.test.size(); ++i)
    EXPECT_LE(max_abs_diff(zscore_invert(norm.targets, n.test[i].target), raw.test[i].target), 1e-12);
}

}  // namespace
}  // namespace ikno
