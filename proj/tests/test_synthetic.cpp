#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ikno/error.hpp"
#include "ikno/synthetic.hpp"

namespace ikno {
namespace {

constexpr double kPi = std::numbers::pi;

bool same_records(const std::vector<SampleRecord>& a, const std::vector<SampleRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].input.coords != b[i].input.coords || a[i].input.values != b[i].input.values ||
        a[i].queries.coords != b[i].queries.coords || a[i].target.values() != b[i].target.values())
      return false;
  return true;
}

TEST(CSines, SingleModeRatio) {
  const CSinesModes m{{{1, 1}}, {1.0}};
  for (double x : {-0.7, -0.1, 0.3, 0.8})
    for (double y : {-0.5, 0.2, 0.9}) {
      const std::vector<double> p{x, y};
      EXPECT_NEAR(csines_f(m, p) / csines_u(m, p), kPi * kPi * 2.0 / 4.0, 1e-12);
    }
}

TEST(CSines, LaplacianFourthOrderSpotCheck) {
  const CSinesModes m{{{1, 2}, {2, 1}, {2, 2}}, {0.7, -0.4, 0.3}};
  const std::vector<double> x0{0.23, -0.41};
  auto fd_error = [&](double h) {
    // fourth-order central second derivative per axis
    double lap = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      auto at = [&](double s) {
        std::vector<double> p = x0;
        p[j] += s;
        return csines_u(m, p);
      };
      lap += (-at(2 * h) + 16 * at(h) - 30 * at(0) + 16 * at(-h) - at(-2 * h)) / (12 * h * h);
    }
    return std::abs(-lap - csines_f(m, x0));
  };
  const double e1 = fd_error(0.04), e2 = fd_error(0.02);
  EXPECT_LT(e2, 1e-4);
  EXPECT_GT(e1 / e2, 12.0);
  EXPECT_LT(e1 / e2, 20.0);
}

TEST(CSines, DeterministicShapesAndConditions) {
  CSinesSpec s;
  s.num_train = 6;
  s.num_test = 3;
  s.dim = 3;
  s.input_points = 20;
  s.query_points = 11;
  s.seed = 7;
  const Dataset a = gen_csines(s), b = gen_csines(s);
  EXPECT_TRUE(same_records(a.train, b.train));
  EXPECT_TRUE(same_records(a.test, b.test));
  ASSERT_EQ(a.train.size(), 6u);
  ASSERT_EQ(a.test.size(), 3u);
  EXPECT_EQ(a.train[0].input.size(), 20u);
  EXPECT_EQ(a.train[0].queries.size(), 11u);
  EXPECT_EQ(a.train[0].input.dim, 3u);
  s.seed = 8;
  EXPECT_FALSE(same_records(gen_csines(s).train, a.train));
  for (double v : a.train[0].input.coords) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Subsample, GridAllIsPermutation) {
  const PointCloud pool = grid_linspace(2, 5).as_cloud();
  Rng64 rng(1);
  const PointCloud all = subsample_grid(pool, pool.size(), rng);
  std::vector<std::vector<double>> a, b;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    a.emplace_back(pool.point(i).begin(), pool.point(i).end());
    b.emplace_back(all.point(i).begin(), all.point(i).end());
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Subsample, SinglePointReproducible) {
  const PointCloud pool = grid_linspace(2, 5).as_cloud();
  Rng64 r1(9), r2(9);
  EXPECT_EQ(subsample_grid(pool, 1, r1).coords, subsample_grid(pool, 1, r2).coords);
  Rng64 r3(3);
  try {
    subsample_grid(pool, 26, r3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooManyRequested);
  }
}

TEST(Subsample, ContinuousMean) {
  Rng64 rng(4);
  const PointCloud c = subsample_continuous(2, 1000, rng);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    mx += c.coord(i, 0);
    my += c.coord(i, 1);
  }
  EXPECT_LT(std::abs(mx / 1000), 0.1);
  EXPECT_LT(std::abs(my / 1000), 0.1);
}

DenseMatrix sine_source(std::size_t h) {
  DenseMatrix f(h, h);
  const double step = 2.0 / static_cast<double>(h - 1);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const double x = -1 + step * i, y = -1 + step * j;
      f(i, j) = 2 * kPi * kPi / 4 * std::sin(kPi * (x + 1) / 2) * std::sin(kPi * (y + 1) / 2);
    }
  return f;
}

double sine_error(std::size_t h) {
  const PoissonSolution s = solve_poisson_fd(sine_source(h));
  const double step = 2.0 / static_cast<double>(h - 1);
  double err = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      const double x = -1 + step * i, y = -1 + step * j;
      err = std::max(err, std::abs(s.u(i, j) - std::sin(kPi * (x + 1) / 2) * std::sin(kPi * (y + 1) / 2)));
    }
  return err;
}

TEST(Poisson, ZeroSource) {
  const PoissonSolution s = solve_poisson_fd(DenseMatrix(17, 17));
  for (double v : s.u.values()) EXPECT_EQ(v, 0.0);
}

TEST(Poisson, SecondOrderConvergence) {
  const double e33 = sine_error(33), e65 = sine_error(65), e129 = sine_error(129);
  EXPECT_GE(e33 / e65, 3.5);
  EXPECT_LE(e33 / e65, 4.5);
  EXPECT_GE(e65 / e129, 3.5);
  EXPECT_LE(e65 / e129, 4.5);
}

TEST(Poisson, DiscreteResidual) {
  Rng64 rng(5);
  DenseMatrix f(33, 33);
  for (std::size_t i = 1; i + 1 < 33; ++i)
    for (std::size_t j = 1; j + 1 < 33; ++j) f(i, j) = rng.uniform(-1, 1);
  const PoissonSolution s = solve_poisson_fd(f);
  const DenseMatrix lap = poisson_operator(s.u);
  double num = 0, den = 0;
  for (std::size_t i = 1; i + 1 < 33; ++i)
    for (std::size_t j = 1; j + 1 < 33; ++j) {
      num += std::pow(lap(i, j) - f(i, j), 2);
      den += f(i, j) * f(i, j);
    }
  EXPECT_LE(std::sqrt(num), 1e-10 * std::sqrt(den));
}

TEST(Poisson, NarrowSourcePeak) {
  const std::size_t h = 65;
  const std::vector<GaussSource> src{{0.3, -0.2, 1.5, 0.05}};
  const PoissonSolution s = solve_poisson_fd(gauss_source_nodes(src, h));
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j)
      if (std::abs(s.u(i, j)) > std::abs(s.u(bi, bj))) {
        bi = i;
        bj = j;
      }
  const double step = 2.0 / static_cast<double>(h - 1);
  EXPECT_LE(std::abs(-1 + step * bi - 0.3), step);
  EXPECT_LE(std::abs(-1 + step * bj + 0.2), step);
}

TEST(Poisson, BilinearReproducesNodes) {
  DenseMatrix n(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) n(i, j) = static_cast<double>(i * 3 + j);
  EXPECT_DOUBLE_EQ(bilinear(n, 0.0, 0.0), 4.0);
  EXPECT_DOUBLE_EQ(bilinear(n, 1.0, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(bilinear(n, 0.5, 0.0), 5.5);
}

TEST(PoissonGauss, DeterministicAndZeroAmplitude) {
  PoissonGaussSpec s;
  s.num_train = 3;
  s.num_test = 1;
  s.solver_res = 33;
  s.input_points = 16;
  s.query_points = 12;
  s.seed = 2;
  const Dataset a = gen_poisson_gauss(s), b = gen_poisson_gauss(s);
  EXPECT_TRUE(same_records(a.train, b.train));
  s.amp_lo = s.amp_hi = 0.0;
  const Dataset z = gen_poisson_gauss(s);
  for (const auto& r : z.train)
    for (double v : r.target.values()) EXPECT_EQ(v, 0.0);
  s.amp_lo = 0.5;
  s.amp_hi = 2.0;
  s.cloud = CloudMode::Grid;
  const Dataset g = gen_poisson_gauss(s);
  EXPECT_EQ(g.train[0].input.size(), 16u);
}

TEST(ToyTrajectory, ZeroVelocityIsStatic) {
  ToyTrajectorySpec s;
  s.velocity = 0.0;
  const auto trs = gen_toy_trajectories(s, 0, 2);
  for (const auto& tr : trs)
    for (const auto& snap : tr.snapshots) EXPECT_EQ(snap, tr.snapshots.front());
}

TEST(ToyTrajectory, FullPeriodReturns) {
  ToyTrajectorySpec s;
  s.velocity = 0.5;
  s.stamps = 5;
  s.dt = 1.0;  // t = 4 is one period 2 / v
  for (const auto& tr : gen_toy_trajectories(s, 0, 3))
    for (std::size_t i = 0; i < tr.snapshots.front().size(); ++i)
      EXPECT_NEAR(tr.snapshots.back()[i], tr.snapshots.front()[i], 1e-12);
}

TEST(ToyTrajectory, RecordsReconstructFuture) {
  ToyTrajectorySpec s;
  const Trajectory tr = gen_toy_trajectories(s, 0, 1).front();
  for (auto mode : {TemporalMode::Direct, TemporalMode::Residual, TemporalMode::Derivative}) {
    const auto recs = temporal_records(tr, mode);
    const auto pairs = all2all_pairs(tr.times);
    ASSERT_EQ(recs.size(), pairs.size());
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto& r = recs[k];
      ASSERT_TRUE(r.time.has_value());
      EXPECT_EQ(r.time->tau, pairs[k].tau);
      EXPECT_EQ(r.input.channels, 3u);
      std::vector<double> now(r.input.size());
      for (std::size_t i = 0; i < now.size(); ++i) {
        now[i] = r.input.values[i * 3];
        EXPECT_EQ(r.input.values[i * 3 + 1], pairs[k].t_now);
        EXPECT_EQ(r.input.values[i * 3 + 2], pairs[k].tau);
      }
      const auto fut = temporal_reconstruct(mode, now, r.target.values(), r.time->tau);
      for (std::size_t i = 0; i < fut.size(); ++i) EXPECT_NEAR(fut[i], tr.snapshots[pairs[k].j][i], 1e-12);
    }
  }
  const Dataset d = gen_toy_trajectory(s);
  EXPECT_EQ(d.train.size(), s.num_train * 10);
  EXPECT_EQ(d.dim, 1u);
}

}  // namespace
}  // namespace ikno
