#pragma once

// Deterministic desk-scale datasets on [-1, 1]^d. Every sample draws from its
// own generator, Rng64::child(seed, sample_index); test samples continue the
// index after the training samples.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ikno/dataset.hpp"
#include "ikno/kernels.hpp"
#include "ikno/linalg.hpp"
#include "ikno/rng.hpp"
#include "ikno/training.hpp"

namespace ikno {

/// u(x) = Σ_k a_k ∏_j sin(π k_j (x_j + 1) / 2) for 1 <= k_j <= max_mode,
/// with the condition a = -Δu computed analytically.
struct CSinesSpec {
  std::size_t num_train = 256;
  std::size_t num_test = 64;
  std::size_t dim = 2;
  std::size_t max_mode = 2;
  double amp_lo = -1.0;
  double amp_hi = 1.0;
  std::size_t input_points = 128;
  std::size_t query_points = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CSinesModes {
  std::vector<std::vector<std::size_t>> modes;  // multi-indices k
  std::vector<double> amplitudes;
};

double csines_u(const CSinesModes& m, std::span<const double> x);
double csines_f(const CSinesModes& m, std::span<const double> x);  // -Δu

Dataset gen_csines(const CSinesSpec& spec);

enum class CloudMode { Grid, Continuous };

/// Grid mode: a deterministic shuffle of `pool`, first n rows, no duplicates;
/// throws TooManyRequested when n exceeds the pool. Continuous mode draws n
/// uniform points in [lo, hi]^dim.
PointCloud subsample_grid(const PointCloud& pool, std::size_t n, Rng64& rng);
PointCloud subsample_continuous(std::size_t dim, std::size_t n, Rng64& rng, double lo = -1.0,
                                double hi = 1.0);

struct PoissonSolution {
  DenseMatrix u;  // H x H nodes, boundary rows/cols zero
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Solves -Δ_h u = f on the H x H node grid of [-1, 1]² with zero Dirichlet
/// boundary, 5-point stencil, conjugate gradients to ‖r‖ <= tol·‖f‖.
/// f(i, j) is the source at x = -1 + i·h, y = -1 + j·h. Throws NoConvergence.
PoissonSolution solve_poisson_fd(const DenseMatrix& f, double tol = 1e-10,
                                 std::size_t max_iterations = 0);

/// Discrete -Δ_h u at the interior nodes (zero on the boundary).
DenseMatrix poisson_operator(const DenseMatrix& u);

/// Bilinear interpolation of node values on [-1, 1]² at (x, y).
double bilinear(const DenseMatrix& nodes, double x, double y);

struct PoissonGaussSpec {
  std::size_t num_train = 256;
  std::size_t num_test = 64;
  std::size_t min_sources = 1;
  std::size_t max_sources = 3;
  double amp_lo = 0.5;
  double amp_hi = 2.0;
  double width_lo = 0.1;
  double width_hi = 0.3;
  std::size_t solver_res = 65;  // H
  std::size_t input_points = 128;
  std::size_t query_points = 128;
  CloudMode cloud = CloudMode::Continuous;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GaussSource {
  double cx, cy, amplitude, width;
};

double gauss_source_field(std::span<const GaussSource> sources, double x, double y);

/// Source field sampled on the H x H solver nodes.
DenseMatrix gauss_source_nodes(std::span<const GaussSource> sources, std::size_t h);

Dataset gen_poisson_gauss(const PoissonGaussSpec& spec);

/// Periodic advection on [-1, 1): u(x, t) = u0(x - v t), period 2, with
/// u0(x) = Σ_k a_k sin(π k x) + b_k cos(π k x).
struct ToyTrajectorySpec {
  std::size_t num_train = 16;
  std::size_t num_test = 4;
  std::size_t stamps = 5;  // m + 1
  double dt = 0.1;
  double velocity = 0.5;
  std::size_t modes = 2;
  std::size_t points = 64;
  TemporalMode target_mode = TemporalMode::Residual;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Trajectory {
  PointCloud points;                          // 1-D coordinates
  std::vector<double> times;
  std::vector<std::vector<double>> snapshots;  // per time stamp
  std::vector<double> sin_coef, cos_coef;
};

double advection_u0(const Trajectory& tr, double x);
double advection_u0_dx(const Trajectory& tr, double x);

std::vector<Trajectory> gen_toy_trajectories(const ToyTrajectorySpec& spec, std::size_t first_index,
                                             std::size_t count);

/// all2all records of a trajectory: conditions (u_now, t_i, τ), target from
/// temporal_target.
std::vector<SampleRecord> temporal_records(const Trajectory& tr, TemporalMode mode);

/// Temporal dataset with one record per all2all pair of every trajectory.
Dataset gen_toy_trajectory(const ToyTrajectorySpec& spec);

}  // namespace ikno
