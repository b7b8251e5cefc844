#include "ikno/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <string>

#include "json.hpp"

#include "ikno/error.hpp"

namespace ikno {

namespace {

constexpr double kPi = std::numbers::pi;

// index → multi-index with every component in [1, max_mode]
std::vector<std::vector<std::size_t>> enumerate_modes(std::size_t dim, std::size_t max_mode) {
  std::vector<std::vector<std::size_t>> out{{}};
  for (std::size_t j = 0; j < dim; ++j) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& prefix : out)
      for (std::size_t k = 1; k <= max_mode; ++k) {
        auto m = prefix;
        m.push_back(k);
        next.push_back(std::move(m));
      }
    out = std::move(next);
  }
  return out;
}

double sine_product(const std::vector<std::size_t>& k, std::span<const double> x) {
  double v = 1.0;
  for (std::size_t j = 0; j < k.size(); ++j)
    v *= std::sin(kPi * static_cast<double>(k[j]) * (x[j] + 1.0) / 2.0);
  return v;
}

PointCloud with_channel(PointCloud cloud, std::vector<double> values, std::size_t channels) {
  return PointCloud(cloud.dim, std::move(cloud.coords), channels, std::move(values));
}

}  // namespace

void CSinesSpec::validate() const {
  require(dim >= 1, Errc::InvalidArgument, "csines dim must be >= 1");
  require(max_mode >= 1, Errc::InvalidArgument, "csines max_mode must be >= 1");
  require(amp_lo <= amp_hi, Errc::BadRange, "csines amplitude range");
  require(input_points >= 1 && query_points >= 1, Errc::InvalidArgument,
          "csines needs input and query points");
}

double csines_u(const CSinesModes& m, std::span<const double> x) {
  double u = 0.0;
  for (std::size_t i = 0; i < m.modes.size(); ++i) u += m.amplitudes[i] * sine_product(m.modes[i], x);
  return u;
}

double csines_f(const CSinesModes& m, std::span<const double> x) {
  double f = 0.0;
  for (std::size_t i = 0; i < m.modes.size(); ++i) {
    double k2 = 0.0;
    for (auto k : m.modes[i]) k2 += static_cast<double>(k * k);
    f += m.amplitudes[i] * (kPi * kPi * k2 / 4.0) * sine_product(m.modes[i], x);
  }
  return f;
}

Dataset gen_csines(const CSinesSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.kind = "csines";
  ds.dim = spec.dim;
  ds.seed = spec.seed;
  ds.condition_names = {"f"};
  ds.target_names = {"u"};
  ds.spec_json = nlohmann::json{{"num_train", spec.num_train},
                                {"num_test", spec.num_test},
                                {"dim", spec.dim},
                                {"max_mode", spec.max_mode},
                                {"amp_lo", spec.amp_lo},
                                {"amp_hi", spec.amp_hi},
                                {"input_points", spec.input_points},
                                {"query_points", spec.query_points}}
                     .dump();
  const auto modes = enumerate_modes(spec.dim, spec.max_mode);
  const std::size_t total = spec.num_train + spec.num_test;
  std::vector<SampleRecord> all(total);
  const long n = static_cast<long>(total);
#pragma omp parallel for schedule(static)
  for (long s = 0; s < n; ++s) {
    Rng64 rng = Rng64::child(spec.seed, static_cast<std::uint64_t>(s));
    CSinesModes m{modes, {}};
    for (std::size_t i = 0; i < modes.size(); ++i)
      m.amplitudes.push_back(rng.uniform(spec.amp_lo, spec.amp_hi));
    PointCloud in = subsample_continuous(spec.dim, spec.input_points, rng);
    PointCloud q = subsample_continuous(spec.dim, spec.query_points, rng);
    std::vector<double> f(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) f[i] = csines_f(m, in.point(i));
    DenseMatrix u(q.size(), 1);
    for (std::size_t i = 0; i < q.size(); ++i) u(i, 0) = csines_u(m, q.point(i));
    all[s] = SampleRecord{with_channel(std::move(in), std::move(f), 1), std::move(q), std::move(u),
                          std::nullopt};
  }
  ds.train.assign(all.begin(), all.begin() + static_cast<long>(spec.num_train));
  ds.test.assign(all.begin() + static_cast<long>(spec.num_train), all.end());
  return ds;
}

PointCloud subsample_grid(const PointCloud& pool, std::size_t n, Rng64& rng) {
  if (n > pool.size())
    throw Error(Errc::TooManyRequested, "requested " + std::to_string(n) + " of " +
                                            std::to_string(pool.size()) + " points");
  std::vector<std::size_t> perm(pool.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
  perm.resize(n);
  return pool.subset(perm);
}

PointCloud subsample_continuous(std::size_t dim, std::size_t n, Rng64& rng, double lo, double hi) {
  require(n >= 1, Errc::InvalidArgument, "continuous subsampling needs n >= 1");
  std::vector<double> coords(n * dim);
  for (auto& c : coords) c = rng.uniform(lo, hi);
  return PointCloud(dim, std::move(coords));
}

// ---------------------------------------------------------------------------
// Poisson solver

DenseMatrix poisson_operator(const DenseMatrix& u) {
  const std::size_t h_nodes = u.rows();
  const double h = 2.0 / static_cast<double>(h_nodes - 1);
  const double inv_h2 = 1.0 / (h * h);
  DenseMatrix out(h_nodes, h_nodes);
  for (std::size_t i = 1; i + 1 < h_nodes; ++i)
    for (std::size_t j = 1; j + 1 < h_nodes; ++j)
      out(i, j) = (4.0 * u(i, j) - u(i - 1, j) - u(i + 1, j) - u(i, j - 1) - u(i, j + 1)) * inv_h2;
  return out;
}

PoissonSolution solve_poisson_fd(const DenseMatrix& f, double tol, std::size_t max_iterations) {
  require(f.square() && f.rows() >= 3, Errc::InvalidArgument, "solver grid must be H x H, H >= 3");
  require(f.all_finite(), Errc::InvalidArgument, "source field is not finite");
  const std::size_t hn = f.rows();
  const std::size_t n = hn - 2;
  const double h = 2.0 / static_cast<double>(hn - 1);
  const double inv_h2 = 1.0 / (h * h);
  if (max_iterations == 0) max_iterations = 10 * n * n + 100;

  auto at = [n](std::size_t i, std::size_t j) { return (i - 1) * n + (j - 1); };
  std::vector<double> b(n * n);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= n; ++j) b[at(i, j)] = f(i, j);

  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 1; i <= n; ++i)
      for (std::size_t j = 1; j <= n; ++j) {
        double s = 4.0 * x[at(i, j)];
        if (i > 1) s -= x[at(i - 1, j)];
        if (i < n) s -= x[at(i + 1, j)];
        if (j > 1) s -= x[at(i, j - 1)];
        if (j < n) s -= x[at(i, j + 1)];
        y[at(i, j)] = s * inv_h2;
      }
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * c[i];
    return s;
  };

  PoissonSolution sol;
  sol.u = DenseMatrix(hn, hn);
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) return sol;

  std::vector<double> x(n * n, 0.0), r = b, p = b, ap(n * n);
  double rr = dot(r, r);
  std::size_t it = 0;
  while (std::sqrt(rr) > tol * bnorm) {
    if (it >= max_iterations)
      throw Error(Errc::NoConvergence, "CG stopped at relative residual " +
                                           std::to_string(std::sqrt(rr) / bnorm));
    apply(p, ap);
    const double a = rr / dot(p, ap);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += a * p[i];
      r[i] -= a * ap[i];
    }
    const double rr_new = dot(r, r);
    const double beta = rr_new / rr;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    rr = rr_new;
    ++it;
  }
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= n; ++j) sol.u(i, j) = x[at(i, j)];
  sol.iterations = it;
  sol.relative_residual = std::sqrt(rr) / bnorm;
  return sol;
}

double bilinear(const DenseMatrix& nodes, double x, double y) {
  const std::size_t hn = nodes.rows();
  const double h = 2.0 / static_cast<double>(hn - 1);
  const double gx = std::clamp((x + 1.0) / h, 0.0, static_cast<double>(hn - 1));
  const double gy = std::clamp((y + 1.0) / h, 0.0, static_cast<double>(hn - 1));
  const std::size_t i = std::min(static_cast<std::size_t>(gx), hn - 2);
  const std::size_t j = std::min(static_cast<std::size_t>(gy), hn - 2);
  const double tx = gx - static_cast<double>(i);
  const double ty = gy - static_cast<double>(j);
  return (1 - tx) * (1 - ty) * nodes(i, j) + tx * (1 - ty) * nodes(i + 1, j) +
         (1 - tx) * ty * nodes(i, j + 1) + tx * ty * nodes(i + 1, j + 1);
}

void PoissonGaussSpec::validate() const {
  require(solver_res >= 17, Errc::InvalidArgument, "solver resolution H must be >= 17");
  require(width_lo > 0.0 && width_lo <= width_hi, Errc::BadRange, "source widths must be > 0");
  require(min_sources <= max_sources, Errc::BadRange, "source count range");
  require(amp_lo <= amp_hi, Errc::BadRange, "amplitude range");
  require(input_points >= 1 && query_points >= 1, Errc::InvalidArgument,
          "poisson-gauss needs input and query points");
}

double gauss_source_field(std::span<const GaussSource> sources, double x, double y) {
  double f = 0.0;
  for (const auto& s : sources) {
    const double dx = x - s.cx;
    const double dy = y - s.cy;
    f += s.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * s.width * s.width));
  }
  return f;
}

DenseMatrix gauss_source_nodes(std::span<const GaussSource> sources, std::size_t hn) {
  const double h = 2.0 / static_cast<double>(hn - 1);
  DenseMatrix f(hn, hn);
  for (std::size_t i = 0; i < hn; ++i)
    for (std::size_t j = 0; j < hn; ++j)
      f(i, j) = gauss_source_field(sources, -1.0 + h * static_cast<double>(i),
                                   -1.0 + h * static_cast<double>(j));
  return f;
}

Dataset gen_poisson_gauss(const PoissonGaussSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.kind = "poisson-gauss";
  ds.dim = 2;
  ds.seed = spec.seed;
  ds.condition_names = {"f"};
  ds.target_names = {"u"};
  ds.spec_json = nlohmann::json{{"num_train", spec.num_train},
                                {"num_test", spec.num_test},
                                {"min_sources", spec.min_sources},
                                {"max_sources", spec.max_sources},
                                {"amp_lo", spec.amp_lo},
                                {"amp_hi", spec.amp_hi},
                                {"width_lo", spec.width_lo},
                                {"width_hi", spec.width_hi},
                                {"solver_res", spec.solver_res},
                                {"input_points", spec.input_points},
                                {"query_points", spec.query_points},
                                {"cloud", spec.cloud == CloudMode::Grid ? "grid" : "continuous"}}
                     .dump();
  const std::size_t hn = spec.solver_res;
  PointCloud pool;
  if (spec.cloud == CloudMode::Grid) pool = grid_linspace(2, hn).as_cloud();

  const std::size_t total = spec.num_train + spec.num_test;
  std::vector<SampleRecord> all(total);
  std::vector<std::exception_ptr> errors(total);
  const long n = static_cast<long>(total);
#pragma omp parallel for schedule(static)
  for (long s = 0; s < n; ++s) {
    try {
      Rng64 rng = Rng64::child(spec.seed, static_cast<std::uint64_t>(s));
      const std::size_t count =
          spec.min_sources + rng.below(spec.max_sources - spec.min_sources + 1);
      std::vector<GaussSource> src;
      for (std::size_t k = 0; k < count; ++k) {
        GaussSource g{};
        g.cx = rng.uniform(-0.6, 0.6);
        g.cy = rng.uniform(-0.6, 0.6);
        g.amplitude = rng.uniform(spec.amp_lo, spec.amp_hi);
        g.width = rng.uniform(spec.width_lo, spec.width_hi);
        src.push_back(g);
      }
      const PoissonSolution sol = solve_poisson_fd(gauss_source_nodes(src, hn));
      PointCloud in = spec.cloud == CloudMode::Grid ? subsample_grid(pool, spec.input_points, rng)
                                                    : subsample_continuous(2, spec.input_points, rng);
      PointCloud q = spec.cloud == CloudMode::Grid ? subsample_grid(pool, spec.query_points, rng)
                                                   : subsample_continuous(2, spec.query_points, rng);
      std::vector<double> f(in.size());
      for (std::size_t i = 0; i < in.size(); ++i)
        f[i] = gauss_source_field(src, in.coord(i, 0), in.coord(i, 1));
      DenseMatrix u(q.size(), 1);
      for (std::size_t i = 0; i < q.size(); ++i) u(i, 0) = bilinear(sol.u, q.coord(i, 0), q.coord(i, 1));
      all[s] = SampleRecord{with_channel(std::move(in), std::move(f), 1), std::move(q),
                            std::move(u), std::nullopt};
    } catch (...) {
      errors[s] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  ds.train.assign(all.begin(), all.begin() + static_cast<long>(spec.num_train));
  ds.test.assign(all.begin() + static_cast<long>(spec.num_train), all.end());
  return ds;
}

// ---------------------------------------------------------------------------
// Advection trajectories

void ToyTrajectorySpec::validate() const {
  require(stamps >= 2, Errc::InvalidArgument, "a trajectory needs at least two stamps");
  require(dt > 0.0, Errc::NonpositiveTau, "time step must be positive");
  require(modes >= 1 && points >= 1, Errc::InvalidArgument, "modes and points must be >= 1");
}

double advection_u0(const Trajectory& tr, double x) {
  double u = 0.0;
  for (std::size_t k = 0; k < tr.sin_coef.size(); ++k) {
    const double w = kPi * static_cast<double>(k + 1);
    u += tr.sin_coef[k] * std::sin(w * x) + tr.cos_coef[k] * std::cos(w * x);
  }
  return u;
}

double advection_u0_dx(const Trajectory& tr, double x) {
  double du = 0.0;
  for (std::size_t k = 0; k < tr.sin_coef.size(); ++k) {
    const double w = kPi * static_cast<double>(k + 1);
    du += w * (tr.sin_coef[k] * std::cos(w * x) - tr.cos_coef[k] * std::sin(w * x));
  }
  return du;
}

std::vector<Trajectory> gen_toy_trajectories(const ToyTrajectorySpec& spec, std::size_t first_index,
                                             std::size_t count) {
  spec.validate();
  std::vector<Trajectory> out;
  for (std::size_t s = first_index; s < first_index + count; ++s) {
    Rng64 rng = Rng64::child(spec.seed, s);
    Trajectory tr;
    for (std::size_t k = 0; k < spec.modes; ++k) {
      const double decay = 1.0 / static_cast<double>(k + 1);
      tr.sin_coef.push_back(decay * rng.uniform(-1.0, 1.0));
      tr.cos_coef.push_back(decay * rng.uniform(-1.0, 1.0));
    }
    tr.points = subsample_continuous(1, spec.points, rng);
    for (std::size_t t = 0; t < spec.stamps; ++t) {
      const double time = spec.dt * static_cast<double>(t);
      tr.times.push_back(time);
      std::vector<double> snap(tr.points.size());
      for (std::size_t i = 0; i < snap.size(); ++i)
        snap[i] = advection_u0(tr, tr.points.coord(i, 0) - spec.velocity * time);
      tr.snapshots.push_back(std::move(snap));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<SampleRecord> temporal_records(const Trajectory& tr, TemporalMode mode) {
  std::vector<SampleRecord> out;
  const std::size_t n = tr.points.size();
  for (const auto& pair : all2all_pairs(tr.times)) {
    const auto& now = tr.snapshots[pair.i];
    const auto target = temporal_target(mode, now, tr.snapshots[pair.j], pair.tau);
    std::vector<double> cond(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      cond[i * 3] = now[i];
      cond[i * 3 + 1] = pair.t_now;
      cond[i * 3 + 2] = pair.tau;
    }
    SampleRecord r;
    r.input = PointCloud(1, tr.points.coords, 3, std::move(cond));
    r.queries = PointCloud(1, tr.points.coords);
    r.target = DenseMatrix(n, 1, target);
    r.time = TemporalInfo{pair.t_now, pair.tau};
    out.push_back(std::move(r));
  }
  return out;
}

Dataset gen_toy_trajectory(const ToyTrajectorySpec& spec) {
  spec.validate();
  Dataset ds;
  ds.kind = "toy-trajectory";
  ds.dim = 1;
  ds.seed = spec.seed;
  ds.condition_names = {"u_now", "t_now", "tau"};
  ds.target_names = {std::string("u_") + std::string(to_string(spec.target_mode))};
  ds.spec_json = nlohmann::json{{"num_train", spec.num_train},
                                {"num_test", spec.num_test},
                                {"stamps", spec.stamps},
                                {"dt", spec.dt},
                                {"velocity", spec.velocity},
                                {"modes", spec.modes},
                                {"points", spec.points},
                                {"target_mode", std::string(to_string(spec.target_mode))}}
                     .dump();
  for (const auto& tr : gen_toy_trajectories(spec, 0, spec.num_train))
    for (auto& r : temporal_records(tr, spec.target_mode)) ds.train.push_back(std::move(r));
  for (const auto& tr : gen_toy_trajectories(spec, spec.num_train, spec.num_test))
    for (auto& r : temporal_records(tr, spec.target_mode)) ds.test.push_back(std::move(r));
  return ds;
}

}  // namespace ikno
