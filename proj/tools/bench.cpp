#include "ikno/bench.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "ikno/error.hpp"
#include "ikno/kernels.hpp"
#include "ikno/parallel.hpp"
#include "ikno/rng.hpp"
#include "ikno/training.hpp"

namespace ikno {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double time_ns(const std::function<void()>& fn) {
  const auto t0 = Clock::now();
  fn();
  return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

double median_of(std::vector<double> v) { return median(std::move(v)); }

struct Problem {
  std::vector<DenseMatrix> grams;
  LatentTensor t;
};

Problem make_problem(std::size_t dim, std::size_t n, std::size_t channels, std::uint64_t seed) {
  const LatentGrid grid = grid_linspace(dim, n);
  Problem p;
  for (std::size_t j = 0; j < dim; ++j) p.grams.push_back(axis_gram(AxisKernelParams{}, grid.axis(j)));
  p.t = LatentTensor(grid.axis_sizes(), channels);
  Rng64 rng = Rng64::child(seed, dim * 1000 + n);
  for (auto& v : p.t.values()) v = rng.uniform(-1.0, 1.0);
  return p;
}

// Times build and apply separately; warmups run both and are discarded.
template <class Build, class Apply>
void time_case(BenchCase& c, std::size_t warmups, std::size_t reps, Build build, Apply apply) {
  for (std::size_t w = 0; w < warmups; ++w) apply(build());
  std::vector<double> b, a;
  for (std::size_t r = 0; r < reps; ++r) {
    decltype(build()) op;
    b.push_back(time_ns([&] { op = build(); }));
    a.push_back(time_ns([&] { apply(op); }));
  }
  c.build_ns = median_of(b);
  c.apply_ns = median_of(a);
  c.warmups = warmups;
  c.repetitions = reps;
}

void run_shape(const BenchOptions& o, const std::string& group, std::size_t dim, std::size_t n,
               bool with_naive, std::vector<BenchCase>& out) {
  const Problem p = make_problem(dim, n, o.channels, o.seed);
  const std::vector<std::size_t> shape(dim, n);
  const std::size_t m = p.t.points();

  BenchCase van{group, shape, "vanilla"};
  LatentTensor van_out;
  time_case(van, o.warmups, o.repetitions, [&] { return build_vanilla(p.grams, o.alpha); },
            [&](const ResolventVanilla& r) { van_out = apply_vanilla(r, p.t); });

  BenchCase tp{group, shape, "tp"};
  LatentTensor tp_out;
  time_case(tp, o.warmups, o.repetitions, [&] { return build_tp(p.grams, o.alpha); },
            [&](const ResolventTP& r) { tp_out = apply_tp(r, p.t); });

  BenchCase naive{group, shape, "naive"};
  if (!with_naive) {
    naive.skipped = true;
    naive.note = "not requested";
  } else if (m > o.naive_cap) {
    naive.skipped = true;
    naive.note = "CapExceeded: M=" + std::to_string(m) + " > cap " + std::to_string(o.naive_cap);
  } else {
    LatentTensor naive_out;
    time_case(naive, o.warmups, o.repetitions, [&] { return dense_resolvent(p.grams, o.alpha, o.naive_cap); },
              [&](const DenseMatrix& r) {
                naive_out = LatentTensor::from_matrix(p.t.axis_sizes(), matmul(r, p.t.to_matrix()));
              });
    van.max_deviation = max_abs_diff(van_out, naive_out);
    const ResolventTP r = build_tp(p.grams, o.alpha);
    const auto tp_oracle = LatentTensor::from_matrix(
        p.t.axis_sizes(), matmul(kron_materialize(r.axis_inverses), p.t.to_matrix()));
    tp.max_deviation = max_abs_diff(tp_out, tp_oracle);
  }
  out.push_back(van);
  out.push_back(tp);
  out.push_back(naive);
}

const BenchCase* find_case(const std::vector<BenchCase>& cases, const std::string& group,
                           std::size_t dim, std::size_t n, const std::string& variant) {
  for (const auto& c : cases)
    if (c.group == group && c.variant == variant && c.shape.size() == dim && c.shape.front() == n)
      return &c;
  return nullptr;
}

}  // namespace

std::size_t BenchCase::points() const {
  std::size_t m = 1;
  for (auto s : shape) m *= s;
  return m;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, Errc::InvalidArgument, "slope needs >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BenchReport run_bench(const BenchOptions& o) {
  require(o.warmups >= 2 && o.repetitions >= 5, Errc::InvalidArgument,
          "benchmarks need >= 2 warmups and >= 5 repetitions");
  BenchReport rep;
  for (std::size_t d : o.sweep_dims) run_shape(o, "sweep", d, o.sweep_points, false, rep.cases);
  run_shape(o, "large", o.large_dim, o.large_points, o.naive, rep.cases);
  for (std::size_t n : o.doubling_points) run_shape(o, "doubling", o.doubling_dim, n, o.naive, rep.cases);

  std::vector<double> ms, tv, tt;
  for (std::size_t d : o.sweep_dims) {
    const auto* v = find_case(rep.cases, "sweep", d, o.sweep_points, "vanilla");
    const auto* t = find_case(rep.cases, "sweep", d, o.sweep_points, "tp");
    ms.push_back(static_cast<double>(v->points()));
    tv.push_back(v->apply_ns);
    tt.push_back(t->apply_ns);
  }
  if (ms.size() >= 2) {
    rep.apply_exponent_vanilla = loglog_slope(ms, tv);
    rep.apply_exponent_tp = loglog_slope(ms, tt);
  }
  for (std::size_t i = 0; i < rep.cases.size(); ++i)
    if (rep.cases[i].variant == "vanilla") {
      const double r = rep.cases[i].apply_ns / rep.cases[i + 1].apply_ns;
      rep.max_apply_ratio = std::max(rep.max_apply_ratio, std::max(r, 1.0 / r));
    }

  const auto* lv = find_case(rep.cases, "large", o.large_dim, o.large_points, "vanilla");
  const auto* lt = find_case(rep.cases, "large", o.large_dim, o.large_points, "tp");
  const auto* ln = find_case(rep.cases, "large", o.large_dim, o.large_points, "naive");
  if (ln && !ln->skipped) {
    const double fast = std::max(lv->build_ns + lv->apply_ns, lt->build_ns + lt->apply_ns);
    rep.speedup_large = (ln->build_ns + ln->apply_ns) / fast;
  }
  if (o.doubling_points.size() == 2) {
    const auto* n0 = find_case(rep.cases, "doubling", o.doubling_dim, o.doubling_points[0], "naive");
    const auto* n1 = find_case(rep.cases, "doubling", o.doubling_dim, o.doubling_points[1], "naive");
    const auto* f0 = find_case(rep.cases, "doubling", o.doubling_dim, o.doubling_points[0], "tp");
    const auto* f1 = find_case(rep.cases, "doubling", o.doubling_dim, o.doubling_points[1], "tp");
    if (!n0->skipped && !n1->skipped) rep.naive_build_growth = n1->build_ns / n0->build_ns;
    rep.fast_build_growth = f1->build_ns / f0->build_ns;
  }

  rep.environment = json{{"threads", thread_count()},
#ifdef __VERSION__
                         {"compiler", __VERSION__},
#endif
                         {"clock", "steady_clock"},
                         {"host_specific", true}};
  rusage ru{};
  if (getrusage(RUSAGE_SELF, &ru) == 0) {
    rep.environment["peak_rss_kb"] = ru.ru_maxrss;
    rep.environment["memory_reported"] = true;
  } else {
    rep.environment["memory_reported"] = false;
  }
  return rep;
}

json to_json(const BenchReport& r) {
  json cases = json::array();
  for (const auto& c : r.cases) {
    json j{{"group", c.group},         {"shape", c.shape},          {"points", c.points()},
           {"variant", c.variant},     {"build_ns", c.build_ns},    {"apply_ns", c.apply_ns},
           {"warmups", c.warmups},     {"repetitions", c.repetitions}, {"skipped", c.skipped},
           {"note", c.note}};
    j["max_deviation"] = c.max_deviation ? json(*c.max_deviation) : json(nullptr);
    cases.push_back(std::move(j));
  }
  return json{{"cases", cases},
              {"speedup_large", r.speedup_large},
              {"apply_exponent_vanilla", r.apply_exponent_vanilla},
              {"apply_exponent_tp", r.apply_exponent_tp},
              {"max_apply_ratio", r.max_apply_ratio},
              {"naive_build_growth", r.naive_build_growth},
              {"fast_build_growth", r.fast_build_growth},
              {"environment", r.environment}};
}

}  // namespace ikno
