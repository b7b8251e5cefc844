#include "ikno/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ikno/error.hpp"
#include "ikno/kernels.hpp"
#include "ikno/model.hpp"
#include "ikno/resolvent.hpp"
#include "ikno/rng.hpp"
#include "ikno/synthetic.hpp"
#include "ikno/training.hpp"

namespace ikno {

using nlohmann::json;

namespace {

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

std::vector<double> distinct_points(Rng64& rng, std::size_t n) {
  // jittered strata keep the points distinct
  std::vector<double> x(n);
  const double w = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -1.0 + w * (static_cast<double>(i) + rng.uniform(0.1, 0.9));
  return x;
}

AxisKernelParams random_axis_params(Rng64& rng) {
  AxisKernelParams p;
  p.c = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  p.beta = rng.uniform(0.5, 4.0);
  p.gamma = rng.uniform(0.5, 4.0);
  return p;
}

// (A_1 ⊗ ... ⊗ A_d) t with the Kronecker product materialized.
LatentTensor dense_kron_apply(std::span<const DenseMatrix> mats, const LatentTensor& t) {
  const DenseMatrix big = kron_materialize(mats);
  return LatentTensor::from_matrix(t.axis_sizes(), matmul(big, t.to_matrix()));
}

LatentTensor tp_under_test(std::span<const DenseMatrix> grams, double alpha, const LatentTensor& t,
                           Fault fault) {
  if (fault == Fault::TpAsVanilla) return apply_vanilla(build_vanilla(grams, alpha), t);
  return apply_tp(build_tp(grams, alpha), t);
}

// Columns of the operator obtained by applying it to the identity.
DenseMatrix truncated_matrix(std::span<const DenseMatrix> grams, double alpha, std::size_t order) {
  std::vector<std::size_t> sizes;
  for (const auto& g : grams) sizes.push_back(g.rows());
  std::size_t m = 1;
  for (auto s : sizes) m *= s;
  LatentTensor eye = LatentTensor::from_matrix(sizes, DenseMatrix::identity(m));
  TruncatedPropagator p{std::vector<DenseMatrix>(grams.begin(), grams.end()), alpha, order};
  return apply_truncated(p, eye).to_matrix();
}

double spectral_norm_sym(const DenseMatrix& a) { return sym_eig(a).max_abs_eigenvalue(); }

std::vector<DenseMatrix> stored_grams(std::size_t dim, std::size_t n, double beta, double gamma) {
  std::vector<DenseMatrix> grams;
  for (std::size_t j = 0; j < dim; ++j) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
      x[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) + 0.01 * static_cast<double>(j);
    grams.push_back(axis_gram(AxisKernelParams{1.0, beta, gamma}, x));
  }
  return grams;
}

}  // namespace

json to_json(const CheckResult& r) {
  return json{{"name", r.name},       {"passed", r.passed},   {"max_deviation", r.max_deviation},
              {"threshold", r.threshold}, {"cases", r.cases}, {"failures", r.failures},
              {"seconds", r.seconds}, {"detail", r.detail}};
}

Fault parse_fault(std::string_view s) {
  if (s.empty() || s == "none") return Fault::None;
  if (s == "tp-as-vanilla") return Fault::TpAsVanilla;
  throw Error(Errc::InvalidArgument, "unknown fault '" + std::string(s) + "'");
}

std::string_view to_string(Fault f) { return f == Fault::TpAsVanilla ? "tp-as-vanilla" : "none"; }

RandomInstance random_instance(std::uint64_t seed, std::size_t index, std::size_t max_dim,
                               std::size_t max_points, std::size_t fixed_dim) {
  Rng64 rng = Rng64::child(seed, index);
  const std::size_t d = fixed_dim != 0 ? fixed_dim : 1 + rng.below(max_dim);
  RandomInstance inst;
  std::vector<std::size_t> sizes;
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t n = 2 + rng.below(max_points - 1);
    sizes.push_back(n);
    inst.grams.push_back(axis_gram(random_axis_params(rng), distinct_points(rng, n)));
  }
  const double rho = convergence_report(inst.grams, 1.0).rho_alpha_k;
  if (rng.uniform() < 0.5)
    inst.alpha = -2.0 + 2.0 * rng.uniform();  // [-2, 0)
  else
    inst.alpha = (0.9 / rho) * (1.0 - rng.uniform());  // (0, 0.9/ρ]
  if (inst.alpha == 0.0) inst.alpha = -1.0;
  const std::size_t channels = 1 + rng.below(3);
  inst.t = LatentTensor(sizes, channels);
  for (auto& v : inst.t.values()) v = rng.uniform(-1.0, 1.0);
  return inst;
}

CheckResult check_vanilla_oracle(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"vanilla-oracle", true, 0.0, 1e-8, o.cases};
  for (std::size_t k = 0; k < o.cases; ++k) {
    const auto inst = random_instance(o.seed, k, o.max_dim, o.max_points);
    const auto fast = apply_vanilla(build_vanilla(inst.grams, inst.alpha), inst.t);
    const auto oracle = apply_naive_inverse(inst.grams, inst.alpha, inst.t);
    const double dev = max_abs_diff(fast, oracle) / (1.0 + inst.t.max_abs());
    r.max_deviation = std::max(r.max_deviation, dev);
    if (!(dev <= r.threshold)) ++r.failures;
  }
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "Kronecker eigen path vs dense (I - aK)^-1, d <= " + std::to_string(o.max_dim) +
             ", N <= " + std::to_string(o.max_points);
  return r;
}

CheckResult check_tp_oracle(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"tp-oracle", true, 0.0, 1e-8, o.cases};
  std::size_t first_bad_dim = 0;
  for (std::size_t k = 0; k < o.cases; ++k) {
    const auto inst = random_instance(o.seed ^ 0x7470ULL, k, o.max_dim, o.max_points);
    std::vector<DenseMatrix> factors;
    for (const auto& g : inst.grams) {
      DenseMatrix a = DenseMatrix::identity(g.rows());
      a = add(a, g, -inst.alpha);
      factors.push_back(dense_inverse(a));
    }
    const auto oracle = dense_kron_apply(factors, inst.t);
    const auto fast = tp_under_test(inst.grams, inst.alpha, inst.t, o.fault);
    const double dev = max_abs_diff(fast, oracle) / (1.0 + inst.t.max_abs());
    r.max_deviation = std::max(r.max_deviation, dev);
    if (!(dev <= r.threshold)) {
      ++r.failures;
      if (first_bad_dim == 0) first_bad_dim = inst.grams.size();
    }
  }
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "mode-product TP path vs materialized tensor product of per-axis inverses";
  if (first_bad_dim != 0) r.detail += "; first failure at d=" + std::to_string(first_bad_dim);
  return r;
}

CheckResult check_d1_coincidence(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"d1-coincidence", true, 0.0, 1e-9, o.cases};
  for (std::size_t k = 0; k < o.cases; ++k) {
    const auto inst = random_instance(o.seed ^ 0xd1ULL, k, 1, o.max_points, 1);
    const auto tp = tp_under_test(inst.grams, inst.alpha, inst.t, o.fault);
    const auto van = apply_vanilla(build_vanilla(inst.grams, inst.alpha), inst.t);
    const double dev = max_abs_diff(tp, van);
    r.max_deviation = std::max(r.max_deviation, dev);
    if (!(dev <= r.threshold)) ++r.failures;
  }
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "TP and Vanilla on one axis";
  return r;
}

CheckResult check_d2_separation(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"d2-separation", true, 0.0, 1e-3, 1};
  const auto k = DenseMatrix::from_rows({{1.0, 0.5}, {0.5, 1.0}});
  const std::vector<DenseMatrix> grams{k, k};
  LatentTensor t({2, 2}, 1);
  t.values()[0] = 1.0;
  const auto tp = tp_under_test(grams, -1.0, t, o.fault);
  const auto van = apply_vanilla(build_vanilla(grams, -1.0), t);
  // reported deviation is the gap, which must exceed the threshold
  r.max_deviation = max_abs_diff(tp, van);
  r.passed = r.max_deviation > r.threshold;
  r.failures = r.passed ? 0 : 1;
  r.seconds = sw.seconds();
  r.detail = "d=2, N=2, K=[[1,.5],[.5,1]], a=-1, unit impulse: gap must exceed threshold";
  return r;
}

CheckResult check_negative_alpha(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"negative-alpha-weights", true, 0.0, 0.0, o.cases};
  for (std::size_t k = 0; k < o.cases; ++k) {
    auto inst = random_instance(o.seed ^ 0x4e41ULL, k, o.max_dim, o.max_points);
    inst.alpha = -std::abs(inst.alpha) - 1e-3;
    try {
      const auto v = build_vanilla(inst.grams, inst.alpha);
      for (double w : v.diag_weights) {
        const double out = w <= 0.0 ? -w : std::max(0.0, w - 1.0);
        r.max_deviation = std::max(r.max_deviation, out);
        if (!(w > 0.0 && w <= 1.0)) ++r.failures;
      }
    } catch (const Error&) {
      ++r.failures;
    }
  }
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "a < 0: every diagonal weight in (0, 1]";
  return r;
}

CheckResult check_neumann_convergence() {
  Stopwatch sw;
  CheckResult r{"neumann-convergence", true, 0.0, 3.0, 5};
  const auto grams = stored_grams(2, 4, 2.0, 2.0);
  const double rho_k = convergence_report(grams, 1.0).rho_alpha_k;
  const double alpha = 0.9 / rho_k;
  const double rho = convergence_report(grams, alpha).rho_alpha_k;
  const DenseMatrix exact = dense_resolvent(grams, alpha);
  std::ostringstream detail;
  detail << "rho=" << rho << "; error/bound:";
  if (std::abs(rho - 0.9) > 0.02) r.passed = false;
  for (std::size_t p : {1, 5, 10, 20, 50}) {
    const double err = spectral_norm_sym(add(truncated_matrix(grams, alpha, p), exact, -1.0));
    const double bound = std::pow(rho, static_cast<double>(p + 1)) / (1.0 - rho);
    const double ratio = err / bound;
    const double factor = std::max(ratio, 1.0 / ratio);
    r.max_deviation = std::max(r.max_deviation, factor);
    if (!(factor <= r.threshold)) ++r.failures;
    detail << " p=" << p << ":" << fmt(ratio);
  }
  r.passed = r.passed && r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = detail.str();
  return r;
}

CheckResult check_inverse_power_convergent() {
  Stopwatch sw;
  CheckResult r{"inverse-power-convergent", false, 0.0, 1e-6, 25};
  const auto grams = stored_grams(2, 3, 3.0, 3.0);
  const double lmin = convergence_report(grams, 1.0).abs_alpha_lambda_min;
  const double alpha = -2.0 / lmin;
  const double ratio = convergence_report(grams, alpha).abs_alpha_lambda_min;
  const DenseMatrix exact = dense_resolvent(grams, alpha);
  const auto sums = inverse_power_partial_sums(grams, alpha, 25);
  std::size_t reached = 0;
  r.max_deviation = max_abs_diff(sums.back(), exact);
  for (std::size_t n = 0; n < sums.size(); ++n)
    if (max_abs_diff(sums[n], exact) <= r.threshold) {
      reached = n + 1;
      break;
    }
  r.passed = reached != 0 && std::abs(ratio - 2.0) <= 0.1;
  r.failures = r.passed ? 0 : 1;
  r.seconds = sw.seconds();
  r.detail = "|a|lmin=" + fmt(ratio) + "; within threshold after " +
             (reached ? std::to_string(reached) : std::string("no")) + " terms";
  return r;
}

CheckResult check_inverse_power_divergent() {
  Stopwatch sw;
  CheckResult r{"inverse-power-divergent", false, 0.0, 1.0, 25};
  const auto grams = stored_grams(2, 3, 3.0, 3.0);
  const double lmin = convergence_report(grams, 1.0).abs_alpha_lambda_min;
  // positive α: every eigencomponent of the partial sum grows monotonically
  const double alpha = 0.5 / lmin;
  const auto sums = inverse_power_partial_sums(grams, alpha, 25);
  std::vector<double> norms;
  for (const auto& s : sums) norms.push_back(s.frobenius());
  std::size_t decreases = 0;
  for (std::size_t n = 1; n < norms.size(); ++n)
    if (norms[n] < norms[n - 1]) ++decreases;
  // max_deviation: growth factor of the partial-sum norm over the run
  r.max_deviation = norms.back() / norms.front();
  r.passed = decreases == 0 && r.max_deviation > 1e3;
  r.failures = decreases;
  r.seconds = sw.seconds();
  r.detail = "|a|lmin=0.5; norm grows from " + fmt(norms.front()) + " to " + fmt(norms.back()) +
             " with " + std::to_string(decreases) + " decreases";
  return r;
}

CheckResult check_positive_definiteness(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"positive-definiteness", true, 0.0, -1e-10, o.pd_cases};
  double worst = 1e300;
  for (std::size_t k = 0; k < o.pd_cases; ++k) {
    Rng64 rng = Rng64::child(o.seed ^ 0x5044ULL, k);
    const std::size_t n = 1 + rng.below(16);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::sort(x.begin(), x.end());
    x.erase(std::unique(x.begin(), x.end()), x.end());
    AxisKernelParams p;
    p.c = std::exp(rng.uniform(-3.0, 3.0));
    p.beta = std::exp(rng.uniform(-3.0, 3.0));
    p.gamma = std::exp(rng.uniform(-3.0, 3.0));
    const DenseMatrix g = axis_gram(p, x);
    double trace = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) trace += g(i, i);
    const double lmin = sym_eig(g).eigenvalues.front();
    const double scaled = lmin / trace;
    worst = std::min(worst, scaled);
    if (!(scaled > r.threshold)) ++r.failures;
  }
  r.max_deviation = worst;  // smallest λ_min / trace seen
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "minimum eigenvalue / trace over random axis Grams (<= 16 points)";
  return r;
}

CheckResult check_gradient(const VerifyOptions& o) {
  Stopwatch sw;
  CheckResult r{"gradient", true, 0.0, 1e-4, 0};
  ModelConfig c;
  c.dim = 2;
  c.grid_points = 4;
  c.hidden = 8;
  c.branches = 2;
  c.processor = ProcessorKind::Mlp;
  c.processor_width = 4;
  c.variant = OperatorVariant::TP;
  c.init_scales = {1.0, 2.0};
  c.init_alpha = -0.3;
  IknoModel model(c);
  const ParamVector params = model.init_params(o.seed + 3);
  CSinesSpec spec;
  spec.num_train = 1;
  spec.num_test = 0;
  spec.input_points = 12;
  spec.query_points = 10;
  spec.seed = o.seed + 5;
  const auto sample = gen_csines(spec).train.front();

  std::vector<double> analytic(params.values.size(), 0.0);
  model.loss_and_gradient(params, sample.input, sample.queries, sample.target, analytic);
  const auto fd = grad_fd(
      [&](std::span<const double> v) {
        ParamVector q = params;
        q.values.assign(v.begin(), v.end());
        const auto pred = model.forward(q, sample.input, sample.queries);
        return *relative_l2_loss(sample.target.values(), pred.values());
      },
      params.values);
  // Tiny coordinates are compared absolutely at 1e-6.
  double worst_abs = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    ++r.cases;
    const double diff = std::abs(analytic[i] - fd[i]);
    if (std::abs(fd[i]) < 1e-6) {
      worst_abs = std::max(worst_abs, diff);
      if (!(diff <= 1e-6)) ++r.failures;
      continue;
    }
    const double rel = diff / std::abs(fd[i]);
    r.max_deviation = std::max(r.max_deviation, rel);
    if (!(rel <= r.threshold)) ++r.failures;
  }
  r.passed = r.failures == 0;
  r.seconds = sw.seconds();
  r.detail = "toy model d=2 L=4 h=8 Q=2, " + std::to_string(params.values.size()) +
             " parameters, central differences; worst absolute gap on |FD| < 1e-6: " +
             std::to_string(worst_abs);
  return r;
}

std::vector<CheckResult> run_verify(const VerifyOptions& o) {
  std::vector<CheckResult> out;
  out.push_back(check_vanilla_oracle(o));
  out.push_back(check_tp_oracle(o));
  out.push_back(check_d1_coincidence(o));
  out.push_back(check_d2_separation(o));
  out.push_back(check_negative_alpha(o));
  out.push_back(check_neumann_convergence());
  out.push_back(check_inverse_power_convergent());
  out.push_back(check_inverse_power_divergent());
  out.push_back(check_positive_definiteness(o));
  if (o.gradient) out.push_back(check_gradient(o));
  return out;
}

}  // namespace ikno
