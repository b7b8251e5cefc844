// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [--work DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "ikno/bench.hpp"
#include "ikno/commands.hpp"
#include "ikno/parallel.hpp"
#include "ikno/rng.hpp"
#include "ikno/training.hpp"
#include "ikno/verify.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ikno;

struct Outcome {
  bool passed = false;
  std::string summary;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Dataset files only; the gen-data.json run report records the output path.
bool same_tree(const fs::path& a, const fs::path& b) {
  std::set<std::string> fa, fb;
  for (const auto& e : fs::directory_iterator(a)) fa.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) fb.insert(e.path().filename().string());
  fa.erase("gen-data.json");
  fb.erase("gen-data.json");
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

Outcome oracle() {
  VerifyOptions o;
  o.cases = 100;
  const CheckResult r = check_vanilla_oracle(o);
  return {r.passed && r.cases >= 100 && r.seconds < 60.0,
          std::to_string(r.cases) + " instances, max deviation " + fmt(r.max_deviation) +
              " (<= 1e-8), " + fmt(r.seconds) + " s (< 60 s)"};
}

Outcome neumann() {
  const CheckResult r = check_neumann_convergence();
  return {r.passed, r.detail};
}

Outcome inverse_power() {
  const CheckResult a = check_inverse_power_convergent();
  const CheckResult b = check_inverse_power_divergent();
  return {a.passed && b.passed, "convergent: " + a.detail + "; divergent: " + b.detail};
}

Outcome coincidence() {
  VerifyOptions o;
  o.cases = 100;
  const CheckResult a = check_d1_coincidence(o);
  const CheckResult b = check_d2_separation(o);
  return {a.passed && b.passed, "d=1 max gap " + fmt(a.max_deviation) + " over " +
                                    std::to_string(a.cases) + " cases (<= 1e-9); d=2 witness gap " +
                                    fmt(b.max_deviation) + " (> 1e-3)"};
}

Outcome benchmark(const fs::path& work) {
  BenchCommandOptions o;
  o.out = work / "bench";
  const CommandResult res = cmd_bench(o);
  const json& r = res.report;
  const double speedup = r.at("speedup_large");
  const double ev = r.at("apply_exponent_vanilla");
  const double et = r.at("apply_exponent_tp");
  const double ratio = r.at("max_apply_ratio");
  const bool s_ok = speedup >= 10.0;
  const bool e_ok = ev >= 0.8 && ev <= 1.3 && et >= 0.8 && et <= 1.3;
  const bool r_ok = ratio <= 1.5;
  auto mark = [](bool ok) { return ok ? "ok" : "MISSED"; };
  return {s_ok && e_ok && r_ok,
          "speedup at N=16 d=3 " + fmt(speedup) + "x (>= 10, " + mark(s_ok) + "); apply exponents vanilla " +
              fmt(ev) + ", tp " + fmt(et) + " (in [0.8, 1.3], " + mark(e_ok) +
              "); max vanilla/tp apply ratio " + fmt(ratio) + " (<= 1.5, " + mark(r_ok) + ")"};
}

Outcome gradient() {
  VerifyOptions o;
  const CheckResult r = check_gradient(o);
  return {r.passed && r.seconds < 120.0,
          std::to_string(r.cases) + " coordinates, worst relative error " + fmt(r.max_deviation) +
              " (<= 1e-4), " + fmt(r.seconds) + " s (< 120 s)"};
}

Outcome positive_definite() {
  VerifyOptions o;
  o.pd_cases = 200;
  const CheckResult r = check_positive_definiteness(o);
  return {r.passed && r.cases >= 200, std::to_string(r.cases) + " parameterizations, " + r.detail};
}

fs::path csines_data(const fs::path& work) {
  const fs::path dir = work / "csines";
  if (!fs::exists(dir / "manifest.json")) {
    GenDataOptions g;
    g.kind = "csines";
    g.seed = 0;
    g.num_train = 256;
    g.num_test = 64;
    g.out = dir;
    cmd_gen_data(g);
  }
  return dir;
}

Outcome learning(const fs::path& work) {
  const fs::path data = csines_data(work);
  std::ostringstream line;
  bool ok = true;
  for (const std::string variant : {"tp", "vanilla", "truncated"}) {
    TrainOptions t;
    t.data = data;
    t.out = work / ("train_" + variant);
    t.seed = 0;
    t.steps = 2000;
    t.log_every = 100;
    t.model.variant = variant;
    t.model.order = 1;
    const auto start = std::chrono::steady_clock::now();
    const CommandResult res = cmd_train(t);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double before = res.report.at("initial_eval").at("median_rel_l1_percent");
    const double after = res.report.at("eval").at("median_rel_l1_percent");
    const double reduction = 1.0 - after / before;
    const bool done = res.exit_code == 0 && res.report.at("steps_completed") == 2000;
    ok = ok && done;
    if (variant == "tp") ok = ok && reduction >= 0.5;
    line << (variant == "tp" ? "" : "; ") << variant << (variant == "truncated" ? "(p=1)" : "") << ' '
         << fmt(before) << "% -> " << fmt(after) << "% (" << fmt(100 * reduction) << "% reduction, "
         << fmt(secs) << " s" << (done ? "" : ", INCOMPLETE") << ")";
  }
  return {ok, line.str() + "; TP needs >= 50%"};
}

Outcome finite_order(const fs::path& work) {
  FiniteOrderOptions o;
  o.data = csines_data(work);
  o.out = work / "finite_order";
  const CommandResult res = cmd_finite_order_study(o);
  const json& r = res.report;
  std::set<std::string> names;
  bool finite = r.at("all_finite");
  std::ostringstream rows;
  for (const auto& row : r.at("rows")) {
    names.insert(row.at("config"));
    const json& e = row.at("eval").at("median_rel_l1_percent");
    if (!e.is_number()) finite = false;
    rows << (rows.tellp() > 0 ? ", " : "") << row.at("config").get<std::string>() << ' '
         << (e.is_number() ? fmt(e.get<double>()) : std::string("n/a"));
  }
  const std::set<std::string> expected{"p0", "p1", "p2", "p3", "p4", "vanilla", "tp"};
  const json& ref = r.at("reference_trend");
  const bool cited = ref.contains("median_rel_l1_percent") && ref.at("median_rel_l1_percent").size() == 4 && !ref.at("reproduced").get<bool>();
  return {res.exit_code == 0 && finite && names == expected && cited,
          "test median rel. L1 %: " + rows.str() + "; reference trend cited as not reproduced"};
}

Outcome round_trips(const fs::path& work) {
  std::vector<std::string> failed;
  // zscore
  Rng64 rng(42);
  std::vector<DenseMatrix> fields;
  for (int k = 0; k < 4; ++k) {
    DenseMatrix m(32, 3);
    for (auto& v : m.values()) v = rng.uniform(-10.0, 30.0);
    fields.push_back(m);
  }
  const NormStats s = zscore_fit(fields);
  double z_err = 0.0;
  for (const auto& f : fields) z_err = std::max(z_err, max_abs_diff(zscore_invert(s, zscore_apply(s, f)), f));
  if (!(z_err <= 1e-12)) failed.push_back("zscore");

  // temporal: exact on dyadic values, 1e-12 on random values
  const std::vector<double> now{0.5, -1.25, 3.0, 0.0}, fut{0.75, 2.5, -1.0, 0.125};
  double t_err = 0.0;
  for (auto mode : {TemporalMode::Direct, TemporalMode::Residual, TemporalMode::Derivative}) {
    for (double tau : {0.25, 1.0, 2.0})
      if (temporal_reconstruct(mode, now, temporal_target(mode, now, fut, tau), tau) != fut)
        failed.push_back("temporal-" + std::string(to_string(mode)));
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(16), b(16);
      for (auto& v : a) v = rng.uniform(-3, 3);
      for (auto& v : b) v = rng.uniform(-3, 3);
      const double tau = rng.uniform(0.01, 5.0);
      const auto back = temporal_reconstruct(mode, a, temporal_target(mode, a, b, tau), tau);
      for (std::size_t i = 0; i < b.size(); ++i) t_err = std::max(t_err, std::abs(back[i] - b[i]));
    }
  }
  if (!(t_err <= 1e-12)) failed.push_back("temporal-random");

  // dataset regeneration
  bool identical = true;
  for (const std::string kind : {"csines", "poisson-gauss", "toy-trajectory"}) {
    GenDataOptions g;
    g.kind = kind;
    g.seed = 7;
    g.num_train = 8;
    g.num_test = 4;
    g.solver_res = 33;
    g.out = work / ("regen_a_" + kind);
    const auto a = cmd_gen_data(g).report.at("checksum");
    g.out = work / ("regen_b_" + kind);
    const auto b = cmd_gen_data(g).report.at("checksum");
    if (a != b || !same_tree(work / ("regen_a_" + kind), work / ("regen_b_" + kind))) identical = false;
  }
  if (!identical) failed.push_back("dataset-regeneration");

  // median fixtures
  const bool med = std::abs(median_rel_l1_from_errors({{0.1, 0.2, 0.3}}).percent - 20.0) <= 1e-12 &&
                   std::abs(median_rel_l1_from_errors({{0.1, 0.2}}).percent - 15.0) <= 1e-12;
  const std::vector<DenseMatrix> truth{DenseMatrix::from_rows({{1.0}, {2.0}})};
  if (!med || median_rel_l1(truth, truth).percent != 0.0) failed.push_back("median-fixtures");

  std::string summary = "zscore max error " + fmt(z_err) + ", temporal (3 modes) dyadic exact and random max error " +
                        fmt(t_err) + ", 3 dataset kinds regenerated byte-identical: " +
                        (identical ? "yes" : "no") + ", median fixtures 20%/15%/0%";
  for (const auto& f : failed) summary += "; failed " + f;
  return {failed.empty(), summary};
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"acceptance criteria"};
  fs::path work = fs::temp_directory_path() / "ikno_acceptance";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"resolvent oracle equivalence", oracle},
      {"Neumann convergence", neumann},
      {"inverse-power regime", inverse_power},
      {"d=1 coincidence and d>=2 separation", coincidence},
      {"complexity benchmark", [&] { return benchmark(work); }},
      {"gradient check", gradient},
      {"positive definiteness", positive_definite},
      {"end-to-end learning", [&] { return learning(work); }},
      {"finite-order study pipeline", [&] { return finite_order(work); }},
      {"round-trip and metric identities", [&] { return round_trips(work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    if (!out.passed) ++failures;
    std::cout << (out.passed ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": "
              << out.summary << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
