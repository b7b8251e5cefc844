// ikno <command> [--config PATH] [--seed U64] [--out DIR] [command flags]

#include <algorithm>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "ikno/commands.hpp"
#include "ikno/error.hpp"
#include "ikno/parallel.hpp"

namespace {

std::string config_path;

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help,
                      std::uint64_t& seed, std::filesystem::path& out) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", config_path, "key = value file; flags override it");
  sub->add_option("--seed", seed, "random seed")->capture_default_str();
  sub->add_option("--out", out, "output directory")->capture_default_str();
  return sub;
}

void add_model_options(CLI::App* sub, ikno::ModelOptions& m) {
  sub->add_option("--variant", m.variant, "vanilla | tp | truncated")->capture_default_str();
  sub->add_option("--grid-points", m.grid_points, "latent grid points per axis")->capture_default_str();
  sub->add_option("--hidden", m.hidden)->capture_default_str();
  sub->add_option("--branches", m.branches)->capture_default_str();
  sub->add_option("--processor", m.processor, "identity | mlp | tiny_attention")->capture_default_str();
  sub->add_option("--processor-depth", m.processor_depth)->capture_default_str();
  sub->add_option("--processor-width", m.processor_width)->capture_default_str();
  sub->add_option("--attention-heads", m.attention_heads)->capture_default_str();
  sub->add_option("--order", m.order, "truncation order p")->capture_default_str();
  sub->add_option("--head-depth", m.head_depth)->capture_default_str();
  sub->add_option("--init-alpha", m.init_alpha)->capture_default_str();
}

// CLI11 reads config files only for the root app, so subcommand files are
// applied here: unknown keys are errors and flags already given win.
void apply_config(CLI::App* sub, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ikno::Error(ikno::Errc::Io, "cannot read config file " + path);
  const auto items = CLI::ConfigINI().from_config(is);
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty())
      throw ikno::Error(ikno::Errc::InvalidArgument, "config sections are not supported: " + item.fullname());
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config")
      throw ikno::Error(ikno::Errc::InvalidArgument, "unknown config key '" + item.name + "'");
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  ikno::configure_threads_from_env();

  CLI::App app{"Infinite-order kernel neural operators: data, verification, benchmarks, training"};
  app.require_subcommand(1);

  ikno::GenDataOptions gen;
  auto* g = add_command(app, "gen-data", "generate a synthetic dataset", gen.seed, gen.out);
  g->add_option("--kind", gen.kind, "csines | poisson-gauss | toy-trajectory")->capture_default_str();
  g->add_option("--num-train", gen.num_train)->capture_default_str();
  g->add_option("--num-test", gen.num_test)->capture_default_str();
  g->add_option("--dim", gen.dim, "csines dimension")->capture_default_str();
  g->add_option("--max-mode", gen.max_mode)->capture_default_str();
  g->add_option("--input-points", gen.input_points)->capture_default_str();
  g->add_option("--query-points", gen.query_points)->capture_default_str();
  g->add_option("--solver-res", gen.solver_res, "Poisson solver nodes per side")->capture_default_str();
  g->add_option("--cloud", gen.cloud, "grid | continuous")->capture_default_str();
  g->add_option("--stamps", gen.stamps)->capture_default_str();
  g->add_option("--dt", gen.dt)->capture_default_str();
  g->add_option("--velocity", gen.velocity)->capture_default_str();
  g->add_option("--modes", gen.modes)->capture_default_str();
  g->add_option("--target-mode", gen.target_mode, "direct | residual | derivative")->capture_default_str();

  ikno::VerifyCommandOptions ver;
  std::string fault = "none";
  auto* v = add_command(app, "verify", "run the correctness suites", ver.verify.seed, ver.out);
  v->add_option("--cases", ver.verify.cases, "random cases per oracle suite")->capture_default_str();
  v->add_option("--pd-cases", ver.verify.pd_cases)->capture_default_str();
  v->add_option("--inject-fault", fault, "test hook: none | tp-as-vanilla")->capture_default_str();
  v->add_flag("!--no-gradient", ver.verify.gradient, "skip the model gradient check");

  ikno::FiniteOrderOptions fo;
  auto* f = add_command(app, "finite-order-study", "truncation order vs. infinite variants", fo.seed, fo.out);
  f->add_option("--data", fo.data, "dataset directory");
  f->add_option("--steps", fo.steps)->capture_default_str();
  f->add_option("--batch", fo.batch)->capture_default_str();
  f->add_option("--lr", fo.lr)->capture_default_str();
  f->add_option("--orders", fo.orders, "truncation orders")->delimiter(',')->capture_default_str();
  f->add_option("--grid-points", fo.grid_points)->capture_default_str();
  f->add_option("--hidden", fo.hidden)->capture_default_str();
  f->add_option("--processor-width", fo.processor_width)->capture_default_str();
  f->add_option("--radius", fo.radius)->capture_default_str();
  f->add_option("--scale", fo.scale)->capture_default_str();
  f->add_option("--alpha", fo.alpha)->capture_default_str();

  ikno::BenchCommandOptions be;
  auto* b = add_command(app, "bench", "fast vs. naive resolvent timings", be.bench.seed, be.out);
  b->add_option("--sweep-points", be.bench.sweep_points)->capture_default_str();
  b->add_option("--sweep-dims", be.bench.sweep_dims)->delimiter(',')->capture_default_str();
  b->add_option("--large-points", be.bench.large_points)->capture_default_str();
  b->add_option("--large-dim", be.bench.large_dim)->capture_default_str();
  b->add_option("--doubling-points", be.bench.doubling_points)->delimiter(',')->capture_default_str();
  b->add_option("--doubling-dim", be.bench.doubling_dim)->capture_default_str();
  b->add_option("--channels", be.bench.channels)->capture_default_str();
  b->add_option("--warmups", be.bench.warmups)->capture_default_str();
  b->add_option("--repetitions", be.bench.repetitions)->capture_default_str();
  b->add_option("--naive-cap", be.bench.naive_cap)->capture_default_str();
  b->add_flag("!--no-naive", be.bench.naive, "skip the dense-inverse rows");

  ikno::TrainOptions tr;
  auto* t = add_command(app, "train", "train a model", tr.seed, tr.out);
  t->add_option("--data", tr.data, "dataset directory");
  t->add_option("--resume", tr.resume, "checkpoint directory to continue from");
  t->add_option("--steps", tr.steps, "optimizer steps (overrides --epochs)");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--stop-at", tr.stop_at, "stop at this step; resume later with --resume");
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--weight-decay", tr.weight_decay)->capture_default_str();
  t->add_option("--clip", tr.clip, "global gradient-norm clip; <= 0 disables")->capture_default_str();
  t->add_option("--log-every", tr.log_every)->capture_default_str();
  add_model_options(t, tr.model);

  ikno::EvalOptions ev;
  auto* e = add_command(app, "eval", "evaluate a checkpoint or the initialization", ev.seed, ev.out);
  e->add_option("--data", ev.data, "dataset directory");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint directory; omit for the initialization");
  e->add_option("--split", ev.split, "test | train")->capture_default_str();
  add_model_options(e, ev.model);

  CLI11_PARSE(app, argc, argv);

  try {
    for (CLI::App* sub : app.get_subcommands())
      if (!config_path.empty()) apply_config(sub, config_path);
    ikno::CommandResult r;
    if (*g) {
      r = ikno::cmd_gen_data(gen);
    } else if (*v) {
      ver.verify.fault = ikno::parse_fault(fault);
      r = ikno::cmd_verify(ver);
      for (const auto& name : r.report.at("failed")) std::cerr << "FAILED check: " << name.get<std::string>() << '\n';
    } else if (*f) {
      r = ikno::cmd_finite_order_study(fo);
    } else if (*b) {
      r = ikno::cmd_bench(be);
    } else if (*t) {
      r = ikno::cmd_train(tr);
      if (r.exit_code != 0) std::cerr << "training aborted: " << r.report.value("abort_reason", "") << '\n';
    } else if (*e) {
      r = ikno::cmd_eval(ev);
    }
    std::cout << r.report.dump(2) << '\n';
    return r.exit_code;
  } catch (const ikno::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
}
