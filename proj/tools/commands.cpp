#include "ikno/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ikno/error.hpp"
#include "ikno/io.hpp"
#include "ikno/synthetic.hpp"
#include "ikno/training.hpp"

namespace ikno {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json base_report(const std::string& command) {
  return json{{"schema_version", kReportSchemaVersion}, {"command", command}};
}

json norm_json(const NormStats& s) {
  return json{{"mu", s.mu}, {"sigma", s.sigma}, {"epsilon", s.epsilon}};
}

NormStats norm_from(const json& j) {
  NormStats s;
  s.mu = j.at("mu").get<std::vector<double>>();
  s.sigma = j.at("sigma").get<std::vector<double>>();
  s.epsilon = j.at("epsilon").get<double>();
  return s;
}

json eval_json(const EvalReport& r) {
  return json{{"median_rel_l1_percent", r.median_rel_l1.percent},
              {"excluded", r.median_rel_l1.excluded},
              {"mse", r.mse},
              {"mae", r.mae},
              {"mean_loss", r.mean_loss},
              {"samples", r.samples}};
}

std::string dataset_checksum(const fs::path& dir) {
  BundleReader r(dir, "");
  return r.meta().value("checksum", "");
}

Dataset load_required(const fs::path& dir) {
  if (dir.empty()) throw Error(Errc::Io, "no dataset given (--data)");
  if (!fs::exists(dir / "manifest.json")) throw Error(Errc::Io, "dataset not found: " + dir.string());
  return load_dataset(dir);
}

const std::vector<SampleRecord>& split_of(const Dataset& d, const std::string& split) {
  if (split == "test") return d.test;
  if (split == "train") return d.train;
  throw Error(Errc::InvalidArgument, "unknown split '" + split + "'");
}

std::size_t steps_for(std::size_t steps, std::size_t epochs, std::size_t batch, std::size_t n) {
  if (steps != 0) return steps;
  if (epochs != 0) return epochs * ((n + batch - 1) / batch);
  return 500;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void write_report(const fs::path& dir, const std::string& name, const json& report) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir.string());
  std::ofstream os(dir / name);
  if (!os) throw Error(Errc::Io, "cannot write " + (dir / name).string());
  os << report.dump(2) << '\n';
}

ModelConfig ModelOptions::to_config(std::size_t dim, std::size_t in_channels,
                                    std::size_t out_channels) const {
  ModelConfig c;
  c.dim = dim;
  c.grid_points = grid_points;
  c.hidden = hidden;
  c.branches = branches;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.processor = parse_processor(processor);
  c.processor_depth = processor_depth;
  c.processor_width = processor_width;
  c.attention_heads = attention_heads;
  c.variant = parse_variant(variant);
  c.truncation_order = order;
  c.head_depth = head_depth;
  c.init_alpha = init_alpha;
  c.validate();
  return c;
}

json model_config_json(const ModelConfig& c) {
  return json{{"dim", c.dim},
              {"grid_points", c.grid_points},
              {"hidden", c.hidden},
              {"branches", c.branches},
              {"nerf_levels", c.nerf_levels},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"processor", std::string(to_string(c.processor))},
              {"processor_depth", c.processor_depth},
              {"processor_width", c.processor_width},
              {"attention_heads", c.attention_heads},
              {"variant", std::string(to_string(c.variant))},
              {"truncation_order", c.truncation_order},
              {"head_depth", c.head_depth},
              {"kernel", std::string(to_string(c.kernel))},
              {"window", {{"radius", c.window.radius}, {"scale", c.window.scale}, {"alpha", c.window.alpha}}},
              {"grid_min", c.grid_min},
              {"grid_max", c.grid_max},
              {"init_scales", c.init_scales},
              {"init_alpha", c.init_alpha}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("dim");
    c.grid_points = j.at("grid_points");
    c.hidden = j.at("hidden");
    c.branches = j.at("branches");
    c.nerf_levels = j.at("nerf_levels");
    c.in_channels = j.at("in_channels");
    c.out_channels = j.at("out_channels");
    c.processor = parse_processor(j.at("processor").get<std::string>());
    c.processor_depth = j.at("processor_depth");
    c.processor_width = j.at("processor_width");
    c.attention_heads = j.at("attention_heads");
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.truncation_order = j.at("truncation_order");
    c.head_depth = j.at("head_depth");
    c.kernel = parse_kernel_family(j.at("kernel").get<std::string>());
    c.window.radius = j.at("window").at("radius");
    c.window.scale = j.at("window").at("scale");
    c.window.alpha = j.at("window").at("alpha");
    c.grid_min = j.at("grid_min");
    c.grid_max = j.at("grid_max");
    c.init_scales = j.at("init_scales").get<std::vector<double>>();
    c.init_alpha = j.at("init_alpha");
  } catch (const json::exception& e) {
    throw Error(Errc::Io, std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

CommandResult cmd_gen_data(const GenDataOptions& o) {
  Dataset d;
  if (o.kind == "csines") {
    CSinesSpec s;
    s.num_train = o.num_train;
    s.num_test = o.num_test;
    s.dim = o.dim;
    s.max_mode = o.max_mode;
    s.input_points = o.input_points;
    s.query_points = o.query_points;
    s.seed = o.seed;
    d = gen_csines(s);
  } else if (o.kind == "poisson-gauss") {
    PoissonGaussSpec s;
    s.num_train = o.num_train;
    s.num_test = o.num_test;
    s.solver_res = o.solver_res;
    s.input_points = o.input_points;
    s.query_points = o.query_points;
    if (o.cloud == "grid")
      s.cloud = CloudMode::Grid;
    else if (o.cloud == "continuous")
      s.cloud = CloudMode::Continuous;
    else
      throw Error(Errc::InvalidArgument, "unknown cloud mode '" + o.cloud + "'");
    s.seed = o.seed;
    d = gen_poisson_gauss(s);
  } else if (o.kind == "toy-trajectory") {
    ToyTrajectorySpec s;
    s.num_train = o.num_train;
    s.num_test = o.num_test;
    s.stamps = o.stamps;
    s.dt = o.dt;
    s.velocity = o.velocity;
    s.modes = o.modes;
    s.points = o.input_points;
    s.target_mode = parse_temporal_mode(o.target_mode);
    s.seed = o.seed;
    d = gen_toy_trajectory(s);
  } else {
    throw Error(Errc::InvalidArgument,
                "unknown dataset kind '" + o.kind + "' (csines, poisson-gauss, toy-trajectory)");
  }
  const std::uint64_t sum = save_dataset(d, o.out);
  json r = base_report("gen-data");
  r["kind"] = d.kind;
  r["seed"] = d.seed;
  r["dim"] = d.dim;
  r["out"] = o.out.string();
  r["checksum"] = hex64(sum);
  r["counts"] = json{{"train", d.train.size()}, {"test", d.test.size()}};
  r["spec"] = json::parse(d.spec_json);
  write_report(o.out, "gen-data.json", r);
  return {0, r};
}

CommandResult cmd_verify(const VerifyCommandOptions& o) {
  const auto checks = run_verify(o.verify);
  json r = base_report("verify");
  r["cases"] = o.verify.cases;
  r["seed"] = o.verify.seed;
  r["fault"] = std::string(to_string(o.verify.fault));
  bool all = true;
  json arr = json::array();
  json failed = json::array();
  for (const auto& c : checks) {
    arr.push_back(to_json(c));
    if (!c.passed) {
      all = false;
      failed.push_back(c.name);
    }
  }
  r["checks"] = arr;
  r["failed"] = failed;
  r["passed"] = all;
  write_report(o.out, "verify.json", r);
  return {all ? 0 : 1, r};
}

CommandResult cmd_bench(const BenchCommandOptions& o) {
  const BenchReport b = run_bench(o.bench);
  json r = base_report("bench");
  r.update(to_json(b));
  r["warmups"] = o.bench.warmups;
  r["repetitions"] = o.bench.repetitions;
  write_report(o.out, "bench.json", r);
  std::ofstream csv(o.out / "bench.csv");
  csv << "group,shape,points,variant,build_ns,apply_ns,warmups,repetitions,max_deviation,skipped\n";
  for (const auto& c : b.cases) {
    std::string shape;
    for (std::size_t i = 0; i < c.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(c.shape[i]);
    csv << c.group << ',' << shape << ',' << c.points() << ',' << c.variant << ','
        << csv_number(c.build_ns) << ',' << csv_number(c.apply_ns) << ',' << c.warmups << ','
        << c.repetitions << ',' << (c.max_deviation ? csv_number(*c.max_deviation) : "") << ','
        << (c.skipped ? 1 : 0) << '\n';
  }
  return {0, r};
}

CommandResult cmd_train(const TrainOptions& o) {
  const Dataset raw = load_required(o.data);
  ModelConfig cfg;
  ParamVector params;
  OptimizerState state;
  DatasetNorm norm;
  json train_settings;
  bool resumed = false;
  if (!o.resume.empty()) {
    Checkpoint ck = load_checkpoint(o.resume);
    cfg = model_config_from_json(ck.extra.at("model"));
    norm.conditions = norm_from(ck.extra.at("norm").at("conditions"));
    norm.targets = norm_from(ck.extra.at("norm").at("targets"));
    train_settings = ck.extra.at("train");
    params = std::move(ck.params);
    state = std::move(ck.state);
    resumed = true;
  } else {
    norm = fit_dataset_norm(raw);
    cfg = o.model.to_config(raw.dim, raw.condition_channels(), raw.target_channels());
    const std::size_t steps = steps_for(o.steps, o.epochs, o.batch, raw.train.size());
    train_settings = json{{"seed", o.seed}, {"steps", steps},          {"batch", o.batch},
                          {"lr", o.lr},     {"weight_decay", o.weight_decay}, {"clip", o.clip}};
  }
  const Dataset data = apply_dataset_norm(norm, raw);
  const IknoModel model(cfg);
  if (!resumed) params = model.init_params(o.seed);
  if (params.values.size() != model.layout().size())
    throw Error(Errc::Io, "checkpoint does not match the model layout");

  TrainConfig tc;
  tc.seed = train_settings.at("seed");
  tc.batch_size = train_settings.at("batch");
  tc.optimizer.lr0 = train_settings.at("lr");
  tc.optimizer.weight_decay = train_settings.at("weight_decay");
  tc.optimizer.clip = train_settings.at("clip");
  tc.optimizer.horizon = train_settings.at("steps");
  // a resumed run may extend the target; the schedule horizon stays fixed
  tc.steps = resumed ? steps_for(o.steps, o.epochs, tc.batch_size, raw.train.size())
                     : static_cast<std::size_t>(train_settings.at("steps"));
  if (resumed && o.steps == 0 && o.epochs == 0) tc.steps = train_settings.at("steps");
  if (o.stop_at != 0) tc.steps = std::min(tc.steps, o.stop_at);
  tc.log_path = o.out / "train_log.jsonl";
  tc.log_every = o.log_every;
  fs::create_directories(o.out);

  json r = base_report("train");
  r["variant"] = std::string(to_string(cfg.variant));
  r["model"] = model_config_json(cfg);
  r["params"] = params.values.size();
  r["resumed"] = resumed;
  r["train"] = train_settings;
  if (!resumed) r["initial_eval"] = eval_json(evaluate(model, params, data.test));

  const TrainResult res = train(model, params, state, data.train, tc);

  Checkpoint ck;
  ck.params = res.params;
  ck.state = res.state;
  ck.extra = json{{"model", model_config_json(cfg)},
                  {"norm", {{"conditions", norm_json(norm.conditions)}, {"targets", norm_json(norm.targets)}}},
                  {"train", train_settings},
                  {"data_checksum", dataset_checksum(o.data)}};
  save_checkpoint(ck, o.out / "checkpoint");

  r["steps_target"] = tc.steps;
  r["steps_completed"] = res.state.step;
  r["aborted"] = res.aborted;
  r["abort_reason"] = res.abort_reason;
  r["final_batch_loss"] = res.losses.empty() ? json(nullptr) : json(res.losses.back());
  r["eval"] = eval_json(evaluate(model, res.params, data.test));
  r["checkpoint"] = (o.out / "checkpoint").string();
  write_report(o.out, "train.json", r);
  return {res.aborted ? 1 : 0, r};
}

CommandResult cmd_eval(const EvalOptions& o) {
  const Dataset raw = load_required(o.data);
  ModelConfig cfg;
  ParamVector params;
  DatasetNorm norm;
  if (!o.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(o.checkpoint);
    cfg = model_config_from_json(ck.extra.at("model"));
    norm.conditions = norm_from(ck.extra.at("norm").at("conditions"));
    norm.targets = norm_from(ck.extra.at("norm").at("targets"));
    params = std::move(ck.params);
  } else {
    norm = fit_dataset_norm(raw);
    cfg = o.model.to_config(raw.dim, raw.condition_channels(), raw.target_channels());
  }
  const IknoModel model(cfg);
  if (o.checkpoint.empty()) params = model.init_params(o.seed);
  const Dataset data = apply_dataset_norm(norm, raw);
  json r = base_report("eval");
  r["variant"] = std::string(to_string(cfg.variant));
  r["split"] = o.split;
  r["source"] = o.checkpoint.empty() ? std::string("init") : o.checkpoint.string();
  r["eval"] = eval_json(evaluate(model, params, split_of(data, o.split)));
  write_report(o.out, "eval.json", r);
  return {0, r};
}

CommandResult cmd_finite_order_study(const FiniteOrderOptions& o) {
  const Dataset raw = load_required(o.data);
  const DatasetNorm norm = fit_dataset_norm(raw);
  const Dataset data = apply_dataset_norm(norm, raw);

  struct Row {
    std::string name;
    OperatorVariant variant;
    std::size_t order;
  };
  std::vector<Row> rows;
  for (auto p : o.orders) rows.push_back({"p" + std::to_string(p), OperatorVariant::Truncated, p});
  rows.push_back({"vanilla", OperatorVariant::Vanilla, 0});
  rows.push_back({"tp", OperatorVariant::TP, 0});

  json r = base_report("finite-order-study");
  r["kernel"] = json{{"family", "linear_window"}, {"radius", o.radius}, {"scale", o.scale}, {"alpha", o.alpha},
                     {"learnable", false}};
  r["steps"] = o.steps;
  r["seed"] = o.seed;
  r["reference_trend"] = json{
      {"description", "published linear-window study, median relative L1 (%) for p = 1..4"},
      {"orders", {1, 2, 3, 4}},
      {"median_rel_l1_percent", {2.49, 2.32, 2.25, 2.13}},
      {"reproduced", false},
      {"note", "context only: different processor, data and scale"}};
  json arr = json::array();
  bool ok = true;
  fs::create_directories(o.out);
  std::ofstream csv(o.out / "finite_order_study.csv");
  csv << "config,variant,order,median_rel_l1_percent,mse,mae,final_batch_loss,aborted\n";
  for (const auto& row : rows) {
    ModelConfig c;
    c.dim = raw.dim;
    c.in_channels = raw.condition_channels();
    c.out_channels = raw.target_channels();
    c.grid_points = o.grid_points;
    c.hidden = o.hidden;
    c.branches = 1;
    c.processor = ProcessorKind::Mlp;
    c.processor_width = o.processor_width;
    c.variant = row.variant;
    c.truncation_order = row.order;
    c.kernel = KernelFamily::LinearWindow;
    c.window = LinearWindowKernel{o.radius, o.scale, o.alpha};
    const IknoModel model(c);
    TrainConfig tc;
    tc.steps = o.steps;
    tc.batch_size = o.batch;
    tc.seed = o.seed;
    tc.optimizer.lr0 = o.lr;
    tc.optimizer.horizon = o.steps;
    const TrainResult res = train(model, model.init_params(o.seed), OptimizerState{}, data.train, tc);
    const EvalReport ev = evaluate(model, res.params, data.test);
    const bool finite = std::isfinite(ev.median_rel_l1.percent) && std::isfinite(ev.mse) && std::isfinite(ev.mae);
    ok = ok && finite && !res.aborted;
    json row_json{{"config", row.name},
                  {"variant", std::string(to_string(row.variant))},
                  {"order", row.variant == OperatorVariant::Truncated ? json(row.order) : json(nullptr)},
                  {"eval", eval_json(ev)},
                  {"final_batch_loss", res.losses.empty() ? json(nullptr) : json(res.losses.back())},
                  {"aborted", res.aborted},
                  {"finite", finite}};
    arr.push_back(row_json);
    csv << row.name << ',' << to_string(row.variant) << ','
        << (row.variant == OperatorVariant::Truncated ? std::to_string(row.order) : std::string()) << ','
        << csv_number(ev.median_rel_l1.percent) << ',' << csv_number(ev.mse) << ',' << csv_number(ev.mae)
        << ',' << (res.losses.empty() ? std::string() : csv_number(res.losses.back())) << ','
        << (res.aborted ? 1 : 0) << '\n';
  }
  r["rows"] = arr;
  r["all_finite"] = ok;
  write_report(o.out, "finite-order-study.json", r);
  return {ok ? 0 : 1, r};
}

}  // namespace ikno
