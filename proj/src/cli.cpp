#include "flowact/cli.hpp"

#include "flowact/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace flowact {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::string env;
  std::string method;
  std::optional<std::size_t> count;
  std::string baseline;
  std::string dataset;
  std::string flow;
};

/// Thrown for a run that completed but failed one of its own checks.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v + 0.0);
  return buf;
}

RunConfig resolve(const Options& o) {
  nlohmann::json j = o.config_path.empty() ? nlohmann::json::object() : read_json(o.config_path);
  if (!o.env.empty()) {
    const bool same = j.contains("env") && j["env"].value("name", std::string("pointreach")) == o.env;
    if (!same) j["env"] = {{"name", o.env}};
  }
  RunConfig c = run_config_from_json(j);
  if (o.seed) c.seed = *o.seed;
  if (!o.method.empty()) c.sampler.method = o.method;
  if (o.count) c.sampler.count = *o.count;
  if (!o.baseline.empty()) c.rl.baseline = o.baseline;
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.flow.empty()) c.checkpoint = o.flow;
  // Validate the overridden fields through the same parser.
  return run_config_from_json(run_config_to_json(c));
}

std::string dataset_path(const RunConfig& c, const fs::path& out) {
  return c.dataset.empty() ? (out / "dataset.csv").string() : c.dataset;
}

std::string checkpoint_path(const RunConfig& c, const fs::path& out) {
  return c.checkpoint.empty() ? (out / "flow.json").string() : c.checkpoint;
}

/// Conditioning rows from `n` environment resets.
Matrix draw_conditioning(Environment& env, int n, std::uint64_t seed) {
  Matrix ys(n, env.cond_dim());
  for (int i = 0; i < n; ++i) ys.row(i) = env.conditioning(env.reset(seed + static_cast<std::uint64_t>(i))).transpose();
  return ys;
}

ConstraintSet reference_set(Environment& env, std::uint64_t seed) { return env.constraint_of(env.reset(seed)); }

std::string default_method(const ConstraintSet& cs) { return cs.integral() ? "psdd" : "hmc"; }

struct SampleReport {
  SampleDataset data;
  std::string stats;
};

SampleReport draw_samples(const RunConfig& c, Environment& env, const std::string& method, std::size_t count,
                          std::uint64_t seed) {
  const ConstraintSet ref = reference_set(env, seed);
  SampleReport rep;
  if (method == "psdd") {
    if (!ref.integral() || env.cond_dim() != 0) throw ConfigError("psdd sampling needs a state-independent integer set");
    PbSettings pb = c.pb.constraints.empty() ? pb_for_env(c.env) : c.pb;
    const Psdd psdd(compile_settings(pb));
    rep.data = sample_actions(psdd, pb.encoding, count, seed);
    rep.stats = "method=psdd samples=" + std::to_string(rep.data.size()) + " model_count=" + to_string(psdd.model_count());
    return rep;
  }
  const int states = env.cond_dim() == 0 ? 1 : c.sampler.states;
  const Matrix ys = draw_conditioning(env, states, seed);
  const std::size_t per_state = std::max<std::size_t>(1, count / static_cast<std::size_t>(states));
  if (method == "rejection") {
    RejectionStats total;
    for (int i = 0; i < states; ++i) {
      const Vector y = ys.row(i).transpose();
      RejectionStats st;
      auto part = rejection_sample(env.constraint_for_conditioning(y), y, per_state,
                                   seed + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL, &st);
      total.proposals += st.proposals;
      total.accepted += st.accepted;
      rep.data.records.insert(rep.data.records.end(), part.records.begin(), part.records.end());
    }
    rep.data.source = SampleSource::rejection;
    rep.data.feasible_fraction = static_cast<double>(total.accepted) / static_cast<double>(total.proposals);
    rep.stats = "method=rejection samples=" + std::to_string(rep.data.size()) +
                " proposals=" + std::to_string(total.proposals) + " success_rate=" + fmt(rep.data.feasible_fraction);
    return rep;
  }
  if (ref.integral()) throw ConfigError("hmc samples continuous sets; use --method psdd or rejection");
  HmcConfig hc = c.sampler.hmc;
  hc.seed = seed;
  rep.data = hmc_sample_conditioned([&](const Vector& y) { return env.constraint_for_conditioning(y); }, ys, per_state, hc);
  rep.stats = "method=hmc samples=" + std::to_string(rep.data.size());
  return rep;
}

/// Fraction of records feasible for their own conditioning vector.
double valid_fraction(const SampleDataset& d, Environment& env) {
  if (d.empty()) return 1.0;
  std::size_t ok = 0;
  for (const auto& r : d.records) ok += is_feasible(env.constraint_for_conditioning(r.y), r.x);
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

int cmd_sample(const RunConfig& c, const fs::path& out, std::ostream& os, nlohmann::json& outputs) {
  auto env = make_env(c.env);
  const std::string method = c.sampler.method.empty() ? default_method(reference_set(*env, c.seed)) : c.sampler.method;
  SampleReport rep;
  try {
    rep = draw_samples(c, *env, method, c.sampler.count, c.seed);
  } catch (const SamplingError& e) {
    throw ConfigError(e.what());
  }
  const double valid = valid_fraction(rep.data, *env);
  save_dataset(rep.data, (out / "dataset.csv").string());
  outputs.push_back("dataset.csv");
  os << rep.stats << " valid_fraction=" << fmt(valid) << "\n";
  if (valid < 1.0) throw CheckFailed("sampler produced infeasible actions");
  return kExitOk;
}

int cmd_train_flow(const RunConfig& c, const fs::path& out, std::ostream& os, nlohmann::json& outputs) {
  auto env = make_env(c.env);
  const SampleDataset data = load_dataset(dataset_path(c, out));
  if (data.x_dim() != env->action_dim() || data.y_dim() != env->cond_dim()) {
    throw ConfigError("dataset dimensions do not match environment '" + c.env.name + "'");
  }
  const ConstraintSet ref = reference_set(*env, c.seed);
  FlowConfig fc = c.flow.model;
  fc.seed = c.seed;
  FlowModel fm(env->action_dim(), env->cond_dim(), fc, ActionScaling::for_set(ref));
  FlowTrainConfig tc = c.flow.train;
  tc.seed = c.seed + 1;
  tc.dequantize = c.flow.dequantize == "auto" ? dequantization_for(ref) : dequantization_from_string(c.flow.dequantize);
  const int every = std::max(1, tc.epochs / 10);
  const auto log = train(fm, data, tc, [&](int epoch, double nll) {
    if ((epoch + 1) % every == 0) os << "epoch " << epoch + 1 << " nll " << fmt(nll) << "\n";
  });
  save_flow(fm, (out / "flow.json").string());
  std::string csv = "epoch,nll\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "0,%.17g\n", log.initial_nll);
  csv += buf;
  for (std::size_t e = 0; e < log.epoch_nll.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e + 1, log.epoch_nll[e]);
    csv += buf;
  }
  write_text(out / "flow_nll.csv", csv);
  outputs.push_back("flow.json");
  outputs.push_back("flow_nll.csv");
  os << "initial_nll=" << fmt(log.initial_nll)
     << " final_nll=" << fmt(log.epoch_nll.empty() ? log.initial_nll : log.epoch_nll.back()) << "\n";
  return kExitOk;
}

int cmd_eval_flow(const RunConfig& c, const fs::path& out, std::ostream& os, nlohmann::json& outputs) {
  auto env = make_env(c.env);
  const std::string ckpt = checkpoint_path(c, out);
  if (!fs::exists(ckpt)) throw ConfigError("flow checkpoint '" + ckpt + "' not found");
  const FlowModel fm = load_flow(ckpt);
  if (fm.action_dim() != env->action_dim() || fm.cond_dim() != env->cond_dim()) {
    throw ConfigError("flow checkpoint does not match environment '" + c.env.name + "'");
  }
  const std::uint64_t eval_seed = c.seed + 1000;
  FlowEvaluation ev;
  Matrix ys(1, 0);
  if (env->cond_dim() == 0) {
    ev = evaluate_accuracy(fm, reference_set(*env, c.seed), Vector(0), c.flow.eval_samples, eval_seed);
  } else {
    ys = draw_conditioning(*env, c.flow.eval_states, eval_seed);
    ev = evaluate_accuracy(
        fm, [&](const Vector& y) { return env->constraint_for_conditioning(y); }, ys,
        std::max<std::size_t>(1, c.flow.eval_samples / static_cast<std::size_t>(c.flow.eval_states)), eval_seed);
  }
  SampleDataset reference;
  if (!c.dataset.empty()) {
    reference = load_dataset(c.dataset);
  } else {
    const std::string method = default_method(reference_set(*env, c.seed));
    reference = draw_samples(c, *env, method, c.flow.recall_samples, c.seed + 2000).data;
  }
  const double rec = recall(fm, reference);
  const Histogram h = make_histogram(ev.invalid_distances, c.flow.histogram_bin, c.flow.histogram_bins);
  const nlohmann::json result = {{"accuracy", ev.accuracy()},
                                 {"recall", rec},
                                 {"mean_cv_of_invalid", ev.mean_cv_of_invalid},
                                 {"samples", ev.samples},
                                 {"valid", ev.valid},
                                 {"invalid_distance_histogram",
                                  {{"bin_width", h.bin_width},
                                   {"counts", h.counts},
                                   {"fraction_within_1", ev.fraction_within(1.0)}}}};
  write_text(out / "eval.json", result.dump(2) + "\n");
  outputs.push_back("eval.json");
  os << "accuracy=" << fmt(ev.accuracy()) << " recall=" << fmt(rec) << " mean_cv_of_invalid=" << fmt(ev.mean_cv_of_invalid)
     << "\n";
  return kExitOk;
}

int cmd_train_rl(const RunConfig& c, const fs::path& out, std::ostream& os, nlohmann::json& outputs) {
  auto env = make_env(c.env);
  std::shared_ptr<const ActionMap> map;
  std::uint64_t flow_sum = 0;
  std::shared_ptr<const FlowModel> flow;
  if (c.rl.baseline == "flow") {
    const std::string ckpt = checkpoint_path(c, out);
    if (!fs::exists(ckpt)) throw ConfigError("flow checkpoint '" + ckpt + "' not found");
    flow = std::make_shared<const FlowModel>(load_flow(ckpt));
    if (flow->action_dim() != env->action_dim() || flow->cond_dim() != env->cond_dim()) {
      throw ConfigError("flow checkpoint dimensions do not match environment '" + c.env.name + "'");
    }
    flow_sum = parameter_checksum(flow->parameters());
    map = std::make_shared<FlowActionMap>(flow);
  } else {
    map = std::make_shared<BoxActionMap>(ActionScaling::for_box(reference_set(*env, c.seed)));
  }
  DdpgConfig dc = c.rl.ddpg;
  dc.seed = c.seed;
  DdpgAgent agent(env->state_dim(), env->cond_dim(), map, dc);
  const int every = std::max(1, c.rl.episodes / 10);
  const RunResult r = train_run(*env, agent, c.rl.episodes, c.seed * 1'000'003ULL + 17, [&](const MetricsRow& row) {
    if ((row.episode + 1) % every == 0) {
      os << "episode " << row.episode + 1 << " return_ma100 " << fmt(row.return_ma100) << " cum_violations "
         << row.cum_violations << "\n";
    }
  });
  write_text(out / "metrics.csv", metrics_csv(r.metrics));
  write_text(out / "policy.json", agent.to_json().dump() + "\n");
  const double rate = r.ledger.steps == 0 ? 0.0 : static_cast<double>(r.ledger.violations) / r.ledger.steps;
  const nlohmann::json summary = {{"steps", r.ledger.steps},
                                  {"violations", r.ledger.violations},
                                  {"violation_rate", rate},
                                  {"mean_cv", r.ledger.mean_cv()},
                                  {"infeasible_executed", r.infeasible_executed},
                                  {"final_return_ma100", r.metrics.empty() ? 0.0 : r.metrics.back().return_ma100}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  outputs.push_back("metrics.csv");
  outputs.push_back("policy.json");
  outputs.push_back("summary.json");
  os << "steps=" << r.ledger.steps << " violations=" << r.ledger.violations << " violation_rate=" << fmt(rate)
     << " mean_cv=" << fmt(r.ledger.mean_cv()) << "\n";
  if (r.infeasible_executed > 0) throw CheckFailed("an infeasible action reached the environment");
  if (flow && parameter_checksum(flow->parameters()) != flow_sum) throw CheckFailed("flow parameters changed during RL");
  return kExitOk;
}

int cmd_compile_pb(const RunConfig& c, const fs::path& out, std::ostream& os, nlohmann::json& outputs) {
  const PbSettings pb = c.pb.constraints.empty() ? pb_for_env(c.env) : c.pb;
  Diagram d;
  try {
    d = compile_settings(pb);
  } catch (const BudgetError& e) {
    throw CheckFailed(e.what());
  }
  const ModelCount count = model_count(d);
  write_text(out / "diagram.json", diagram_to_json(d).dump() + "\n");
  outputs.push_back("diagram.json");
  os << "nodes=" << d.node_count() << " model_count=" << to_string(count)
     << " peak_width=" << d.manager->peak_width() << "\n";
  if (count == 0) throw CheckFailed("constraint is unsatisfiable");
  return kExitOk;
}

void write_manifest(const fs::path& out, const std::string& sub, const RunConfig& c, const nlohmann::json& outputs,
                    int status) {
  const nlohmann::json config = run_config_to_json(c);
  const nlohmann::json manifest = {
      {"subcommand", sub},
      {"seed", c.seed},
      {"config_hash", config_hash(config)},
      {"config", config},
      {"outputs", outputs},
      {"exit_code", status},
      {"versions",
       {{"flowact", "0.1.0"},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"compiler", __VERSION__}}}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flow-based action-constrained RL toolkit", "flowact"};
  app.require_subcommand(1, 1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> subcommands{
      {"sample", "draw feasible actions (rejection, hmc, psdd)"},
      {"train-flow", "fit the conditional flow to a dataset"},
      {"eval-flow", "accuracy, recall and invalid-output distances of a flow"},
      {"train-rl", "online DDPG with the flow (or the projection baseline)"},
      {"compile-pb", "compile PB constraints to a decision diagram and count models"}};
  for (const auto& [name, help] : subcommands) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", o.config_path, "run config JSON");
    sc->add_option("--out", o.out_dir, "output directory");
    sc->add_option("--seed", o.seed, "seed overriding the config");
    sc->add_option("--env", o.env, "environment: pointreach, weightedlimit, bikeshare");
    sc->add_option("--method", o.method, "sampler: rejection, hmc, psdd");
    sc->add_option("--count", o.count, "number of samples");
    sc->add_option("--baseline", o.baseline, "flow or ddpg-projection");
    sc->add_option("--dataset", o.dataset, "dataset file");
    sc->add_option("--flow", o.flow, "flow checkpoint");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "flowact: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  RunConfig c;
  try {
    c = resolve(o);
  } catch (const std::exception& e) {
    err << "flowact: config error: " << e.what() << "\n";
    return kExitUsage;
  }
  const fs::path dir(o.out_dir);
  nlohmann::json outputs = nlohmann::json::array();
  int status = kExitOk;
  try {
    fs::create_directories(dir);
    if (sub == "sample") status = cmd_sample(c, dir, out, outputs);
    if (sub == "train-flow") status = cmd_train_flow(c, dir, out, outputs);
    if (sub == "eval-flow") status = cmd_eval_flow(c, dir, out, outputs);
    if (sub == "train-rl") status = cmd_train_rl(c, dir, out, outputs);
    if (sub == "compile-pb") status = cmd_compile_pb(c, dir, out, outputs);
  } catch (const CheckFailed& e) {
    err << "flowact " << sub << ": check failed: " << e.what() << "\n";
    status = kExitCheckFailed;
  } catch (const ConfigError& e) {
    err << "flowact " << sub << ": config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "flowact " << sub << ": " << e.what() << "\n";
    status = kExitRuntime;
  }
  try {
    write_manifest(dir, sub, c, outputs, status);
  } catch (const std::exception& e) {
    err << "flowact: cannot write manifest: " << e.what() << "\n";
    return kExitRuntime;
  }
  return status;
}

}  // namespace flowact
