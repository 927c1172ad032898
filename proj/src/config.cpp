#include "flowact/config.hpp"

#include <cstdio>
#include <initializer_list>

namespace flowact {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

Comparison comparison_from_string(const std::string& s) {
  if (s == "<=" || s == "le") return Comparison::less_equal;
  if (s == "=" || s == "==" || s == "eq") return Comparison::equal;
  throw ConfigError("comparison must be '<=' or '=', got '" + s + "'");
}

std::string comparison_name(Comparison c) { return c == Comparison::equal ? "=" : "<="; }

ActorGradientRoute route_from_string(const std::string& s) {
  if (s == "analytic") return ActorGradientRoute::analytic;
  if (s == "autodiff") return ActorGradientRoute::autodiff;
  throw ConfigError("actor_gradient must be 'analytic' or 'autodiff'");
}

SamplerSettings sampler_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"method", "count", "states", "hmc"}, "sampler config");
  SamplerSettings s;
  s.method = j.value("method", s.method);
  if (!s.method.empty() && s.method != "rejection" && s.method != "hmc" && s.method != "psdd") {
    throw ConfigError("sampler method must be rejection, hmc or psdd");
  }
  s.count = j.value("count", s.count);
  s.states = j.value("states", s.states);
  if (s.states < 1) throw ConfigError("sampler states must be >= 1");
  if (j.contains("hmc")) {
    const auto& h = j.at("hmc");
    reject_unknown(h, {"step_size", "decay", "persistence", "leapfrog_steps", "burn_in", "thinning"}, "hmc config");
    s.hmc.step_size = h.value("step_size", s.hmc.step_size);
    s.hmc.decay = h.value("decay", s.hmc.decay);
    s.hmc.persistence = h.value("persistence", s.hmc.persistence);
    s.hmc.leapfrog_steps = h.value("leapfrog_steps", s.hmc.leapfrog_steps);
    s.hmc.burn_in = h.value("burn_in", s.hmc.burn_in);
    s.hmc.thinning = h.value("thinning", s.hmc.thinning);
  }
  return s;
}

FlowSettings flow_from_json_section(const nlohmann::json& j) {
  reject_unknown(j,
                 {"layers", "hidden", "sigma", "identity_init", "epochs", "batch_size", "learning_rate", "dequantize",
                  "eval_samples", "eval_states", "recall_samples", "histogram_bin", "histogram_bins"},
                 "flow config");
  FlowSettings f;
  f.model.layers = j.value("layers", f.model.layers);
  f.model.hidden = j.value("hidden", f.model.hidden);
  f.model.sigma = j.value("sigma", f.model.sigma);
  f.model.identity_init = j.value("identity_init", f.model.identity_init);
  f.train.epochs = j.value("epochs", f.train.epochs);
  f.train.batch_size = j.value("batch_size", f.train.batch_size);
  f.train.learning_rate = j.value("learning_rate", f.train.learning_rate);
  f.dequantize = j.value("dequantize", f.dequantize);
  if (f.dequantize != "auto") {
    try {
      dequantization_from_string(f.dequantize);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  f.eval_samples = j.value("eval_samples", f.eval_samples);
  f.eval_states = j.value("eval_states", f.eval_states);
  f.recall_samples = j.value("recall_samples", f.recall_samples);
  f.histogram_bin = j.value("histogram_bin", f.histogram_bin);
  f.histogram_bins = j.value("histogram_bins", f.histogram_bins);
  if (f.model.layers < 1 || f.train.epochs < 0 || f.train.batch_size < 1 || !(f.train.learning_rate > 0.0)) {
    throw ConfigError("flow config: layers >= 1, epochs >= 0, batch_size >= 1, learning_rate > 0");
  }
  return f;
}

RlSettings rl_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"episodes", "actor_hidden", "critic_hidden", "actor_lr", "critic_lr", "tau", "noise_std", "batch_size",
                  "buffer_capacity", "warmup_steps", "actor_gradient", "baseline"},
                 "rl config");
  RlSettings r;
  auto& d = r.ddpg;
  r.episodes = j.value("episodes", r.episodes);
  d.actor_hidden = j.value("actor_hidden", d.actor_hidden);
  d.critic_hidden = j.value("critic_hidden", d.critic_hidden);
  d.actor_lr = j.value("actor_lr", d.actor_lr);
  d.critic_lr = j.value("critic_lr", d.critic_lr);
  d.tau = j.value("tau", d.tau);
  d.noise_std = j.value("noise_std", d.noise_std);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.buffer_capacity = j.value("buffer_capacity", d.buffer_capacity);
  d.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  if (j.contains("actor_gradient")) d.route = route_from_string(j.at("actor_gradient").get<std::string>());
  r.baseline = j.value("baseline", r.baseline);
  if (r.baseline != "flow" && r.baseline != "ddpg-projection") {
    throw ConfigError("rl baseline must be 'flow' or 'ddpg-projection'");
  }
  if (r.episodes < 0) throw ConfigError("rl episodes must be >= 0");
  return r;
}

PbSettings pb_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"variables", "bits", "order", "node_budget", "constraints", "boolean"}, "pb config");
  PbSettings p;
  p.boolean = j.value("boolean", p.boolean);
  p.encoding.variables = j.value("variables", p.encoding.variables);
  p.encoding.bits = j.value("bits", p.encoding.bits);
  p.node_budget = j.value("node_budget", p.node_budget);
  const std::string order = j.value("order", std::string("interleaved"));
  if (order == "interleaved") {
    p.order = VariableOrder::interleaved;
  } else if (order == "blocked") {
    p.order = VariableOrder::blocked;
  } else {
    throw ConfigError("pb order must be 'interleaved' or 'blocked'");
  }
  for (const auto& c : j.value("constraints", nlohmann::json::array())) {
    reject_unknown(c, {"coefficients", "comparison", "threshold"}, "pb constraint");
    PbSettings::Linear lin;
    lin.coefficients = c.at("coefficients").get<std::vector<double>>();
    lin.comparison = comparison_from_string(c.value("comparison", std::string("<=")));
    lin.threshold = c.at("threshold").get<double>();
    p.constraints.push_back(std::move(lin));
  }
  if (p.boolean && !p.constraints.empty()) {
    p.encoding = {static_cast<int>(p.constraints.front().coefficients.size()), 1};
  }
  if (p.encoding.variables < 1 || p.encoding.bits < 1 || p.encoding.bits > 30) {
    throw ConfigError("pb encoding needs variables >= 1 and 1 <= bits <= 30");
  }
  for (const auto& c : p.constraints) {
    if (static_cast<int>(c.coefficients.size()) != p.encoding.variables) {
      throw ConfigError("pb constraint needs one coefficient per variable");
    }
  }
  return p;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    reject_unknown(j, {"seed", "env", "sampler", "flow", "rl", "pb", "dataset", "checkpoint"}, "run config");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("env")) c.env = env_spec_from_json(j.at("env"));
    if (j.contains("sampler")) c.sampler = sampler_from_json(j.at("sampler"));
    if (j.contains("flow")) c.flow = flow_from_json_section(j.at("flow"));
    if (j.contains("rl")) c.rl = rl_from_json(j.at("rl"));
    c.pb = j.contains("pb") ? pb_from_json(j.at("pb")) : pb_for_env(c.env);
    c.dataset = j.value("dataset", c.dataset);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  const auto& s = c.sampler;
  const auto& f = c.flow;
  const auto& d = c.rl.ddpg;
  nlohmann::json pb_constraints = nlohmann::json::array();
  for (const auto& lin : c.pb.constraints) {
    pb_constraints.push_back(
        {{"coefficients", lin.coefficients}, {"comparison", comparison_name(lin.comparison)}, {"threshold", lin.threshold}});
  }
  nlohmann::json j = {
      {"seed", c.seed},
      {"env", env_spec_to_json(c.env)},
      {"sampler",
       {{"method", s.method},
        {"count", s.count},
        {"states", s.states},
        {"hmc",
         {{"step_size", s.hmc.step_size},
          {"decay", s.hmc.decay},
          {"persistence", s.hmc.persistence},
          {"leapfrog_steps", s.hmc.leapfrog_steps},
          {"burn_in", s.hmc.burn_in},
          {"thinning", s.hmc.thinning}}}}},
      {"flow",
       {{"layers", f.model.layers},
        {"hidden", f.model.hidden},
        {"sigma", f.model.sigma},
        {"identity_init", f.model.identity_init},
        {"epochs", f.train.epochs},
        {"batch_size", f.train.batch_size},
        {"learning_rate", f.train.learning_rate},
        {"dequantize", f.dequantize},
        {"eval_samples", f.eval_samples},
        {"eval_states", f.eval_states},
        {"recall_samples", f.recall_samples},
        {"histogram_bin", f.histogram_bin},
        {"histogram_bins", f.histogram_bins}}},
      {"rl",
       {{"episodes", c.rl.episodes},
        {"actor_hidden", d.actor_hidden},
        {"critic_hidden", d.critic_hidden},
        {"actor_lr", d.actor_lr},
        {"critic_lr", d.critic_lr},
        {"tau", d.tau},
        {"noise_std", d.noise_std},
        {"batch_size", d.batch_size},
        {"buffer_capacity", d.buffer_capacity},
        {"warmup_steps", d.warmup_steps},
        {"actor_gradient", d.route == ActorGradientRoute::analytic ? "analytic" : "autodiff"},
        {"baseline", c.rl.baseline}}},
      {"pb",
       {{"variables", c.pb.encoding.variables},
        {"bits", c.pb.encoding.bits},
        {"order", c.pb.order == VariableOrder::interleaved ? "interleaved" : "blocked"},
        {"node_budget", c.pb.node_budget},
        {"boolean", c.pb.boolean},
        {"constraints", pb_constraints}}}};
  if (!c.dataset.empty()) j["dataset"] = c.dataset;
  if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint;
  return j;
}

PbSettings pb_for_env(const EnvSpec& env) {
  PbSettings p;
  if (env.name != "bikeshare") return p;
  int bits = 1;
  while ((1L << bits) - 1 < env.capacity) ++bits;
  p.encoding = {env.stations, bits};
  p.constraints.push_back({std::vector<double>(static_cast<std::size_t>(env.stations), 1.0), Comparison::equal,
                           static_cast<double>(env.bikes)});
  for (int i = 0; i < env.stations; ++i) {
    std::vector<double> unit(static_cast<std::size_t>(env.stations), 0.0);
    unit[static_cast<std::size_t>(i)] = 1.0;
    p.constraints.push_back({unit, Comparison::less_equal, static_cast<double>(env.capacity)});
  }
  return p;
}

Diagram compile_settings(const PbSettings& pb) {
  if (pb.constraints.empty()) throw ConfigError("pb config has no constraints");
  auto mgr = std::make_shared<DiagramManager>(make_order(pb.encoding, pb.order), pb.node_budget);
  Diagram d{mgr, kTrue};
  for (const auto& lin : pb.constraints) {
    d = conjoin(d, compile_pb(mgr, encode_linear(pb.encoding, lin.coefficients, lin.comparison, lin.threshold)));
  }
  return d;
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flowact
