#include "flowact/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace flowact {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

EnvSpec env_spec_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"name", "horizon", "gamma", "seed", "radius_sq", "weight_dim", "weight_range", "variant", "limit",
                  "stations", "bikes", "capacity", "demand"},
                 "env config");
  EnvSpec s;
  s.name = j.value("name", s.name);
  if (s.name == "bikeshare") s.horizon = 24;
  s.horizon = j.value("horizon", s.horizon);
  s.gamma = j.value("gamma", s.gamma);
  s.seed = j.value("seed", s.seed);
  s.radius_sq = j.value("radius_sq", s.radius_sq);
  s.weight_dim = j.value("weight_dim", s.weight_dim);
  s.weight_range = j.value("weight_range", s.weight_range);
  s.variant = j.value("variant", s.variant);
  if (s.variant == "hinge" && !j.contains("limit")) s.limit = 10.0;
  s.limit = j.value("limit", s.limit);
  s.stations = j.value("stations", s.stations);
  s.bikes = j.value("bikes", s.bikes);
  s.capacity = j.value("capacity", s.capacity);
  s.demand = j.value("demand", s.demand);
  return s;
}

nlohmann::json env_spec_to_json(const EnvSpec& s) {
  nlohmann::json j = {{"name", s.name}, {"horizon", s.horizon}, {"gamma", s.gamma}, {"seed", s.seed}};
  if (s.name == "pointreach") j["radius_sq"] = s.radius_sq;
  if (s.name == "weightedlimit") {
    j["weight_dim"] = s.weight_dim;
    j["weight_range"] = s.weight_range;
    j["variant"] = s.variant;
    j["limit"] = s.limit;
  }
  if (s.name == "bikeshare") {
    j["stations"] = s.stations;
    j["bikes"] = s.bikes;
    j["capacity"] = s.capacity;
    j["demand"] = s.demand;
  }
  return j;
}

Environment::Environment(EnvSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {
  if (spec_.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (!(spec_.gamma >= 0.0 && spec_.gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
}

Vector Environment::reset(std::uint64_t seed) {
  rng_.seed(seed);
  t_ = 0;
  started_ = true;
  state_ = initial_state();
  return state_;
}

void Environment::set_state(const Vector& state, int t) {
  if (state.size() != state_dim()) throw ShapeError("state has wrong dimension");
  if (t < 0 || t >= spec_.horizon) throw std::invalid_argument("time step outside the episode");
  state_ = state;
  t_ = t;
  started_ = true;
}

StepResult Environment::step(const Vector& action) {
  if (!started_) throw std::logic_error("step() before reset()");
  if (t_ >= spec_.horizon) throw std::logic_error("step() after the episode ended; call reset()");
  if (action.size() != action_dim()) throw ShapeError("action has wrong dimension");
  const ConstraintSet cs = constraint_of(state_);
  if (!is_feasible(cs, action)) {
    const double cv = violation_magnitude(cs, action);
    throw InfeasibleActionError(name() + " rejected an infeasible action at t=" + std::to_string(t_) +
                                    " (CV magnitude " + fmt(cv) + ")",
                                cv);
  }
  const double reward = transition(action);
  ++t_;
  return {state_, reward, t_ >= spec_.horizon};
}

PointReach::PointReach(EnvSpec spec) : Environment(std::move(spec)) {
  if (!(spec_.radius_sq > 0.0)) throw std::invalid_argument("pointreach radius_sq must be positive");
}

ConstraintSet PointReach::constraint_of(const Vector&) const { return ConstraintSet::ball(spec_.radius_sq, 2); }
Vector PointReach::conditioning(const Vector&) const { return Vector(0); }
ConstraintSet PointReach::constraint_for_conditioning(const Vector&) const {
  return ConstraintSet::ball(spec_.radius_sq, 2);
}

Vector PointReach::initial_state() {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vector s(4);
  s << 0.0, 0.0, 0.0, 0.0;
  s(2) = unit(rng_);
  s(3) = unit(rng_);
  return s;
}

double PointReach::transition(const Vector& a) {
  state_.head<2>() = (state_.head<2>() + a).cwiseMax(-1.0).cwiseMin(1.0);
  return -(state_.head<2>() - state_.tail<2>()).norm();
}

WeightedLimit::WeightedLimit(EnvSpec spec) : Environment(std::move(spec)) {
  if (spec_.weight_dim < 2) throw std::invalid_argument("weightedlimit needs weight_dim >= 2");
  if (spec_.variant != "l1" && spec_.variant != "hinge") throw std::invalid_argument("variant must be l1 or hinge");
  if (!(spec_.limit > 0.0)) throw std::invalid_argument("weightedlimit limit must be positive");
}

ConstraintSet WeightedLimit::constraint_of(const Vector& state) const {
  return constraint_for_conditioning(conditioning(state));
}
Vector WeightedLimit::conditioning(const Vector& state) const { return state; }
ConstraintSet WeightedLimit::constraint_for_conditioning(const Vector& y) const {
  return spec_.variant == "l1" ? ConstraintSet::weighted_l1(spec_.limit, y) : ConstraintSet::hinge_sum(spec_.limit, y);
}

Vector WeightedLimit::draw_weights() {
  std::uniform_real_distribution<double> unit(-spec_.weight_range, spec_.weight_range);
  Vector w(spec_.weight_dim);
  for (int i = 0; i < spec_.weight_dim; ++i) w(i) = unit(rng_);
  return w;
}

Vector WeightedLimit::initial_state() { return draw_weights(); }

double WeightedLimit::transition(const Vector& a) {
  const double reward = a.dot(state_) - 0.1 * a.squaredNorm();
  state_ = draw_weights();
  return reward;
}

BikeShare::BikeShare(EnvSpec spec) : Environment(std::move(spec)) {
  if (spec_.stations < 1 || spec_.capacity < 0 || spec_.bikes < 0) throw std::invalid_argument("bad bikeshare sizes");
  if (static_cast<long>(spec_.stations) * spec_.capacity < spec_.bikes) {
    throw std::invalid_argument("bikeshare capacity cannot hold all bikes");
  }
  if (static_cast<int>(spec_.demand.size()) != spec_.stations) {
    throw std::invalid_argument("bikeshare demand needs one rate per station");
  }
  for (double l : spec_.demand) {
    if (!(l >= 0.0)) throw std::invalid_argument("bikeshare demand rates must be >= 0");
  }
}

ConstraintSet BikeShare::constraint_of(const Vector&) const {
  return ConstraintSet::alloc_eq(spec_.bikes, spec_.capacity, spec_.stations);
}
Vector BikeShare::conditioning(const Vector&) const { return Vector(0); }
ConstraintSet BikeShare::constraint_for_conditioning(const Vector&) const {
  return ConstraintSet::alloc_eq(spec_.bikes, spec_.capacity, spec_.stations);
}

Vector BikeShare::initial_state() {
  const int n = spec_.stations;
  Vector s = Vector::Zero(2 * n);
  // Equal split, remainder to the lowest-indexed stations.
  for (int i = 0; i < n; ++i) s(i) = spec_.bikes / n + (i < spec_.bikes % n ? 1 : 0);
  return s;
}

double BikeShare::transition(const Vector& a) {
  std::vector<long> demand(static_cast<std::size_t>(spec_.stations));
  for (int i = 0; i < spec_.stations; ++i) {
    std::poisson_distribution<long> pois(spec_.demand[static_cast<std::size_t>(i)]);
    demand[static_cast<std::size_t>(i)] = spec_.demand[static_cast<std::size_t>(i)] > 0.0 ? pois(rng_) : 0;
  }
  return transition_with_demand(a, demand);
}

double BikeShare::transition_with_demand(const Vector& a, const std::vector<long>& demand) {
  const int n = spec_.stations;
  if (static_cast<int>(demand.size()) != n) throw ShapeError("demand needs one entry per station");
  std::vector<long> counts(static_cast<std::size_t>(n));
  long ridden = 0;
  long unmet = 0;
  for (int i = 0; i < n; ++i) {
    const long alloc = std::lround(a(i));
    const long served = std::min(alloc, demand[static_cast<std::size_t>(i)]);
    counts[static_cast<std::size_t>(i)] = alloc - served;
    ridden += served;
    unmet += demand[static_cast<std::size_t>(i)] - served;
  }
  std::uniform_int_distribution<int> dest(0, n - 1);
  for (long b = 0; b < ridden; ++b) {
    int s = dest(rng_);
    while (counts[static_cast<std::size_t>(s)] >= spec_.capacity) s = (s + 1) % n;
    ++counts[static_cast<std::size_t>(s)];
  }
  for (int i = 0; i < n; ++i) {
    state_(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]);
    state_(n + i) = static_cast<double>(demand[static_cast<std::size_t>(i)]);
  }
  return -static_cast<double>(unmet);
}

std::unique_ptr<Environment> make_env(const EnvSpec& spec) {
  if (spec.name == "pointreach") return std::make_unique<PointReach>(spec);
  if (spec.name == "weightedlimit") return std::make_unique<WeightedLimit>(spec);
  if (spec.name == "bikeshare") return std::make_unique<BikeShare>(spec);
  throw std::invalid_argument("unknown environment '" + spec.name + "' (pointreach, weightedlimit, bikeshare)");
}

std::string trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::string out = "step";
  if (!rows.empty()) {
    for (Eigen::Index i = 0; i < rows.front().state.size(); ++i) out += ",s" + std::to_string(i);
    for (Eigen::Index i = 0; i < rows.front().action.size(); ++i) out += ",a" + std::to_string(i);
  }
  out += ",reward,feasible_flag\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    for (Eigen::Index i = 0; i < r.state.size(); ++i) out += "," + fmt(r.state(i));
    for (Eigen::Index i = 0; i < r.action.size(); ++i) out += "," + fmt(r.action(i));
    out += "," + fmt(r.reward) + "," + (r.feasible ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace flowact
