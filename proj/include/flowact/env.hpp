#pragma once

#include "flowact/constraints.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowact {

/// Raised by step() for an action outside C(s).
struct InfeasibleActionError : std::invalid_argument {
  InfeasibleActionError(const std::string& what, double cv) : std::invalid_argument(what), cv(cv) {}
  double cv;
};

struct EnvSpec {
  std::string name = "pointreach";
  int horizon = 50;
  double gamma = 0.99;
  std::uint64_t seed = 0;

  // pointreach
  double radius_sq = 0.05;

  // weightedlimit
  int weight_dim = 6;
  double weight_range = 2.0;
  /// "l1" for sum |a_i w_i| <= limit, "hinge" for sum max(a_i w_i, 0) <= limit.
  std::string variant = "l1";
  double limit = 20.0;

  // bikeshare
  int stations = 5;
  int bikes = 150;
  int capacity = 35;
  std::vector<double> demand{40, 35, 30, 25, 20};
};

/// Parses an env section; unknown keys are rejected. Horizon defaults to
/// 50 for pointreach and weightedlimit and 24 for bikeshare.
EnvSpec env_spec_from_json(const nlohmann::json& j);
nlohmann::json env_spec_to_json(const EnvSpec& spec);

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool done = false;
};

/// Episodic MDP with a per-state feasible action set.
///
/// step() refuses actions that fail is_feasible for the current state.
/// Each instance owns its PRNG, reseeded by reset().
class Environment {
 public:
  explicit Environment(EnvSpec spec);
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  int horizon() const { return spec_.horizon; }
  double gamma() const { return spec_.gamma; }
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  /// Dimension of the conditioning vector y that the constraint depends on.
  virtual int cond_dim() const = 0;

  Vector reset(std::uint64_t seed);
  StepResult step(const Vector& action);

  const Vector& state() const { return state_; }
  /// Places the episode at `state` with the clock at `t`.
  void set_state(const Vector& state, int t = 0);
  int time() const { return t_; }

  virtual ConstraintSet constraint_of(const Vector& state) const = 0;
  virtual Vector conditioning(const Vector& state) const = 0;
  /// Constraint set as a function of the conditioning vector.
  virtual ConstraintSet constraint_for_conditioning(const Vector& y) const = 0;

 protected:
  virtual Vector initial_state() = 0;
  /// Applies a feasible action to state_; returns the reward.
  virtual double transition(const Vector& action) = 0;

  EnvSpec spec_;
  std::mt19937_64 rng_;
  Vector state_;
  int t_ = 0;
  bool started_ = false;
};

/// State (px, py, tx, ty): point at the origin chasing a uniform target in
/// [-1, 1]^2. pos <- clip(pos + a, -1, 1), reward -||pos - target||.
class PointReach : public Environment {
 public:
  explicit PointReach(EnvSpec spec);
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  int cond_dim() const override { return 0; }
  ConstraintSet constraint_of(const Vector& state) const override;
  Vector conditioning(const Vector& state) const override;
  ConstraintSet constraint_for_conditioning(const Vector& y) const override;

 protected:
  Vector initial_state() override;
  double transition(const Vector& action) override;
};

/// State is a weight vector w ~ U[-r, r]^D, redrawn every step; the action
/// set is WeightedL1(limit, w) or HingeSum(limit, w) on [-1, 1]^D, and the
/// reward is a.w - 0.1 ||a||^2.
class WeightedLimit : public Environment {
 public:
  explicit WeightedLimit(EnvSpec spec);
  int state_dim() const override { return spec_.weight_dim; }
  int action_dim() const override { return spec_.weight_dim; }
  int cond_dim() const override { return spec_.weight_dim; }
  ConstraintSet constraint_of(const Vector& state) const override;
  Vector conditioning(const Vector& state) const override;
  ConstraintSet constraint_for_conditioning(const Vector& y) const override;

 protected:
  Vector initial_state() override;
  double transition(const Vector& action) override;

 private:
  Vector draw_weights();
};

/// Bike sharing: state is per-station counts followed by last demand. The
/// action reallocates all bikes; Poisson demand is then served up to each
/// station's allocation, ridden bikes land on uniformly chosen stations
/// (overflowing to the next station with room), and the reward is minus
/// the unmet demand.
class BikeShare : public Environment {
 public:
  explicit BikeShare(EnvSpec spec);
  int state_dim() const override { return 2 * spec_.stations; }
  int action_dim() const override { return spec_.stations; }
  int cond_dim() const override { return 0; }
  ConstraintSet constraint_of(const Vector& state) const override;
  Vector conditioning(const Vector& state) const override;
  ConstraintSet constraint_for_conditioning(const Vector& y) const override;

  /// Runs one transition with a given demand vector instead of a Poisson draw.
  double transition_with_demand(const Vector& action, const std::vector<long>& demand);

 protected:
  Vector initial_state() override;
  double transition(const Vector& action) override;
};

std::unique_ptr<Environment> make_env(const EnvSpec& spec);

struct TrajectoryRow {
  int step = 0;
  Vector state;
  Vector action;
  double reward = 0.0;
  bool feasible = true;
};

/// CSV with header step,s0..,a0..,reward,feasible_flag.
std::string trajectory_csv(const std::vector<TrajectoryRow>& rows);

}  // namespace flowact
