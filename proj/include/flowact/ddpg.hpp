#pragma once

#include "flowact/env.hpp"
#include "flowact/flow.hpp"
#include "flowact/mlp.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace flowact {

/// Latent action (actor output in [-1, 1]^D) -> raw environment action.
class ActionMap {
 public:
  virtual ~ActionMap() = default;
  virtual int action_dim() const = 0;
  virtual Matrix apply(const Matrix& latent, const Matrix& y) const = 0;
  /// d apply / d latent at one point (D x D).
  virtual Matrix jacobian(const Vector& latent, const Vector& y) const = 0;
  /// apply() recorded on a tape with the map's own parameters held constant.
  virtual Var apply(Tape& tape, Var latent, const Matrix& y) const = 0;
};

/// Frozen flow as the action map.
class FlowActionMap : public ActionMap {
 public:
  explicit FlowActionMap(std::shared_ptr<const FlowModel> flow) : flow_(std::move(flow)) {}
  int action_dim() const override { return flow_->action_dim(); }
  Matrix apply(const Matrix& latent, const Matrix& y) const override { return flow_->backward_map(latent, y); }
  Matrix jacobian(const Vector& latent, const Vector& y) const override { return flow_->input_gradient(latent, y); }
  Var apply(Tape& tape, Var latent, const Matrix& y) const override { return flow_->backward_map(tape, latent, y); }
  const FlowModel& flow() const { return *flow_; }

 private:
  std::shared_ptr<const FlowModel> flow_;
};

/// Affine stretch of [-1, 1]^D onto the action box (ActionScaling::for_box);
/// the DDPG+Projection baseline pairs it with projection of every
/// infeasible action.
class BoxActionMap : public ActionMap {
 public:
  explicit BoxActionMap(ActionScaling scaling) : scaling_(std::move(scaling)) {}
  int action_dim() const override { return static_cast<int>(scaling_.scale.size()); }
  Matrix apply(const Matrix& latent, const Matrix&) const override { return scaling_.to_env(latent); }
  Matrix jacobian(const Vector&, const Vector&) const override { return scaling_.jacobian(); }
  Var apply(Tape& tape, Var latent, const Matrix& y) const override;

 private:
  ActionScaling scaling_;
};

enum class ActorGradientRoute { analytic, autodiff };

struct DdpgConfig {
  std::vector<int> actor_hidden{400, 300};
  std::vector<int> critic_hidden{400, 300};
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double tau = 0.001;
  double noise_std = 0.1;
  int batch_size = 64;
  std::size_t buffer_capacity = 1'000'000;
  int warmup_steps = 1000;
  ActorGradientRoute route = ActorGradientRoute::analytic;
  std::uint64_t seed = 0;
};

struct Transition {
  Vector state;
  Vector cond;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  Vector next_cond;
};

/// Fixed-capacity ring of transitions; the oldest entry is overwritten once full.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }
  /// Uniform draw with replacement.
  std::vector<std::size_t> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> items_;
};

struct ViolationLedger {
  std::size_t steps = 0;
  /// Actions that were infeasible before projection.
  std::size_t violations = 0;
  double cv_sum = 0.0;
  std::vector<double> episode_returns;
  /// Per-step pre-projection infeasibility, in execution order.
  std::vector<bool> step_violations;

  double mean_cv() const { return violations == 0 ? 0.0 : cv_sum / static_cast<double>(violations); }
};

struct Minibatch {
  Matrix states;
  Matrix conds;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Matrix next_conds;
};

Minibatch gather(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx);

struct ActResult {
  Vector latent;
  Vector raw;
  Vector action;
  bool was_projected = false;
  /// CV magnitude of the pre-projection action (0 if it was feasible).
  double cv = 0.0;
};

/// Actor-critic agent whose policy is the actor followed by a fixed action map.
class DdpgAgent {
 public:
  DdpgAgent(int state_dim, int cond_dim, std::shared_ptr<const ActionMap> map, const DdpgConfig& cfg);

  const DdpgConfig& config() const { return cfg_; }
  const ActionMap& action_map() const { return *map_; }
  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& critic_target() { return critic_target_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }

  /// Latent a~ = clip(mu(s) + N(0, noise_std^2), -1, 1), mapped and, if the
  /// result is infeasible for `cs`, projected.
  ActResult act(const Vector& state, const Vector& cond, const ConstraintSet& cs, double noise_std,
                std::mt19937_64& rng) const;
  /// Same pipeline from a given latent.
  ActResult act_latent(const Vector& latent, const Vector& cond, const ConstraintSet& cs) const;

  /// Mean squared TD error before the step; one Adam step on the critic.
  double critic_update(const Minibatch& batch, double gamma);
  double critic_loss(const Minibatch& batch, double gamma);

  /// Gradient of -mean Q(s, map(mu(s))) with respect to the actor
  /// parameters, written into the actor's grad buffers and returned.
  std::vector<Matrix> actor_gradient(const Minibatch& batch, ActorGradientRoute route);
  void actor_update(const Minibatch& batch);
  void update_targets();

  nlohmann::json to_json() const;

 private:
  Matrix critic_input(const Matrix& states, const Matrix& actions) const;

  DdpgConfig cfg_;
  std::shared_ptr<const ActionMap> map_;
  Mlp actor_;
  Mlp critic_;
  Mlp actor_target_;
  Mlp critic_target_;
  AdamState actor_opt_;
  AdamState critic_opt_;
};

struct MetricsRow {
  long step = 0;
  long episode = 0;
  double return_ma100 = 0.0;
  long cum_violations = 0;
  double mean_cv = 0.0;
  double wallclock_s = 0.0;
};

/// Header: step,episode,return_ma100,cum_violations,mean_cv,wallclock_s
std::string metrics_csv(const std::vector<MetricsRow>& rows, bool include_wallclock = true);

struct RunResult {
  ViolationLedger ledger;
  std::vector<MetricsRow> metrics;
  /// Executed actions that failed is_feasible; must stay 0.
  std::size_t infeasible_executed = 0;
};

/// Runs `episodes` episodes of online training. Episode k resets the env
/// with seed + k; exploration, warm-up latents, and minibatches draw from a
/// generator seeded with cfg.seed.
RunResult train_run(Environment& env, DdpgAgent& agent, int episodes, std::uint64_t seed,
                    const std::function<void(const MetricsRow&)>& on_episode = {});

}  // namespace flowact
