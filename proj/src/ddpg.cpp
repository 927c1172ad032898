#include "flowact/ddpg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>

namespace flowact {

Var BoxActionMap::apply(Tape& tape, Var latent, const Matrix&) const { return scaling_.to_env(tape, latent); }

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

Minibatch gather(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const Transition& first = buffer.at(idx.front());
  Minibatch b{Matrix(n, first.state.size()),      Matrix(n, first.cond.size()), Matrix(n, first.action.size()),
              Vector(n),                          Matrix(n, first.state.size()), Matrix(n, first.cond.size())};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = buffer.at(idx[static_cast<std::size_t>(i)]);
    b.states.row(i) = t.state.transpose();
    b.conds.row(i) = t.cond.transpose();
    b.actions.row(i) = t.action.transpose();
    b.rewards(i) = t.reward;
    b.next_states.row(i) = t.next_state.transpose();
    b.next_conds.row(i) = t.next_cond.transpose();
  }
  return b;
}

namespace {

std::vector<int> net_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

DdpgAgent::DdpgAgent(int state_dim, int cond_dim, std::shared_ptr<const ActionMap> map, const DdpgConfig& cfg)
    : cfg_(cfg), map_(std::move(map)), actor_opt_(cfg.actor_lr), critic_opt_(cfg.critic_lr) {
  if (!map_) throw std::invalid_argument("agent needs an action map");
  if (state_dim < 1 || cond_dim < 0) throw std::invalid_argument("bad state/conditioning dimension");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(cfg.tau >= 0.0 && cfg.tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
  const int d = map_->action_dim();
  actor_ = Mlp(net_dims(state_dim, cfg.actor_hidden, d), Activation::relu, Activation::tanh, cfg.seed * 4 + 1);
  critic_ = Mlp(net_dims(state_dim + d, cfg.critic_hidden, 1), Activation::relu, Activation::identity, cfg.seed * 4 + 2);
  actor_target_ = actor_;
  critic_target_ = critic_;
}

Matrix DdpgAgent::critic_input(const Matrix& states, const Matrix& actions) const {
  Matrix in(states.rows(), states.cols() + actions.cols());
  in << states, actions;
  return in;
}

ActResult DdpgAgent::act_latent(const Vector& latent, const Vector& cond, const ConstraintSet& cs) const {
  ActResult r;
  r.latent = latent;
  r.raw = map_->apply(Matrix(latent.transpose()), Matrix(cond.transpose())).row(0).transpose();
  const Vector executed = round_to_lattice(cs, r.raw);
  if (is_feasible(cs, executed)) {
    r.action = executed;
    return r;
  }
  r.was_projected = true;
  r.cv = violation_magnitude(cs, executed);
  r.action = project(cs, r.raw);
  return r;
}

ActResult DdpgAgent::act(const Vector& state, const Vector& cond, const ConstraintSet& cs, double noise_std,
                         std::mt19937_64& rng) const {
  Vector latent = actor_.evaluate(Matrix(state.transpose())).row(0).transpose();
  if (noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_std);
    for (Eigen::Index i = 0; i < latent.size(); ++i) latent(i) += noise(rng);
  }
  return act_latent(latent.cwiseMax(-1.0).cwiseMin(1.0), cond, cs);
}

double DdpgAgent::critic_loss(const Minibatch& b, double gamma) {
  const Matrix next_latent = actor_target_.evaluate(b.next_states);
  const Matrix next_actions = map_->apply(next_latent, b.next_conds);
  const Matrix next_q = critic_target_.evaluate(critic_input(b.next_states, next_actions));
  const Vector target = b.rewards + gamma * next_q.col(0);
  const Matrix q = critic_.evaluate(critic_input(b.states, b.actions));
  return (q.col(0) - target).squaredNorm() / static_cast<double>(b.rewards.size());
}

double DdpgAgent::critic_update(const Minibatch& b, double gamma) {
  const Matrix next_latent = actor_target_.evaluate(b.next_states);
  const Matrix next_actions = map_->apply(next_latent, b.next_conds);
  const Matrix next_q = critic_target_.evaluate(critic_input(b.next_states, next_actions));
  const Matrix target = (b.rewards + gamma * next_q.col(0)).eval();

  auto params = critic_.parameters();
  zero_grads(params);
  Tape tape;
  Var q = critic_.forward(tape, tape.constant(critic_input(b.states, b.actions)));
  Var loss = mean(square(sub(q, tape.constant(target))));
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw DivergenceError("critic loss is not finite");
  tape.backward(loss);
  adam_step(params, critic_opt_);
  return value;
}

std::vector<Matrix> DdpgAgent::actor_gradient(const Minibatch& b, ActorGradientRoute route) {
  auto params = actor_.parameters();
  zero_grads(params);
  const auto n = b.states.rows();
  Tape tape;
  Var latent = actor_.forward(tape, tape.constant(b.states));
  if (route == ActorGradientRoute::autodiff) {
    Var actions = map_->apply(tape, latent, b.conds);
    Var q = critic_.forward_const(tape, concat_cols(tape.constant(b.states), actions));
    tape.backward(neg(mean(q)));
  } else {
    // dJ/dlatent_i = J_map(latent_i)^T dQ/da_i, with dQ/da from a separate critic tape.
    const Matrix& lat = latent.value();
    const Matrix actions = map_->apply(lat, b.conds);
    Tape critic_tape;
    Var a = critic_tape.variable(actions);
    Var q = critic_.forward_const(critic_tape, concat_cols(critic_tape.constant(b.states), a));
    critic_tape.backward(neg(mean(q)));
    const Matrix dq = critic_tape.grad(a);
    Matrix seed(n, lat.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector y = b.conds.cols() > 0 ? Vector(b.conds.row(i).transpose()) : Vector(0);
      seed.row(i) = (map_->jacobian(lat.row(i).transpose(), y).transpose() * dq.row(i).transpose()).transpose();
    }
    tape.backward(latent, seed);
  }
  std::vector<Matrix> grads;
  for (const Tensor* p : params) grads.push_back(p->grad);
  return grads;
}

void DdpgAgent::actor_update(const Minibatch& b) {
  actor_gradient(b, cfg_.route);
  auto params = actor_.parameters();
  adam_step(params, actor_opt_);
}

void DdpgAgent::update_targets() {
  soft_update(actor_target_, actor_, cfg_.tau);
  soft_update(critic_target_, critic_, cfg_.tau);
}

nlohmann::json DdpgAgent::to_json() const {
  return {{"actor", mlp_to_json(actor_)}, {"critic", mlp_to_json(critic_)}};
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, bool include_wallclock) {
  std::string out = include_wallclock ? "step,episode,return_ma100,cum_violations,mean_cv,wallclock_s\n"
                                      : "step,episode,return_ma100,cum_violations,mean_cv\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%ld,%.17g,%ld,%.17g", r.step, r.episode, r.return_ma100, r.cum_violations,
                  r.mean_cv);
    out += buf;
    if (include_wallclock) {
      std::snprintf(buf, sizeof(buf), ",%.3f", r.wallclock_s);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

RunResult train_run(Environment& env, DdpgAgent& agent, int episodes, std::uint64_t seed,
                    const std::function<void(const MetricsRow&)>& on_episode) {
  if (episodes < 0) throw std::invalid_argument("episodes must be >= 0");
  if (env.action_dim() != agent.action_map().action_dim()) {
    throw ShapeError("environment action dimension does not match the action map");
  }
  const auto& cfg = agent.config();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  ReplayBuffer buffer(cfg.buffer_capacity);
  RunResult result;
  auto& ledger = result.ledger;
  std::deque<double> window;
  const auto start = std::chrono::steady_clock::now();
  long step = 0;

  for (int ep = 0; ep < episodes; ++ep) {
    Vector s = env.reset(seed + static_cast<std::uint64_t>(ep));
    double ret = 0.0;
    bool done = false;
    while (!done) {
      const Vector y = env.conditioning(s);
      const ConstraintSet cs = env.constraint_of(s);
      ActResult act;
      if (step < cfg.warmup_steps) {
        Vector latent(env.action_dim());
        for (Eigen::Index i = 0; i < latent.size(); ++i) latent(i) = unit(rng);
        act = agent.act_latent(latent, y, cs);
      } else {
        act = agent.act(s, y, cs, cfg.noise_std, rng);
      }
      ++ledger.steps;
      ledger.step_violations.push_back(act.was_projected);
      if (act.was_projected) {
        ++ledger.violations;
        ledger.cv_sum += act.cv;
      }
      if (!is_feasible(cs, act.action)) ++result.infeasible_executed;
      StepResult sr;
      try {
        sr = env.step(act.action);
      } catch (const std::exception& e) {
        throw std::runtime_error("episode " + std::to_string(ep) + ", step " + std::to_string(env.time()) + ": " +
                                 e.what());
      }
      ret += sr.reward;
      done = sr.done;
      buffer.push({s, y, act.action, sr.reward, sr.next_state, env.conditioning(sr.next_state)});
      s = sr.next_state;
      ++step;
      if (step > cfg.warmup_steps && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
        const Minibatch b = gather(buffer, buffer.sample(static_cast<std::size_t>(cfg.batch_size), rng));
        agent.critic_update(b, env.gamma());
        agent.actor_update(b);
        agent.update_targets();
      }
    }
    ledger.episode_returns.push_back(ret);
    window.push_back(ret);
    if (window.size() > 100) {
      window.pop_front();
    }
    double ma = 0.0;
    for (double v : window) ma += v;
    MetricsRow row{step,
                   ep,
                   ma / static_cast<double>(window.size()),
                   static_cast<long>(ledger.violations),
                   ledger.mean_cv(),
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.metrics.push_back(row);
    if (on_episode) on_episode(row);
  }
  return result;
}

}  // namespace flowact
