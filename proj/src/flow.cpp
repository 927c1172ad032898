#include "flowact/flow.hpp"

#include "flowact/parallel.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace flowact {

ActionScaling ActionScaling::identity(int dim) { return {Vector::Zero(dim), Vector::Ones(dim), Matrix()}; }

ActionScaling ActionScaling::for_box(const ConstraintSet& cs) {
  if (!cs.lower().allFinite() || !cs.upper().allFinite()) throw std::invalid_argument("flow scaling needs a finite box");
  const double slack = cs.integral() ? 0.5 : 0.0;
  return {(0.5 * (cs.lower() + cs.upper())).eval(), ((0.5 * (cs.upper() - cs.lower())).array() + slack).matrix(),
          Matrix()};
}

namespace {

// Vertices of {0 <= a <= c, sum a = m}: every coordinate but one sits at a bound.
std::vector<Vector> allocation_vertices(const AllocEq& a) {
  const int d = a.stations;
  std::vector<Vector> out;
  for (int free = 0; free < d; ++free) {
    for (unsigned long mask = 0; mask < (1UL << (d - 1)); ++mask) {
      Vector v = Vector::Zero(d);
      int bit = 0;
      for (int i = 0; i < d; ++i) {
        if (i == free) continue;
        if (mask >> bit & 1UL) v(i) = a.capacity;
        ++bit;
      }
      const double rest = a.total - v.sum();
      if (rest < 0 || rest > a.capacity) continue;
      v(free) = rest;
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace

ActionScaling ActionScaling::for_set(const ConstraintSet& cs) {
  const auto* alloc = std::get_if<AllocEq>(&cs.family());
  if (alloc == nullptr || alloc->stations > 16) return for_box(cs);
  const int d = alloc->stations;
  Matrix basis = Matrix::Identity(d, d);
  basis.col(0).setOnes();
  Matrix q = Eigen::HouseholderQR<Matrix>(basis).householderQ() * Matrix::Identity(d, d);
  if (q(0, 0) < 0.0) q.col(0) = -q.col(0);
  const Vector center = Vector::Constant(d, static_cast<double>(alloc->total) / d);
  const auto vertices = allocation_vertices(*alloc);
  if (vertices.empty()) throw std::invalid_argument("allocation set is empty");
  Vector scale(d);
  scale(0) = 0.5 / std::sqrt(static_cast<double>(d));
  for (int j = 1; j < d; ++j) {
    double extent = 0.0;
    for (const auto& v : vertices) extent = std::max(extent, std::abs(q.col(j).dot(v - center)));
    scale(j) = extent + 0.5 * q.col(j).cwiseAbs().sum();
  }
  return {center, scale, q};
}

Matrix ActionScaling::to_env(const Matrix& x_flow) const {
  Matrix x = x_flow.array().rowwise() * scale.transpose().array();
  if (rotation.size() > 0) x = x * rotation.transpose();
  return x.rowwise() + offset.transpose();
}

Matrix ActionScaling::to_flow(const Matrix& x_env) const {
  Matrix x = x_env.rowwise() - offset.transpose();
  if (rotation.size() > 0) x = x * rotation;
  return x.array().rowwise() / scale.transpose().array();
}

Var ActionScaling::to_env(Tape& tape, Var x_flow) const {
  Var x = mul_row(x_flow, tape.constant(scale.transpose()));
  if (rotation.size() > 0) x = matmul(x, tape.constant(rotation.transpose()));
  return add_row(x, tape.constant(offset.transpose()));
}

Matrix ActionScaling::jacobian() const {
  if (rotation.size() > 0) return rotation * scale.asDiagonal();
  return scale.asDiagonal();
}

std::string to_string(Dequantization d) {
  switch (d) {
    case Dequantization::none: return "none";
    case Dequantization::cube: return "cube";
    case Dequantization::sum_preserving: return "sum_preserving";
  }
  return "none";
}

Dequantization dequantization_from_string(const std::string& s) {
  if (s == "none") return Dequantization::none;
  if (s == "cube") return Dequantization::cube;
  if (s == "sum_preserving") return Dequantization::sum_preserving;
  throw std::invalid_argument("unknown dequantization '" + s + "'");
}

Dequantization dequantization_for(const ConstraintSet& cs) {
  if (!cs.integral()) return Dequantization::none;
  return std::holds_alternative<AllocEq>(cs.family()) ? Dequantization::sum_preserving : Dequantization::cube;
}

namespace {

void check_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) throw DivergenceError(std::string("non-finite value in ") + where + " (scale blow-up)");
}

Matrix cols_of(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

void set_cols(Matrix& m, const std::vector<int>& cols, const Matrix& v) {
  for (std::size_t k = 0; k < cols.size(); ++k) m.col(cols[k]) = v.col(static_cast<Eigen::Index>(k));
}

Matrix net_input(const Matrix& pass, const Matrix& y) {
  if (y.cols() == 0) return pass;
  Matrix in(pass.rows(), pass.cols() + y.cols());
  in << pass, y;
  return in;
}

Matrix clamp_scale(const Matrix& k) { return k.cwiseMax(-kScaleClamp).cwiseMin(kScaleClamp); }

}  // namespace

FlowModel::FlowModel(int action_dim, int cond_dim, const FlowConfig& cfg, ActionScaling scaling)
    : action_dim_(action_dim), cond_dim_(cond_dim), config_(cfg), prior_{action_dim, cfg.sigma},
      scaling_(std::move(scaling)) {
  if (action_dim < 2) throw std::invalid_argument("coupling flows need action dimension >= 2");
  if (cond_dim < 0) throw std::invalid_argument("conditioning dimension must be >= 0");
  if (cfg.layers < 1) throw std::invalid_argument("flow needs at least one coupling layer");
  if (!(cfg.sigma > 0.0)) throw std::invalid_argument("mollifier sigma must be positive");
  if (scaling_.offset.size() == 0) scaling_ = ActionScaling::identity(action_dim);
  if (scaling_.offset.size() != action_dim || scaling_.scale.size() != action_dim) {
    throw ShapeError("action scaling does not match the action dimension");
  }
  if (!(scaling_.scale.array() > 0.0).all()) throw std::invalid_argument("action scaling must be positive");
  if (scaling_.rotation.size() > 0) {
    if (scaling_.rotation.rows() != action_dim || scaling_.rotation.cols() != action_dim) {
      throw ShapeError("action rotation does not match the action dimension");
    }
    const double err = (scaling_.rotation.transpose() * scaling_.rotation - Matrix::Identity(action_dim, action_dim))
                           .cwiseAbs()
                           .maxCoeff();
    if (err > 1e-9) throw std::invalid_argument("action rotation must be orthonormal");
  }
  const int d = (action_dim + 1) / 2;
  for (int i = 0; i < cfg.layers; ++i) {
    CouplingLayer layer;
    layer.index = i;
    // Cyclic window of d dims starting at i * d; for even D this swaps halves.
    const int start = (i * d) % action_dim;
    for (int c = 0; c < action_dim; ++c) {
      const bool passes = (c - start + action_dim) % action_dim < d;
      (passes ? layer.pass : layer.transform).push_back(c);
    }
    std::vector<int> dims{static_cast<int>(layer.pass.size()) + cond_dim};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(static_cast<int>(layer.transform.size()));
    const std::uint64_t base = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i) * 2;
    layer.scale_net = Mlp(dims, Activation::relu, Activation::identity, base);
    layer.shift_net = Mlp(dims, Activation::relu, Activation::identity, base + 1);
    if (cfg.identity_init) {
      layer.scale_net.zero_output_layer();
      layer.shift_net.zero_output_layer();
    }
    layers_.push_back(std::move(layer));
  }
}

Matrix FlowModel::broadcast_y(const Matrix& y, Eigen::Index rows) const {
  if (y.cols() != cond_dim_ && !(cond_dim_ == 0 && y.size() == 0)) {
    throw ShapeError("conditioning has " + std::to_string(y.cols()) + " columns, flow expects " +
                     std::to_string(cond_dim_));
  }
  if (cond_dim_ == 0) return Matrix(rows, 0);
  if (y.rows() == rows) return y;
  if (y.rows() == 1) return y.replicate(rows, 1);
  throw ShapeError("conditioning rows must be 1 or match the batch");
}

Matrix FlowModel::backward_map(const Matrix& z, const Matrix& y) const {
  if (z.cols() != action_dim_) throw ShapeError("latent has wrong dimension");
  const Matrix yb = broadcast_y(y, z.rows());
  Matrix x = z;
  for (const auto& layer : layers_) {
    const Matrix in = net_input(cols_of(x, layer.pass), yb);
    const Matrix k = clamp_scale(layer.scale_net.evaluate(in));
    const Matrix t = layer.shift_net.evaluate(in);
    const Matrix tr = ((cols_of(x, layer.transform) - t).array() * (-k).array().exp()).matrix();
    check_finite(tr, "backward_map");
    set_cols(x, layer.transform, tr);
  }
  return scaling_.to_env(x);
}

Vector FlowModel::backward_map(const Vector& z, const Vector& y) const {
  return backward_map(Matrix(z.transpose()), Matrix(y.transpose())).row(0).transpose();
}

Var FlowModel::backward_map(Tape& tape, Var z, const Matrix& y) const {
  if (z.cols() != action_dim_) throw ShapeError("latent has wrong dimension");
  const Matrix yb = broadcast_y(y, z.rows());
  Var yv = tape.constant(yb);
  Var x = z;
  for (const auto& layer : layers_) {
    Var pass = select_cols(x, layer.pass);
    Var in = cond_dim_ > 0 ? concat_cols(pass, yv) : pass;
    Var k = clamp(layer.scale_net.forward_const(tape, in), -kScaleClamp, kScaleClamp);
    Var t = layer.shift_net.forward_const(tape, in);
    Var tr = mul(sub(select_cols(x, layer.transform), t), exp(neg(k)));
    const Var parts[] = {pass, tr};
    const std::vector<int> layout[] = {layer.pass, layer.transform};
    x = assemble_cols(parts, layout, action_dim_);
  }
  return scaling_.to_env(tape, x);
}

std::pair<Matrix, Vector> FlowModel::forward_map_logdet(const Matrix& x_env, const Matrix& y) const {
  if (x_env.cols() != action_dim_) throw ShapeError("action has wrong dimension");
  const Matrix yb = broadcast_y(y, x_env.rows());
  Matrix z = scaling_.to_flow(x_env);
  Vector logdet = Vector::Constant(z.rows(), -scaling_.log_scale_sum());
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    const Matrix in = net_input(cols_of(z, it->pass), yb);
    const Matrix k = clamp_scale(it->scale_net.evaluate(in));
    const Matrix t = it->shift_net.evaluate(in);
    const Matrix tr = (cols_of(z, it->transform).array() * k.array().exp()).matrix() + t;
    check_finite(tr, "forward_map");
    set_cols(z, it->transform, tr);
    logdet += k.rowwise().sum();
  }
  return {z, logdet};
}

Vector FlowModel::log_prob(const Matrix& x, const Matrix& y) const {
  const auto [z, logdet] = forward_map_logdet(x, y);
  return prior_log_density(z, prior_.sigma) + logdet;
}

Var FlowModel::nll(Tape& tape, const Matrix& x_env, const Matrix& y) {
  if (x_env.cols() != action_dim_) throw ShapeError("action has wrong dimension");
  const Matrix yb = broadcast_y(y, x_env.rows());
  Var yv = tape.constant(yb);
  Var z = tape.constant(scaling_.to_flow(x_env));
  Var logdet{};
  bool first = true;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Var pass = select_cols(z, it->pass);
    Var in = cond_dim_ > 0 ? concat_cols(pass, yv) : pass;
    Var k = clamp(it->scale_net.forward(tape, in), -kScaleClamp, kScaleClamp);
    Var t = it->shift_net.forward(tape, in);
    Var tr = add(mul(select_cols(z, it->transform), exp(k)), t);
    Var ld = row_sum(k);
    logdet = first ? ld : add(logdet, ld);
    first = false;
    const Var parts[] = {pass, tr};
    const std::vector<int> layout[] = {it->pass, it->transform};
    z = assemble_cols(parts, layout, action_dim_);
  }
  Var logp = add(row_sum(log_mollified_uniform(z, prior_.sigma)), logdet);
  Matrix offset(1, 1);
  offset(0, 0) = scaling_.log_scale_sum();
  return add(neg(mean(logp)), tape.constant(offset));
}

Matrix FlowModel::input_gradient(const Vector& z0, const Vector& y) const {
  if (z0.size() != action_dim_) throw ShapeError("latent has wrong dimension");
  if (y.size() != cond_dim_) throw ShapeError("conditioning has wrong dimension");
  RowVector z = z0.transpose();
  Matrix jac = Matrix::Identity(action_dim_, action_dim_);
  for (const auto& layer : layers_) {
    const auto np = static_cast<Eigen::Index>(layer.pass.size());
    const auto nt = static_cast<Eigen::Index>(layer.transform.size());
    RowVector in(np + cond_dim_);
    for (Eigen::Index i = 0; i < np; ++i) in(i) = z(layer.pass[static_cast<std::size_t>(i)]);
    if (cond_dim_ > 0) in.tail(cond_dim_) = y.transpose();
    const RowVector k_raw = layer.scale_net.evaluate(in).row(0);
    const RowVector t = layer.shift_net.evaluate(in).row(0);
    Matrix jk = layer.scale_net.input_jacobian(in).leftCols(np);
    const Matrix jt = layer.shift_net.input_jacobian(in).leftCols(np);
    Matrix step = Matrix::Identity(action_dim_, action_dim_);
    for (Eigen::Index j = 0; j < nt; ++j) {
      const double kj = k_raw(j);
      if (kj < -kScaleClamp || kj > kScaleClamp) jk.row(j).setZero();
      const double e = std::exp(-std::clamp(kj, -kScaleClamp, kScaleClamp));
      const int row = layer.transform[static_cast<std::size_t>(j)];
      const double out = (z(row) - t(j)) * e;
      step(row, row) = e;
      for (Eigen::Index i = 0; i < np; ++i) {
        step(row, layer.pass[static_cast<std::size_t>(i)]) = -e * jt(j, i) - out * jk(j, i);
      }
    }
    jac = step * jac;
    for (Eigen::Index j = 0; j < nt; ++j) {
      const int row = layer.transform[static_cast<std::size_t>(j)];
      z(row) = (z(row) - t(j)) * std::exp(-std::clamp(k_raw(j), -kScaleClamp, kScaleClamp));
    }
  }
  return scaling_.jacobian() * jac;
}

std::vector<Tensor*> FlowModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    for (Tensor* p : layer.scale_net.parameters()) out.push_back(p);
    for (Tensor* p : layer.shift_net.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> FlowModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    for (const Tensor* p : layer.scale_net.parameters()) out.push_back(p);
    for (const Tensor* p : layer.shift_net.parameters()) out.push_back(p);
  }
  return out;
}

double dataset_nll(const FlowModel& fm, const SampleDataset& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  return -fm.log_prob(data.actions(), data.conditioning()).mean();
}

FlowTrainingLog train(FlowModel& fm, const SampleDataset& data, const FlowTrainConfig& cfg,
                      const std::function<void(int, double)>& on_epoch) {
  if (data.empty()) throw std::invalid_argument("cannot train a flow on an empty dataset");
  if (data.x_dim() != fm.action_dim()) throw ShapeError("dataset action dimension does not match the flow");
  if (data.y_dim() != fm.cond_dim()) throw ShapeError("dataset conditioning dimension does not match the flow");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");

  FlowTrainingLog log;
  try {
    log.initial_nll = dataset_nll(fm, data);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " before epoch 0");
  }
  if (!std::isfinite(log.initial_nll)) throw DivergenceError("flow NLL is not finite before epoch 0");
  if (cfg.epochs == 0) return log;

  const Matrix xs = data.actions();
  const Matrix ys = data.conditioning();
  const auto n = static_cast<std::size_t>(xs.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  auto params = fm.parameters();
  AdamState adam(cfg.learning_rate);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const auto rows = static_cast<Eigen::Index>(end - start);
      Matrix xb(rows, xs.cols());
      Matrix yb(rows, ys.cols());
      for (Eigen::Index r = 0; r < rows; ++r) {
        xb.row(r) = xs.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
        if (ys.cols() > 0) yb.row(r) = ys.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
      }
      if (cfg.dequantize != Dequantization::none) {
        for (Eigen::Index r = 0; r < rows; ++r) {
          RowVector u(xb.cols());
          for (Eigen::Index c = 0; c < u.size(); ++c) u(c) = jitter(rng);
          if (cfg.dequantize == Dequantization::sum_preserving) {
            u.array() += jitter(rng) / static_cast<double>(u.size()) - u.mean();
          }
          xb.row(r) += u;
        }
      }
      Tape tape;
      Var loss = fm.nll(tape, xb, yb);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw DivergenceError("flow NLL is not finite at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches) + " (learning rate " + std::to_string(cfg.learning_rate) + ")");
      }
      zero_grads(params);
      tape.backward(loss);
      try {
        adam_step(params, adam);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches));
      }
      total += value;
      ++batches;
    }
    log.epoch_nll.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, log.epoch_nll.back());
  }
  return log;
}

namespace {

Matrix uniform_latents(int dim, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = unit(rng);
  return z;
}

struct ChunkResult {
  std::size_t valid = 0;
  std::vector<double> distances;
  double cv_sum = 0.0;
};

void score_outputs(const ConstraintSet& cs, const Matrix& x, FlowEvaluation& ev) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t chunks = static_cast<std::size_t>(worker_count());
  std::vector<ChunkResult> parts(chunks);
  const std::size_t step = (n + chunks - 1) / std::max<std::size_t>(chunks, 1);
  parallel_for(chunks, [&](std::size_t b, std::size_t e) {
    for (std::size_t c = b; c < e; ++c) {
      auto& part = parts[c];
      for (std::size_t i = c * step; i < std::min(n, (c + 1) * step); ++i) {
        const Vector raw = x.row(static_cast<Eigen::Index>(i)).transpose();
        const Vector a = round_to_lattice(cs, raw);
        if (is_feasible(cs, a)) {
          ++part.valid;
          continue;
        }
        part.cv_sum += violation_magnitude(cs, a);
        part.distances.push_back((project(cs, raw) - raw).norm());
      }
    }
  });
  double cv_sum = ev.mean_cv_of_invalid * static_cast<double>(ev.invalid_distances.size());
  for (auto& part : parts) {
    ev.valid += part.valid;
    cv_sum += part.cv_sum;
    ev.invalid_distances.insert(ev.invalid_distances.end(), part.distances.begin(), part.distances.end());
  }
  ev.samples += n;
  ev.mean_cv_of_invalid = ev.invalid_distances.empty() ? 0.0 : cv_sum / static_cast<double>(ev.invalid_distances.size());
}

}  // namespace

FlowEvaluation evaluate_accuracy(const FlowModel& fm, const ConstraintSet& cs, const Vector& y, std::size_t n,
                                 std::uint64_t seed) {
  if (cs.dim() != fm.action_dim()) throw ShapeError("constraint dimension does not match the flow");
  FlowEvaluation ev;
  const Matrix x = fm.backward_map(uniform_latents(fm.action_dim(), n, seed), Matrix(y.transpose()));
  score_outputs(cs, x, ev);
  return ev;
}

FlowEvaluation evaluate_accuracy(const FlowModel& fm, const std::function<ConstraintSet(const Vector&)>& constraint_for,
                                 const Matrix& ys, std::size_t n_per_state, std::uint64_t seed) {
  FlowEvaluation ev;
  for (Eigen::Index s = 0; s < ys.rows(); ++s) {
    const Vector y = ys.row(s).transpose();
    const ConstraintSet cs = constraint_for(y);
    if (cs.dim() != fm.action_dim()) throw ShapeError("constraint dimension does not match the flow");
    const Matrix z = uniform_latents(fm.action_dim(), n_per_state, seed + static_cast<std::uint64_t>(s) * 0x9E3779B97F4A7C15ULL);
    score_outputs(cs, fm.backward_map(z, Matrix(y.transpose())), ev);
  }
  return ev;
}

double accuracy(const FlowModel& fm, const ConstraintSet& cs, const Vector& y, std::size_t n, std::uint64_t seed) {
  return evaluate_accuracy(fm, cs, y, n, seed).accuracy();
}

double recall(const FlowModel& fm, const SampleDataset& reference) {
  if (reference.empty()) throw std::invalid_argument("recall needs a nonempty reference set");
  const auto [z, logdet] = fm.forward_map_logdet(reference.actions(), reference.conditioning());
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if ((z.row(i).array().abs() <= 1.0).all()) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(z.rows());
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

double FlowEvaluation::fraction_within(double limit) const {
  if (invalid_distances.empty()) return 1.0;
  const auto n = std::count_if(invalid_distances.begin(), invalid_distances.end(),
                               [limit](double d) { return d <= limit + 1e-9; });
  return static_cast<double>(n) / static_cast<double>(invalid_distances.size());
}

double Histogram::fraction_below(double edge) const {
  const std::size_t t = total();
  if (t == 0) return 1.0;
  std::size_t acc = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (static_cast<double>(i + 1) * bin_width > edge + 1e-12) break;
    acc += counts[i];
  }
  return static_cast<double>(acc) / static_cast<double>(t);
}

Histogram make_histogram(const std::vector<double>& values, double bin_width, int bins) {
  if (!(bin_width > 0.0) || bins < 1) throw std::invalid_argument("histogram needs positive bin width and count");
  Histogram h{bin_width, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  for (double v : values) {
    const auto i = static_cast<std::size_t>(std::min<double>(std::floor(v / bin_width), bins - 1));
    ++h.counts[i];
  }
  return h;
}

nlohmann::json flow_to_json(const FlowModel& fm) {
  nlohmann::json masks = nlohmann::json::array();
  for (int i = 0; i < fm.num_layers(); ++i) masks.push_back(fm.layer(i).pass);
  const auto& s = fm.scaling();
  nlohmann::json rotation_rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < s.rotation.rows(); ++r) {
    const Vector row = s.rotation.row(r).transpose();
    rotation_rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  nlohmann::json manifest = {
      {"action_dim", fm.action_dim()},
      {"cond_dim", fm.cond_dim()},
      {"layers", fm.num_layers()},
      {"pass_dims", masks},
      {"sigma", fm.prior().sigma},
      {"hidden", fm.config().hidden},
      {"action_offset", std::vector<double>(s.offset.data(), s.offset.data() + s.offset.size())},
      {"action_scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())},
      {"action_rotation", rotation_rows},
  };
  const auto params = fm.parameters();
  return {{"manifest", manifest}, {"parameters", tensors_to_json(params)}};
}

FlowModel flow_from_json(const nlohmann::json& j) {
  const auto& m = j.at("manifest");
  FlowConfig cfg;
  cfg.layers = m.at("layers").get<int>();
  cfg.hidden = m.at("hidden").get<std::vector<int>>();
  cfg.sigma = m.at("sigma").get<double>();
  const int dim = m.at("action_dim").get<int>();
  const auto offset = m.at("action_offset").get<std::vector<double>>();
  const auto scale = m.at("action_scale").get<std::vector<double>>();
  if (static_cast<int>(offset.size()) != dim || static_cast<int>(scale.size()) != dim) {
    throw ShapeError("checkpoint scaling does not match its action dimension");
  }
  const auto rows = m.value("action_rotation", std::vector<std::vector<double>>{});
  Matrix rotation;
  if (!rows.empty()) {
    if (static_cast<int>(rows.size()) != dim) throw ShapeError("checkpoint rotation does not match its action dimension");
    rotation.resize(dim, dim);
    for (int r = 0; r < dim; ++r) {
      if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != dim) {
        throw ShapeError("checkpoint rotation does not match its action dimension");
      }
      for (int c = 0; c < dim; ++c) rotation(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }
  ActionScaling scaling{Eigen::Map<const Vector>(offset.data(), dim), Eigen::Map<const Vector>(scale.data(), dim),
                        rotation};
  FlowModel fm(dim, m.at("cond_dim").get<int>(), cfg, scaling);
  const auto masks = m.at("pass_dims").get<std::vector<std::vector<int>>>();
  for (int i = 0; i < fm.num_layers(); ++i) {
    if (masks.at(static_cast<std::size_t>(i)) != fm.layer(i).pass) throw ShapeError("checkpoint mask schedule differs");
  }
  auto params = fm.parameters();
  tensors_from_json(j.at("parameters"), params);
  return fm;
}

void save_flow(const FlowModel& fm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write flow checkpoint " + path);
  out << flow_to_json(fm).dump();
}

FlowModel load_flow(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("flow checkpoint not found: " + path);
  return flow_from_json(nlohmann::json::parse(in));
}

}  // namespace flowact
