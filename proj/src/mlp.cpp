#include "flowact/mlp.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace flowact {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

namespace {

Var apply(Activation a, Var x) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::identity: break;
  }
  return x;
}

void apply_inplace(Activation a, Matrix& x) {
  switch (a) {
    case Activation::relu: x = x.cwiseMax(0.0); break;
    case Activation::tanh: x = x.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

// Derivative given the pre-activation.
Vector derivative(Activation a, const Vector& pre) {
  switch (a) {
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::identity: break;
  }
  return Vector::Ones(pre.size());
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden, Activation output, std::uint64_t seed)
    : dims_(std::move(layer_dims)), hidden_(hidden), output_(output) {
  if (dims_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (int d : dims_) {
    if (d < 0) throw std::invalid_argument("Mlp layer width must be nonnegative");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int fan_in = dims_[l];
    const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 1.0;
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(fan_in, dims_[l + 1]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    Matrix b(1, dims_[l + 1]);
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = u(rng);
    weights_.emplace_back(std::move(w));
    biases_.emplace_back(std::move(b));
  }
}

void Mlp::check_input(Eigen::Index cols) const {
  if (dims_.empty()) throw ShapeError("Mlp is empty");
  if (cols != dims_.front()) {
    throw ShapeError("Mlp input width " + std::to_string(cols) + " != expected " + std::to_string(dims_.front()));
  }
}

Var Mlp::forward(Tape& tape, Var input, bool track_params) {
  if (!track_params) return forward_const(tape, input);
  check_input(input.cols());
  Var h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_row(matmul(h, tape.parameter(weights_[l])), tape.parameter(biases_[l]));
    h = apply(l + 1 == weights_.size() ? output_ : hidden_, h);
  }
  return h;
}

Var Mlp::forward_const(Tape& tape, Var input) const {
  check_input(input.cols());
  Var h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_row(matmul(h, tape.constant(weights_[l].value)), tape.constant(biases_[l].value));
    h = apply(l + 1 == weights_.size() ? output_ : hidden_, h);
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& input) const {
  check_input(input.cols());
  Matrix h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix next;
    next.noalias() = h * weights_[l].value;
    next = next.rowwise() + biases_[l].value.row(0);
    apply_inplace(l + 1 == weights_.size() ? output_ : hidden_, next);
    h = std::move(next);
  }
  return h;
}

Matrix Mlp::input_jacobian(const RowVector& input) const {
  check_input(input.cols());
  // Forward-mode: carry J = d h_l / d input alongside h_l.
  RowVector h = input;
  Matrix jac = Matrix::Identity(input.cols(), input.cols());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Matrix& w = weights_[l].value;
    RowVector pre = h * w + biases_[l].value.row(0);
    const Activation a = l + 1 == weights_.size() ? output_ : hidden_;
    Matrix next;
    next.noalias() = w.transpose() * jac;
    jac = derivative(a, pre.transpose()).asDiagonal() * next;
    Matrix hm = pre;
    apply_inplace(a, hm);
    h = hm.row(0);
  }
  return jac;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

void Mlp::zero_output_layer() {
  weights_.back().value.setZero();
  biases_.back().value.setZero();
}

void Mlp::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  auto tp = target.parameters();
  auto op = online.parameters();
  if (tp.size() != op.size()) throw ShapeError("soft_update: parameter lists differ");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]->rows() != op[i]->rows() || tp[i]->cols() != op[i]->cols()) {
      throw ShapeError("soft_update: parameter shapes differ");
    }
  }
  for (std::size_t i = 0; i < tp.size(); ++i) {
    tp[i]->value = tau * op[i]->value + (1.0 - tau) * tp[i]->value;
  }
}

std::uint64_t parameter_checksum(std::span<const Tensor* const> params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const auto n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

nlohmann::json tensors_to_json(std::span<const Tensor* const> params) {
  nlohmann::json out = nlohmann::json::array();
  for (const Tensor* p : params) {
    nlohmann::json data = nlohmann::json::array();
    for (Eigen::Index i = 0; i < p->rows(); ++i)
      for (Eigen::Index j = 0; j < p->cols(); ++j) data.push_back(p->value(i, j));
    out.push_back({{"shape", {p->rows(), p->cols()}}, {"data", std::move(data)}});
  }
  return out;
}

void tensors_from_json(const nlohmann::json& blob, std::span<Tensor* const> params) {
  if (!blob.is_array() || blob.size() != params.size()) {
    throw ShapeError("parameter blob has " + std::to_string(blob.is_array() ? blob.size() : 0) +
                     " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& entry = blob[k];
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    if (rows != params[k]->rows() || cols != params[k]->cols()) {
      throw ShapeError("tensor " + std::to_string(k) + " shape mismatch in parameter blob");
    }
    const auto& data = entry.at("data");
    if (data.size() != static_cast<std::size_t>(rows * cols)) throw ShapeError("tensor data length mismatch");
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) params[k]->value(i, j) = data[n++].get<double>();
    params[k]->zero_grad();
  }
}

nlohmann::json mlp_to_json(const Mlp& net) {
  return {{"layer_dims", net.layer_dims()},
          {"hidden_activation", to_string(net.hidden_activation())},
          {"output_activation", to_string(net.output_activation())},
          {"parameters", tensors_to_json(net.parameters())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net(j.at("layer_dims").get<std::vector<int>>(),
          activation_from_string(j.at("hidden_activation").get<std::string>()),
          activation_from_string(j.at("output_activation").get<std::string>()), 0);
  tensors_from_json(j.at("parameters"), net.parameters());
  return net;
}

}  // namespace flowact
