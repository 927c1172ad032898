#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowact {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a loss or gradient stops being finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A persistent dense array with an attached gradient buffer.
///
/// Models own their parameters as Tensors; the tape reads `value` and
/// accumulates into `grad` during backward. Rows are the leading
/// dimension; a 0-dimensional scalar is stored as 1x1.
struct Tensor {
  Matrix value;
  Matrix grad;

  Tensor() = default;
  explicit Tensor(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over dense matrices.
///
/// Every op appends a node holding its value and a closure that pushes the
/// node's adjoint to its inputs. Nodes that depend on no differentiable leaf
/// skip the closure entirely, so constant subgraphs cost a forward pass only.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf whose gradient stays on the tape; read it back with grad().
  Var variable(Matrix value);
  /// Leaf bound to a Tensor: backward accumulates into `t.grad`.
  Var parameter(Tensor& t);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Adjoint of `v` after backward; zero-filled if nothing reached it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Reverse sweep from a 1x1 loss. Throws ShapeError on anything larger.
  void backward(Var loss);
  /// Reverse sweep seeded with an explicit adjoint for `output`.
  void backward(Var output, const Matrix& seed);

  std::size_t size() const { return nodes_.size(); }

  using BackwardFn = std::function<void(Tape&, std::size_t)>;
  Var record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn);
  /// Accumulate `g` into the adjoint of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& g);
  const Matrix& adjoint(std::size_t id) const { return nodes_[id].grad; }
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* param = nullptr;
    bool requires_grad = false;
  };

  void sweep(std::size_t from);

  std::vector<Node> nodes_;
};

// Differentiable ops. Shapes follow the (batch x features) convention; the
// only broadcast is a 1 x m row applied to every row of an n x m matrix.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var x, Var row);
Var mul_row(Var x, Var row);
Var scale(Var x, double c);
Var neg(Var x);
Var exp(Var x);
Var tanh(Var x);
Var relu(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);
Var sum(Var x);
Var mean(Var x);
Var row_sum(Var x);
Var select_cols(Var x, std::span<const int> cols);
Var concat_cols(Var a, Var b);
/// Scatters the columns of `parts[k]` to positions `cols[k]` of an n x width result.
Var assemble_cols(std::span<const Var> parts, std::span<const std::vector<int>> cols, int width);
/// Elementwise log of the mollified uniform density on [-1, 1].
Var log_mollified_uniform(Var z, double sigma);

/// Adam optimizer state; one moment pair per parameter tensor.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  AdamState() = default;
  explicit AdamState(double lr) : learning_rate(lr) {}
};

/// One Adam step (descent on the stored grads). Throws DivergenceError on a
/// non-finite gradient, leaving parameters and state untouched.
void adam_step(std::span<Tensor* const> params, AdamState& state);

void zero_grads(std::span<Tensor* const> params);

}  // namespace flowact
