#include "flowact/autodiff.hpp"

#include "flowact/mollified_uniform.hpp"

#include <cmath>
#include <string>

namespace flowact {

const Matrix& Var::value() const { return tape->value(*this); }

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("vars belong to different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& t) {
  nodes_.push_back(Node{t.value, {}, {}, {}, &t, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
  Node n{std::move(value), {}, std::move(inputs), {}, nullptr, needs};
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + std::to_string(loss.rows()) + "x" +
                     std::to_string(loss.cols()));
  }
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var output, const Matrix& seed) {
  if (output.tape != this) throw std::invalid_argument("var is not on this tape");
  const Node& out = nodes_[output.id];
  if (seed.rows() != out.value.rows() || seed.cols() != out.value.cols()) {
    throw ShapeError("backward seed shape does not match output");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(output.id, seed);
  sweep(output.id);
}

void Tape::sweep(std::size_t from) {
  for (std::size_t k = from + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, k);
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->grad = Matrix::Zero(n.grad.rows(), n.grad.cols());
      }
      n.param->grad += n.grad;
    }
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Matrix v;
  v.noalias() = a.value() * b.value();
  return a.tape->record(std::move(v), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const auto ia = t.input(self, 0);
    const auto ib = t.input(self, 1);
    Matrix ga;
    ga.noalias() = g * t.value_of(ib).transpose();
    t.accumulate(ia, ga);
    Matrix gb;
    gb.noalias() = t.value_of(ia).transpose() * g;
    t.accumulate(ib, gb);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a.id, b.id}, [](Tape& t, std::size_t self) {
    t.accumulate(t.input(self, 0), t.adjoint(self));
    t.accumulate(t.input(self, 1), t.adjoint(self));
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a.id, b.id}, [](Tape& t, std::size_t self) {
    t.accumulate(t.input(self, 0), t.adjoint(self));
    t.accumulate(t.input(self, 1), -t.adjoint(self));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  return a.tape->record(a.value().cwiseProduct(b.value()), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const auto ia = t.input(self, 0);
    const auto ib = t.input(self, 1);
    t.accumulate(ia, g.cwiseProduct(t.value_of(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value_of(ia)));
  });
}

Var add_row(Var x, Var row) {
  require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw ShapeError("add_row: row must be 1 x cols");
  Matrix v = x.value().rowwise() + row.value().row(0);
  return x.tape->record(std::move(v), {x.id, row.id}, [](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(t.input(self, 0), g);
    t.accumulate(t.input(self, 1), g.colwise().sum());
  });
}

Var mul_row(Var x, Var row) {
  require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw ShapeError("mul_row: row must be 1 x cols");
  Matrix v = x.value().array().rowwise() * row.value().row(0).array();
  return x.tape->record(std::move(v), {x.id, row.id}, [](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const auto ix = t.input(self, 0);
    const auto ir = t.input(self, 1);
    Matrix gx = g.array().rowwise() * t.value_of(ir).row(0).array();
    t.accumulate(ix, gx);
    t.accumulate(ir, g.cwiseProduct(t.value_of(ix)).colwise().sum());
  });
}

Var scale(Var x, double c) {
  return x.tape->record(x.value() * c, {x.id}, [c](Tape& t, std::size_t self) {
    t.accumulate(t.input(self, 0), t.adjoint(self) * c);
  });
}

Var neg(Var x) { return scale(x, -1.0); }

Var exp(Var x) {
  return x.tape->record(x.value().array().exp().matrix(), {x.id}, [](Tape& t, std::size_t self) {
    t.accumulate(t.input(self, 0), t.adjoint(self).cwiseProduct(t.value_of(self)));
  });
}

Var tanh(Var x) {
  return x.tape->record(x.value().array().tanh().matrix(), {x.id}, [](Tape& t, std::size_t self) {
    const Matrix& y = t.value_of(self);
    Matrix d = (1.0 - y.array().square()).matrix();
    t.accumulate(t.input(self, 0), t.adjoint(self).cwiseProduct(d));
  });
}

Var relu(Var x) {
  return x.tape->record(x.value().cwiseMax(0.0), {x.id}, [](Tape& t, std::size_t self) {
    const Matrix& in = t.value_of(t.input(self, 0));
    Matrix g = (in.array() > 0.0).select(t.adjoint(self), 0.0);
    t.accumulate(t.input(self, 0), g);
  });
}

Var square(Var x) {
  return x.tape->record(x.value().array().square().matrix(), {x.id}, [](Tape& t, std::size_t self) {
    const auto ix = t.input(self, 0);
    t.accumulate(ix, 2.0 * t.adjoint(self).cwiseProduct(t.value_of(ix)));
  });
}

Var clamp(Var x, double lo, double hi) {
  return x.tape->record(x.value().cwiseMax(lo).cwiseMin(hi), {x.id}, [lo, hi](Tape& t, std::size_t self) {
    const Matrix& in = t.value_of(t.input(self, 0));
    Matrix g = (in.array() >= lo && in.array() <= hi).select(t.adjoint(self), 0.0);
    t.accumulate(t.input(self, 0), g);
  });
}

Var sum(Var x) {
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return x.tape->record(std::move(v), {x.id}, [](Tape& t, std::size_t self) {
    const auto ix = t.input(self, 0);
    const Matrix& in = t.value_of(ix);
    t.accumulate(ix, Matrix::Constant(in.rows(), in.cols(), t.adjoint(self)(0, 0)));
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean of empty matrix");
  return scale(sum(x), 1.0 / n);
}

Var row_sum(Var x) {
  return x.tape->record(x.value().rowwise().sum(), {x.id}, [](Tape& t, std::size_t self) {
    const auto ix = t.input(self, 0);
    const auto cols = t.value_of(ix).cols();
    t.accumulate(ix, t.adjoint(self).replicate(1, cols));
  });
}

Var select_cols(Var x, std::span<const int> cols) {
  std::vector<int> idx(cols.begin(), cols.end());
  for (int c : idx) {
    if (c < 0 || c >= x.cols()) throw ShapeError("select_cols: column index out of range");
  }
  Matrix v(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) v.col(static_cast<Eigen::Index>(k)) = x.value().col(idx[k]);
  return x.tape->record(std::move(v), {x.id}, [idx](Tape& t, std::size_t self) {
    const auto ix = t.input(self, 0);
    const Matrix& in = t.value_of(ix);
    const Matrix& g = t.adjoint(self);
    Matrix gx = Matrix::Zero(in.rows(), in.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) gx.col(idx[k]) += g.col(static_cast<Eigen::Index>(k));
    t.accumulate(ix, gx);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  const auto ca = a.cols();
  return a.tape->record(std::move(v), {a.id, b.id}, [ca](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    t.accumulate(t.input(self, 0), g.leftCols(ca));
    t.accumulate(t.input(self, 1), g.rightCols(g.cols() - ca));
  });
}

Var assemble_cols(std::span<const Var> parts, std::span<const std::vector<int>> cols, int width) {
  if (parts.empty() || parts.size() != cols.size()) throw ShapeError("assemble_cols: parts/cols mismatch");
  Tape* tape = parts[0].tape;
  const auto rows = parts[0].rows();
  Matrix v = Matrix::Zero(rows, width);
  std::vector<std::size_t> inputs;
  std::vector<std::vector<int>> layout(cols.begin(), cols.end());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].tape != tape) throw std::invalid_argument("vars belong to different tapes");
    if (parts[p].rows() != rows || parts[p].cols() != static_cast<Eigen::Index>(layout[p].size())) {
      throw ShapeError("assemble_cols: part shape does not match its column list");
    }
    for (std::size_t k = 0; k < layout[p].size(); ++k) {
      v.col(layout[p][k]) = parts[p].value().col(static_cast<Eigen::Index>(k));
    }
    inputs.push_back(parts[p].id);
  }
  return tape->record(std::move(v), std::move(inputs), [layout](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t p = 0; p < layout.size(); ++p) {
      Matrix gp(g.rows(), static_cast<Eigen::Index>(layout[p].size()));
      for (std::size_t k = 0; k < layout[p].size(); ++k) gp.col(static_cast<Eigen::Index>(k)) = g.col(layout[p][k]);
      t.accumulate(t.input(self, p), gp);
    }
  });
}

Var log_mollified_uniform(Var z, double sigma) {
  Matrix v = z.value().unaryExpr([sigma](double x) { return log_mollified_uniform(x, sigma); });
  return z.tape->record(std::move(v), {z.id}, [sigma](Tape& t, std::size_t self) {
    const auto iz = t.input(self, 0);
    Matrix d = t.value_of(iz).unaryExpr([sigma](double x) { return log_mollified_uniform_derivative(x, sigma); });
    t.accumulate(iz, t.adjoint(self).cwiseProduct(d));
  });
}

void zero_grads(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->zero_grad();
}

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  for (const Tensor* p : params) {
    if (!p->grad.allFinite()) throw DivergenceError("non-finite gradient in Adam step");
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      throw ShapeError("gradient shape does not match parameter");
    }
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("Adam state does not match parameter list");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

}  // namespace flowact
