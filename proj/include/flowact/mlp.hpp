#pragma once

#include "flowact/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flowact {

enum class Activation { identity, relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Fully connected network, rows are samples: h_{l+1} = act(h_l W_l + b_l).
///
/// Weights are (fan_in x fan_out) and initialized U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) from the given seed, biases likewise.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> layer_dims, Activation hidden, Activation output, std::uint64_t seed);

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& layer_dims() const { return dims_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t num_layers() const { return weights_.size(); }

  /// Records the forward pass on `tape`. With `track_params` false the
  /// weights enter as constants and receive no gradient.
  Var forward(Tape& tape, Var input, bool track_params = true);
  Var forward_const(Tape& tape, Var input) const;
  /// Plain evaluation without a tape.
  Matrix evaluate(const Matrix& input) const;
  /// d output / d input for a single sample, shape (out x in).
  Matrix input_jacobian(const RowVector& input) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  Tensor& weight(std::size_t layer) { return weights_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }
  const Tensor& weight(std::size_t layer) const { return weights_[layer]; }
  const Tensor& bias(std::size_t layer) const { return biases_[layer]; }

  void zero_output_layer();
  void zero_grad();

 private:
  void check_input(Eigen::Index cols) const;

  std::vector<int> dims_;
  Activation hidden_ = Activation::relu;
  Activation output_ = Activation::identity;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// target <- tau * online + (1 - tau) * target, elementwise over parameters.
void soft_update(Mlp& target, const Mlp& online, double tau);

/// FNV-1a over the raw parameter bytes; used to prove a model was not touched.
std::uint64_t parameter_checksum(std::span<const Tensor* const> params);

// Parameter blobs are a JSON array of {"shape": [r, c], "data": [...]}, data
// in row-major order. Doubles are written in shortest round-trip form, so a
// save/load cycle is bit-exact.
nlohmann::json tensors_to_json(std::span<const Tensor* const> params);
void tensors_from_json(const nlohmann::json& blob, std::span<Tensor* const> params);

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace flowact
