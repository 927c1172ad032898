#pragma once

#include "flowact/constraints.hpp"
#include "flowact/mlp.hpp"
#include "flowact/mollified_uniform.hpp"
#include "flowact/samplers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace flowact {

/// Fixed affine map from the flow's native range [-1, 1]^D to the action
/// space: x_env = offset + R (scale * x_flow), with R orthonormal (identity
/// when `rotation` is empty).
struct ActionScaling {
  Vector offset;
  Vector scale;
  Matrix rotation;

  static ActionScaling identity(int dim);
  /// Axis-aligned map onto the box of `cs`. Integer sets get half a unit of
  /// slack per side so dequantized training data stays inside the range.
  static ActionScaling for_box(const ConstraintSet& cs);
  /// for_box, except for allocation sets: there the first flow axis runs
  /// along the all-ones direction and spans total +- 0.5, and the remaining
  /// axes cover the feasible polytope inside the equality hyperplane.
  static ActionScaling for_set(const ConstraintSet& cs);

  Matrix to_env(const Matrix& x_flow) const;
  Matrix to_flow(const Matrix& x_env) const;
  Var to_env(Tape& tape, Var x_flow) const;
  /// d x_env / d x_flow.
  Matrix jacobian() const;
  double log_scale_sum() const { return scale.array().log().sum(); }
};

struct FlowConfig {
  int layers = 6;
  std::vector<int> hidden{256, 256};
  double sigma = 0.01;
  /// Zero the output layer of every k and t net, so the flow starts as the identity.
  bool identity_init = true;
  std::uint64_t seed = 0;
};

/// Affine coupling: `pass` dims are copied, `transform` dims are scaled and
/// shifted by nets fed with the pass dims and the conditioning vector.
struct CouplingLayer {
  std::vector<int> pass;
  std::vector<int> transform;
  Mlp scale_net;
  Mlp shift_net;
  int index = 0;
};

inline constexpr double kScaleClamp = 8.0;

/// Conditional RealNVP with a mollified-uniform latent prior.
///
/// The backward map carries a latent z0 to an action; the forward map is its
/// inverse and yields the log-determinant used for likelihood training.
/// Layer i passes the d = ceil(D/2) dims in the cyclic window starting at
/// i * d (mod D) and transforms the rest. For even D consecutive layers swap
/// halves; for odd D every pair of dims is split by some layer.
class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(int action_dim, int cond_dim, const FlowConfig& cfg = {}, ActionScaling scaling = {});

  int action_dim() const { return action_dim_; }
  int cond_dim() const { return cond_dim_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const FlowConfig& config() const { return config_; }
  const CouplingLayer& layer(int i) const { return layers_[static_cast<std::size_t>(i)]; }
  CouplingLayer& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
  const MollifiedUniform& prior() const { return prior_; }
  const ActionScaling& scaling() const { return scaling_; }

  /// Latent rows -> action rows. `y` has one row per latent row, or a single
  /// row shared by all of them.
  Matrix backward_map(const Matrix& z, const Matrix& y) const;
  Vector backward_map(const Vector& z, const Vector& y) const;
  /// Same map recorded on a tape, flow parameters held constant.
  Var backward_map(Tape& tape, Var z, const Matrix& y) const;

  /// Action rows -> (latent rows, log|det dz/dx| per row).
  std::pair<Matrix, Vector> forward_map_logdet(const Matrix& x, const Matrix& y) const;

  /// Per-row log density of actions under the flow.
  Vector log_prob(const Matrix& x, const Matrix& y) const;

  /// Mean negative log-likelihood of `x`, recorded with trainable parameters.
  Var nll(Tape& tape, const Matrix& x, const Matrix& y);

  /// d backward_map / d z0 at a single point (D x D), as the product of the
  /// per-layer block-triangular Jacobians.
  Matrix input_gradient(const Vector& z, const Vector& y) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

 private:
  Matrix broadcast_y(const Matrix& y, Eigen::Index rows) const;

  int action_dim_ = 0;
  int cond_dim_ = 0;
  FlowConfig config_;
  MollifiedUniform prior_;
  ActionScaling scaling_;
  std::vector<CouplingLayer> layers_;
};

/// Noise added to integer training actions.
enum class Dequantization {
  none,
  /// U(-0.5, 0.5) per coordinate.
  cube,
  /// Cube noise minus its mean, plus a shared shift so the sum of the
  /// coordinates moves by U(-0.5, 0.5).
  sum_preserving,
};

std::string to_string(Dequantization d);
Dequantization dequantization_from_string(const std::string& s);
/// none for continuous sets, sum_preserving for allocation sets, cube otherwise.
Dequantization dequantization_for(const ConstraintSet& cs);

struct FlowTrainConfig {
  int epochs = 5000;
  int batch_size = 5000;
  double learning_rate = 1e-5;
  Dequantization dequantize = Dequantization::none;
  std::uint64_t seed = 0;
};

struct FlowTrainingLog {
  /// Full-dataset NLL before the first step (no dequantization noise).
  double initial_nll = 0.0;
  /// Mean batch NLL of each epoch.
  std::vector<double> epoch_nll;
};

/// Maximum-likelihood training with Adam over shuffled minibatches.
/// Throws DivergenceError (epoch and batch in the message) on a NaN loss.
FlowTrainingLog train(FlowModel& fm, const SampleDataset& data, const FlowTrainConfig& cfg,
                      const std::function<void(int, double)>& on_epoch = {});

/// Full-dataset mean NLL.
double dataset_nll(const FlowModel& fm, const SampleDataset& data);

struct FlowEvaluation {
  std::size_t samples = 0;
  std::size_t valid = 0;
  /// Distance from each invalid raw output to its projection.
  std::vector<double> invalid_distances;
  double mean_cv_of_invalid = 0.0;

  double accuracy() const { return samples == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(samples); }
  /// Share of invalid outputs at distance <= limit (1.0 when all are valid).
  double fraction_within(double limit) const;
};

/// Pushes n uniform latent points from [-1, 1]^D through the flow and checks
/// feasibility (after rounding, for integer sets).
FlowEvaluation evaluate_accuracy(const FlowModel& fm, const ConstraintSet& cs, const Vector& y, std::size_t n,
                                 std::uint64_t seed);
/// Same over several conditioning rows, n_per_state points each.
FlowEvaluation evaluate_accuracy(const FlowModel& fm, const std::function<ConstraintSet(const Vector&)>& constraint_for,
                                 const Matrix& ys, std::size_t n_per_state, std::uint64_t seed);

double accuracy(const FlowModel& fm, const ConstraintSet& cs, const Vector& y, std::size_t n = 100000,
                std::uint64_t seed = 0);

/// Fraction of reference actions whose inverse image lies in [-1, 1]^D;
/// each record is inverted under its own conditioning vector.
double recall(const FlowModel& fm, const SampleDataset& reference);

struct Histogram {
  double bin_width = 1.0;
  /// counts[i] covers [i * bin_width, (i + 1) * bin_width); the last bin is open-ended.
  std::vector<std::size_t> counts;

  std::size_t total() const;
  double fraction_below(double edge) const;
};

Histogram make_histogram(const std::vector<double>& values, double bin_width, int bins);

nlohmann::json flow_to_json(const FlowModel& fm);
FlowModel flow_from_json(const nlohmann::json& j);
void save_flow(const FlowModel& fm, const std::string& path);
FlowModel load_flow(const std::string& path);

}  // namespace flowact
