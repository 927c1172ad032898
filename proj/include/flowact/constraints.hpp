#pragma once

#include "flowact/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

namespace flowact {

using VectorRef = Eigen::Ref<const Vector>;

// Built-in constraint families. The box bounds live on ConstraintSet itself.

/// Only the box.
struct BoxOnly {};
/// sum a_i^2 <= radius_sq.
struct Ball {
  double radius_sq = 0.05;
};
/// sum |a_i w_i| <= limit.
struct WeightedL1 {
  double limit = 20.0;
  Vector weights;
};
/// sum max(w_i a_i, 0) <= limit.
struct HingeSum {
  double limit = 10.0;
  Vector weights;
};
/// sum a_i = total, 0 <= a_i <= capacity, a integer.
struct AllocEq {
  int total = 150;
  int capacity = 35;
  int stations = 5;
};
/// G a <= h and E a = f.
struct Affine {
  Matrix ineq_lhs;
  Vector ineq_rhs;
  Matrix eq_lhs;
  Vector eq_rhs;
};

using ConstraintFamily = std::variant<BoxOnly, Ball, WeightedL1, HingeSum, AllocEq, Affine>;

struct ProjectionError : std::runtime_error {
  ProjectionError(const std::string& what, std::optional<Vector> best)
      : std::runtime_error(what), best_feasible(std::move(best)) {}
  std::optional<Vector> best_feasible;
};

/// Feasible action set C(s) for one state: a family instance plus box
/// bounds and an integrality flag. Immutable after construction.
class ConstraintSet {
 public:
  ConstraintSet(ConstraintFamily family, Vector lower, Vector upper, bool integral = false);

  static ConstraintSet box(Vector lower, Vector upper);
  /// Ball(r^2) in the box [-1, 1]^dim.
  static ConstraintSet ball(double radius_sq, int dim = 2);
  static ConstraintSet weighted_l1(double limit, Vector weights);
  static ConstraintSet hinge_sum(double limit, Vector weights);
  static ConstraintSet alloc_eq(int total, int capacity, int stations);
  static ConstraintSet affine(Matrix ineq_lhs, Vector ineq_rhs, Matrix eq_lhs, Vector eq_rhs, Vector lower,
                              Vector upper);

  int dim() const { return static_cast<int>(lower_.size()); }
  const ConstraintFamily& family() const { return family_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  bool integral() const { return integral_; }
  bool convex() const;
  std::string family_name() const;

  /// 1e-6 for continuous sets, 0 for integer sets.
  double default_tolerance() const { return integral_ ? 0.0 : 1e-6; }

  /// Family inequalities g_i(a) (<= 0 when satisfied), box excluded.
  Vector inequalities(const VectorRef& a) const;
  /// Family equalities h_j(a) (= 0 when satisfied).
  Vector equalities(const VectorRef& a) const;

 private:
  ConstraintFamily family_;
  Vector lower_;
  Vector upper_;
  bool integral_ = false;
};

bool is_feasible(const ConstraintSet& cs, const VectorRef& a);
bool is_feasible(const ConstraintSet& cs, const VectorRef& a, double tol);

/// sum_i max(g_i, 0) over family and box inequalities plus
/// sum_j max(|h_j| - eq_margin, 0).
double violation_magnitude(const ConstraintSet& cs, const VectorRef& a, double eq_margin = 0.1);

/// Euclidean projection onto the set (nearest lattice point for integer
/// sets). Feasible inputs are returned unchanged.
Vector project(const ConstraintSet& cs, const VectorRef& a);

/// What an environment would execute for a raw real action: the action
/// itself for continuous sets; for allocation sets the nearest integer
/// vector whose sum is round(sum a) (largest remainder); nearest integers
/// for other integer sets.
Vector round_to_lattice(const ConstraintSet& cs, const VectorRef& a);

// Building blocks, exposed for tests.
Vector project_alloc_continuous(const VectorRef& a, double total, double capacity);
Vector project_alloc_integer(const VectorRef& a, int total, int capacity);
Vector project_weighted_l1_ball(const VectorRef& a, const Vector& weights, double limit);
Vector project_hinge_set(const VectorRef& a, const Vector& weights, double limit);

ConstraintSet constraint_from_json(const nlohmann::json& j);

}  // namespace flowact
