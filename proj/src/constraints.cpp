#include "flowact/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

namespace flowact {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_dim(const ConstraintSet& cs, const VectorRef& a) {
  if (a.size() != cs.dim()) {
    throw ShapeError("action has dimension " + std::to_string(a.size()) + ", constraint set expects " +
                     std::to_string(cs.dim()));
  }
}

Vector clip(const VectorRef& a, const Vector& lo, const Vector& hi) { return a.cwiseMax(lo).cwiseMin(hi); }

// Bisection on a nonincreasing scalar function, returning the smallest lambda
// (to the bracket resolution) with f(lambda) <= target.
double bisect_decreasing(const std::function<double(double)>& f, double target, double lo, double hi) {
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (f(mid) <= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

Vector project_halfspace(const Vector& x, const Vector& g, double h) {
  const double v = g.dot(x) - h;
  const double n2 = g.squaredNorm();
  if (v <= 0.0 || n2 == 0.0) return x;
  return x - (v / n2) * g;
}

Vector project_hyperplane(const Vector& x, const Vector& e, double f) {
  const double n2 = e.squaredNorm();
  if (n2 == 0.0) return x;
  return x - ((e.dot(x) - f) / n2) * e;
}

using SetProjection = std::function<Vector(const Vector&)>;

// Dykstra's alternating projections onto the intersection of the family sets
// and the box.
Vector dykstra(const ConstraintSet& cs, const Vector& a, const std::vector<SetProjection>& sets) {
  constexpr int kMaxCycles = 20000;
  std::vector<Vector> increments(sets.size(), Vector::Zero(a.size()));
  Vector x = a;
  std::optional<Vector> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int cycle = 0; cycle < kMaxCycles; ++cycle) {
    const Vector before = x;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const Vector y = sets[i](x + increments[i]);
      increments[i] = x + increments[i] - y;
      x = y;
    }
    if (is_feasible(cs, x)) {
      const double d = (x - a).norm();
      if (d < best_dist) {
        best_dist = d;
        best = x;
      }
    }
    if ((x - before).lpNorm<Eigen::Infinity>() < 1e-13 && is_feasible(cs, x, 1e-10)) return x;
  }
  if (best) return *best;
  throw ProjectionError("projection did not converge", best);
}

}  // namespace

ConstraintSet::ConstraintSet(ConstraintFamily family, Vector lower, Vector upper, bool integral)
    : family_(std::move(family)), lower_(std::move(lower)), upper_(std::move(upper)), integral_(integral) {
  if (lower_.size() == 0 || lower_.size() != upper_.size()) throw ShapeError("box bounds must be nonempty and matching");
  if ((lower_.array() > upper_.array()).any()) throw std::invalid_argument("box lower bound exceeds upper bound");
  const int d = dim();
  std::visit(overloaded{
                 [](const BoxOnly&) {},
                 [](const Ball& b) {
                   if (!(b.radius_sq > 0.0)) throw std::invalid_argument("Ball requires r^2 > 0");
                 },
                 [d](const WeightedL1& w) {
                   if (w.weights.size() != d) throw ShapeError("WeightedL1 weights must match action dimension");
                   if (w.limit < 0.0) throw std::invalid_argument("WeightedL1 limit must be nonnegative");
                 },
                 [d](const HingeSum& w) {
                   if (w.weights.size() != d) throw ShapeError("HingeSum weights must match action dimension");
                   if (w.limit < 0.0) throw std::invalid_argument("HingeSum limit must be nonnegative");
                 },
                 [d](const AllocEq& e) {
                   if (e.stations != d) throw ShapeError("AllocEq stations must match action dimension");
                   if (e.capacity < 0 || e.total < 0) throw std::invalid_argument("AllocEq needs m, c >= 0");
                   if (static_cast<long>(e.stations) * e.capacity < e.total) {
                     throw std::invalid_argument("AllocEq requires n * c >= m");
                   }
                 },
                 [d](const Affine& f) {
                   if (f.ineq_lhs.rows() != f.ineq_rhs.size() || f.eq_lhs.rows() != f.eq_rhs.size()) {
                     throw ShapeError("affine constraint rows do not match right-hand sides");
                   }
                   if ((f.ineq_lhs.rows() > 0 && f.ineq_lhs.cols() != d) || (f.eq_lhs.rows() > 0 && f.eq_lhs.cols() != d)) {
                     throw ShapeError("affine constraint columns must match action dimension");
                   }
                 },
             },
             family_);
  if (!lower_.allFinite() && !std::holds_alternative<BoxOnly>(family_)) {
    throw std::invalid_argument("constraint families need finite box bounds");
  }
  // Nonemptiness: the box center or its projection must be feasible.
  if (lower_.allFinite() && upper_.allFinite()) {
    const Vector center = 0.5 * (lower_ + upper_);
    try {
      const Vector p = project(*this, center);
      if (!is_feasible(*this, p)) throw std::invalid_argument("constraint set is empty");
    } catch (const ProjectionError&) {
      throw std::invalid_argument("constraint set appears empty: no feasible point found");
    }
  }
}

ConstraintSet ConstraintSet::box(Vector lower, Vector upper) {
  return ConstraintSet(BoxOnly{}, std::move(lower), std::move(upper));
}

ConstraintSet ConstraintSet::ball(double radius_sq, int dim) {
  return ConstraintSet(Ball{radius_sq}, Vector::Constant(dim, -1.0), Vector::Constant(dim, 1.0));
}

ConstraintSet ConstraintSet::weighted_l1(double limit, Vector weights) {
  const auto d = weights.size();
  return ConstraintSet(WeightedL1{limit, std::move(weights)}, Vector::Constant(d, -1.0), Vector::Constant(d, 1.0));
}

ConstraintSet ConstraintSet::hinge_sum(double limit, Vector weights) {
  const auto d = weights.size();
  return ConstraintSet(HingeSum{limit, std::move(weights)}, Vector::Constant(d, -1.0), Vector::Constant(d, 1.0));
}

ConstraintSet ConstraintSet::alloc_eq(int total, int capacity, int stations) {
  return ConstraintSet(AllocEq{total, capacity, stations}, Vector::Zero(stations),
                       Vector::Constant(stations, static_cast<double>(capacity)), true);
}

ConstraintSet ConstraintSet::affine(Matrix ineq_lhs, Vector ineq_rhs, Matrix eq_lhs, Vector eq_rhs, Vector lower,
                                    Vector upper) {
  return ConstraintSet(Affine{std::move(ineq_lhs), std::move(ineq_rhs), std::move(eq_lhs), std::move(eq_rhs)},
                       std::move(lower), std::move(upper));
}

bool ConstraintSet::convex() const { return true; }

std::string ConstraintSet::family_name() const {
  return std::visit(overloaded{
                        [](const BoxOnly&) { return std::string("box"); },
                        [](const Ball&) { return std::string("ball"); },
                        [](const WeightedL1&) { return std::string("weighted_l1"); },
                        [](const HingeSum&) { return std::string("hinge_sum"); },
                        [](const AllocEq&) { return std::string("alloc_eq"); },
                        [](const Affine&) { return std::string("affine"); },
                    },
                    family_);
}

Vector ConstraintSet::inequalities(const VectorRef& a) const {
  check_dim(*this, a);
  return std::visit(overloaded{
                        [](const BoxOnly&) { return Vector(0); },
                        [&](const Ball& b) {
                          Vector g(1);
                          g(0) = a.squaredNorm() - b.radius_sq;
                          return g;
                        },
                        [&](const WeightedL1& w) {
                          Vector g(1);
                          g(0) = a.cwiseProduct(w.weights).cwiseAbs().sum() - w.limit;
                          return g;
                        },
                        [&](const HingeSum& w) {
                          Vector g(1);
                          g(0) = a.cwiseProduct(w.weights).cwiseMax(0.0).sum() - w.limit;
                          return g;
                        },
                        [](const AllocEq&) { return Vector(0); },
                        [&](const Affine& f) {
                          if (f.ineq_lhs.rows() == 0) return Vector(0);
                          return Vector(f.ineq_lhs * a - f.ineq_rhs);
                        },
                    },
                    family_);
}

Vector ConstraintSet::equalities(const VectorRef& a) const {
  check_dim(*this, a);
  return std::visit(overloaded{
                        [&](const AllocEq& e) {
                          Vector h(1);
                          h(0) = a.sum() - static_cast<double>(e.total);
                          return h;
                        },
                        [&](const Affine& f) {
                          if (f.eq_lhs.rows() == 0) return Vector(0);
                          return Vector(f.eq_lhs * a - f.eq_rhs);
                        },
                        [](const auto&) { return Vector(0); },
                    },
                    family_);
}

bool is_feasible(const ConstraintSet& cs, const VectorRef& a) { return is_feasible(cs, a, cs.default_tolerance()); }

bool is_feasible(const ConstraintSet& cs, const VectorRef& a, double tol) {
  check_dim(cs, a);
  if (!a.allFinite()) return false;
  if (((a - cs.lower()).array() < -tol).any() || ((a - cs.upper()).array() > tol).any()) return false;
  if (cs.integral()) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      if (a(i) != std::round(a(i))) return false;
    }
  }
  const Vector g = cs.inequalities(a);
  if ((g.array() > tol).any()) return false;
  const Vector h = cs.equalities(a);
  return !(h.array().abs() > tol).any();
}

double violation_magnitude(const ConstraintSet& cs, const VectorRef& a, double eq_margin) {
  check_dim(cs, a);
  double cv = cs.inequalities(a).cwiseMax(0.0).sum();
  cv += (cs.lower() - a).cwiseMax(0.0).sum();
  cv += (a - cs.upper()).cwiseMax(0.0).sum();
  cv += (cs.equalities(a).array().abs() - eq_margin).max(0.0).sum();
  return cv;
}

Vector round_to_lattice(const ConstraintSet& cs, const VectorRef& a) {
  check_dim(cs, a);
  if (!cs.integral()) return a;
  if (!std::holds_alternative<AllocEq>(cs.family())) return a.array().round().matrix();
  // Largest remainder: floor everything, then hand the units needed to reach
  // round(sum a) to the largest fractional parts.
  Vector out = a.array().floor().matrix();
  const auto extra = static_cast<long>(std::llround(a.sum()) - std::llround(out.sum()));
  std::vector<int> idx(static_cast<std::size_t>(a.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int l, int r) { return a(l) - out(l) > a(r) - out(r); });
  for (long k = 0; k < extra && k < static_cast<long>(idx.size()); ++k) out(idx[static_cast<std::size_t>(k)]) += 1.0;
  return out;
}

Vector project_alloc_continuous(const VectorRef& a, double total, double capacity) {
  // sum_i clip(a_i - lambda, 0, c) is nonincreasing in lambda.
  auto mass = [&](double lambda) { return (a.array() - lambda).max(0.0).min(capacity).sum(); };
  const double lo = a.minCoeff() - capacity - 1.0;
  const double hi = a.maxCoeff() + 1.0;
  const double lambda = bisect_decreasing(mass, total, lo, hi);
  return (a.array() - lambda).max(0.0).min(capacity).matrix();
}

Vector project_alloc_integer(const VectorRef& a, int total, int capacity) {
  const Vector p = project_alloc_continuous(a, total, capacity);
  Vector z = p.array().floor().max(0.0).min(static_cast<double>(capacity)).matrix();
  long residual = total - static_cast<long>(std::llround(z.sum()));
  // Greedy on marginal squared-distance cost; exact for separable convex
  // objectives under a single sum constraint.
  while (residual > 0) {
    Eigen::Index best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (z(i) >= capacity) continue;
      const double cost = 2.0 * (z(i) - a(i)) + 1.0;
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    if (best < 0) throw ProjectionError("allocation exceeds total capacity", std::nullopt);
    z(best) += 1.0;
    --residual;
  }
  while (residual < 0) {
    Eigen::Index best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (z(i) <= 0.0) continue;
      const double cost = -2.0 * (z(i) - a(i)) + 1.0;
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    if (best < 0) throw ProjectionError("allocation cannot be reduced", std::nullopt);
    z(best) -= 1.0;
    ++residual;
  }
  return z;
}

Vector project_weighted_l1_ball(const VectorRef& a, const Vector& weights, double limit) {
  const Vector aw = weights.cwiseAbs();
  auto shrink = [&](double lambda) -> Vector {
    return (a.array().sign() * (a.array().abs() - lambda * aw.array()).max(0.0)).matrix();
  };
  auto norm = [&](double lambda) { return shrink(lambda).cwiseAbs().cwiseProduct(aw).sum(); };
  if (norm(0.0) <= limit) return a;
  double hi = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (aw(i) > 0.0) hi = std::max(hi, std::abs(a(i)) / aw(i));
  }
  return shrink(bisect_decreasing(norm, limit, 0.0, hi));
}

Vector project_hinge_set(const VectorRef& a, const Vector& weights, double limit) {
  auto shrink = [&](double lambda) -> Vector {
    Vector out = a;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double w = weights(i);
      const double s = w * a(i);
      if (w == 0.0 || s <= 0.0) continue;
      out(i) = a(i) - std::min(lambda, s / (w * w)) * w;
    }
    return out;
  };
  auto hinge = [&](double lambda) { return shrink(lambda).cwiseProduct(weights).cwiseMax(0.0).sum(); };
  if (hinge(0.0) <= limit) return a;
  double hi = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double w = weights(i);
    if (w != 0.0 && w * a(i) > 0.0) hi = std::max(hi, w * a(i) / (w * w));
  }
  return shrink(bisect_decreasing(hinge, limit, 0.0, hi));
}

Vector project(const ConstraintSet& cs, const VectorRef& a) {
  check_dim(cs, a);
  if (!a.allFinite()) throw ProjectionError("cannot project a non-finite action", std::nullopt);
  if (is_feasible(cs, a, 0.0)) return a;
  const Vector& lo = cs.lower();
  const Vector& hi = cs.upper();
  auto box = [&lo, &hi](const Vector& x) { return clip(x, lo, hi); };

  return std::visit(
      overloaded{
          [&](const BoxOnly&) -> Vector { return box(a); },
          [&](const Ball& b) -> Vector {
            const double r = std::sqrt(b.radius_sq);
            auto radial = [r, &b](const Vector& x) -> Vector {
              const double n = x.norm();
              if (n <= r) return x;
              Vector q = x * (r / n);
              // Rounding can leave |q|^2 a few ulps above r^2.
              while (q.squaredNorm() > b.radius_sq) q *= 1.0 - std::numeric_limits<double>::epsilon();
              return q;
            };
            // The radially scaled point is the exact answer whenever it lies in the box.
            const Vector p = radial(a);
            if (is_feasible(cs, p, 0.0)) return p;
            Vector q = dykstra(cs, a, {radial, box});
            return q;
          },
          [&](const WeightedL1& w) -> Vector {
            return dykstra(cs, a,
                           {[&w](const Vector& x) { return project_weighted_l1_ball(x, w.weights, w.limit); }, box});
          },
          [&](const HingeSum& w) -> Vector {
            return dykstra(cs, a, {[&w](const Vector& x) { return project_hinge_set(x, w.weights, w.limit); }, box});
          },
          [&](const AllocEq& e) -> Vector { return project_alloc_integer(a, e.total, e.capacity); },
          [&](const Affine& f) -> Vector {
            std::vector<SetProjection> sets;
            for (Eigen::Index i = 0; i < f.ineq_lhs.rows(); ++i) {
              Vector g = f.ineq_lhs.row(i).transpose();
              const double h = f.ineq_rhs(i);
              sets.emplace_back([g, h](const Vector& x) { return project_halfspace(x, g, h); });
            }
            for (Eigen::Index j = 0; j < f.eq_lhs.rows(); ++j) {
              Vector e = f.eq_lhs.row(j).transpose();
              const double v = f.eq_rhs(j);
              sets.emplace_back([e, v](const Vector& x) { return project_hyperplane(x, e, v); });
            }
            sets.emplace_back(box);
            return dykstra(cs, a, sets);
          },
      },
      cs.family());
}

namespace {

Vector vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Matrix m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != cols) throw ShapeError("affine matrix row has wrong length");
    for (Eigen::Index k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return m;
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!ok) throw std::invalid_argument("unknown constraint key: " + it.key());
  }
}

}  // namespace

ConstraintSet constraint_from_json(const nlohmann::json& j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "ball") {
    reject_unknown(j, {"family", "radius_sq", "dim"});
    return ConstraintSet::ball(j.value("radius_sq", 0.05), j.value("dim", 2));
  }
  if (family == "weighted_l1") {
    reject_unknown(j, {"family", "limit", "weights"});
    return ConstraintSet::weighted_l1(j.value("limit", 20.0), vector_from_json(j.at("weights")));
  }
  if (family == "hinge_sum") {
    reject_unknown(j, {"family", "limit", "weights"});
    return ConstraintSet::hinge_sum(j.value("limit", 10.0), vector_from_json(j.at("weights")));
  }
  if (family == "alloc_eq") {
    reject_unknown(j, {"family", "total", "capacity", "stations"});
    return ConstraintSet::alloc_eq(j.value("total", 150), j.value("capacity", 35), j.value("stations", 5));
  }
  if (family == "box") {
    reject_unknown(j, {"family", "lower", "upper"});
    return ConstraintSet::box(vector_from_json(j.at("lower")), vector_from_json(j.at("upper")));
  }
  if (family == "affine") {
    reject_unknown(j, {"family", "ineq_lhs", "ineq_rhs", "eq_lhs", "eq_rhs", "lower", "upper"});
    Vector lower = vector_from_json(j.at("lower"));
    Vector upper = vector_from_json(j.at("upper"));
    const auto d = lower.size();
    Matrix g = j.contains("ineq_lhs") ? matrix_from_json(j.at("ineq_lhs"), d) : Matrix(0, d);
    Vector h = j.contains("ineq_rhs") ? vector_from_json(j.at("ineq_rhs")) : Vector(0);
    Matrix e = j.contains("eq_lhs") ? matrix_from_json(j.at("eq_lhs"), d) : Matrix(0, d);
    Vector f = j.contains("eq_rhs") ? vector_from_json(j.at("eq_rhs")) : Vector(0);
    return ConstraintSet::affine(std::move(g), std::move(h), std::move(e), std::move(f), std::move(lower),
                                 std::move(upper));
  }
  throw std::invalid_argument("unknown constraint family: " + family);
}

}  // namespace flowact
