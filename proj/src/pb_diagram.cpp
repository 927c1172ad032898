#include "flowact/pb_diagram.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_set>

namespace flowact {

std::string to_string(ModelCount c) {
  if (c == 0) return "0";
  std::string s;
  while (c > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(c % 10)));
    c /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

std::vector<long> BitEncoding::decode(const std::vector<bool>& assignment) const {
  if (static_cast<int>(assignment.size()) != boolean_count()) throw ShapeError("assignment length mismatch");
  std::vector<long> values(static_cast<std::size_t>(variables), 0);
  for (int v = 0; v < variables; ++v) {
    long acc = 0;
    for (int b = 0; b < bits; ++b) acc = acc * 2 + (assignment[static_cast<std::size_t>(boolean_index(v, b))] ? 1 : 0);
    values[static_cast<std::size_t>(v)] = acc;
  }
  return values;
}

PbConstraint encode_linear(const BitEncoding& enc, const std::vector<double>& coefficients, Comparison cmp,
                           double threshold) {
  if (static_cast<int>(coefficients.size()) != enc.variables) throw ShapeError("one coefficient per integer variable");
  PbConstraint pb;
  pb.coefficients.assign(static_cast<std::size_t>(enc.boolean_count()), 0.0);
  for (int v = 0; v < enc.variables; ++v) {
    for (int b = 0; b < enc.bits; ++b) {
      pb.coefficients[static_cast<std::size_t>(enc.boolean_index(v, b))] =
          coefficients[static_cast<std::size_t>(v)] * enc.bit_weight(b);
    }
  }
  pb.comparison = cmp;
  pb.threshold = threshold;
  return pb;
}

std::vector<int> make_order(const BitEncoding& enc, VariableOrder order) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(enc.boolean_count()));
  if (order == VariableOrder::interleaved) {
    for (int b = 0; b < enc.bits; ++b)
      for (int v = 0; v < enc.variables; ++v) out.push_back(enc.boolean_index(v, b));
  } else {
    for (int v = 0; v < enc.variables; ++v)
      for (int b = 0; b < enc.bits; ++b) out.push_back(enc.boolean_index(v, b));
  }
  return out;
}

DiagramManager::DiagramManager(std::vector<int> order, std::size_t node_budget)
    : order_(std::move(order)), budget_(node_budget) {
  const auto n = order_.size();
  if (n > 126) throw std::invalid_argument("at most 126 Boolean variables are supported");
  level_of_var_.assign(n, -1);
  for (std::size_t l = 0; l < n; ++l) {
    const int v = order_[l];
    if (v < 0 || static_cast<std::size_t>(v) >= n || level_of_var_[static_cast<std::size_t>(v)] != -1) {
      throw std::invalid_argument("variable order must be a permutation of 0..n-1");
    }
    level_of_var_[static_cast<std::size_t>(v)] = static_cast<int>(l);
  }
  const int terminal = static_cast<int>(n);
  nodes_.push_back({terminal, kFalse, kFalse});
  nodes_.push_back({terminal, kTrue, kTrue});
  width_.assign(n, 0);
}

std::size_t DiagramManager::peak_width() const {
  return width_.empty() ? 0 : *std::max_element(width_.begin(), width_.end());
}

NodeId DiagramManager::make(int level, NodeId lo, NodeId hi) {
  if (lo == hi) return lo;
  const Key key{level, lo, hi};
  if (auto it = unique_.find(key); it != unique_.end()) return it->second;
  if (nodes_.size() >= budget_) throw BudgetError("diagram node budget exceeded", peak_width());
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back({level, lo, hi});
  unique_.emplace(key, id);
  ++width_[static_cast<std::size_t>(level)];
  return id;
}

NodeId DiagramManager::conjoin(NodeId a, NodeId b) {
  std::unordered_map<std::uint64_t, NodeId> memo;
  auto rec = [&](auto&& self, NodeId x, NodeId y) -> NodeId {
    if (x == kFalse || y == kFalse) return kFalse;
    if (x == kTrue) return y;
    if (y == kTrue || x == y) return x;
    if (x > y) std::swap(x, y);
    const std::uint64_t key = (static_cast<std::uint64_t>(x) << 32) | y;
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const Node nx = nodes_[x];
    const Node ny = nodes_[y];
    const int l = std::min(nx.level, ny.level);
    const NodeId x0 = nx.level == l ? nx.lo : x;
    const NodeId x1 = nx.level == l ? nx.hi : x;
    const NodeId y0 = ny.level == l ? ny.lo : y;
    const NodeId y1 = ny.level == l ? ny.hi : y;
    const NodeId lo = self(self, x0, y0);
    const NodeId hi = self(self, x1, y1);
    const NodeId r = make(l, lo, hi);
    memo.emplace(key, r);
    return r;
  };
  return rec(rec, a, b);
}

std::size_t Diagram::node_count() const {
  std::unordered_set<NodeId> seen;
  std::deque<NodeId> queue{root};
  while (!queue.empty()) {
    const NodeId id = queue.front();
    queue.pop_front();
    if (id == kFalse || id == kTrue || !seen.insert(id).second) continue;
    queue.push_back(manager->node(id).lo);
    queue.push_back(manager->node(id).hi);
  }
  return seen.size();
}

bool Diagram::evaluate(const std::vector<bool>& assignment) const {
  if (static_cast<int>(assignment.size()) != manager->variable_count()) throw ShapeError("assignment length mismatch");
  NodeId id = root;
  while (id != kFalse && id != kTrue) {
    const auto& n = manager->node(id);
    const int var = manager->order()[static_cast<std::size_t>(n.level)];
    id = assignment[static_cast<std::size_t>(var)] ? n.hi : n.lo;
  }
  return id == kTrue;
}

namespace {

struct Interval {
  NodeId node;
  double lo;  // inclusive
  double hi;  // exclusive
};

class PbCompiler {
 public:
  PbCompiler(DiagramManager& mgr, const PbConstraint& pb) : mgr_(mgr), pb_(pb) {
    const int n = mgr.variable_count();
    coef_.resize(static_cast<std::size_t>(n));
    for (int l = 0; l < n; ++l) coef_[static_cast<std::size_t>(l)] = pb.coefficients[static_cast<std::size_t>(mgr.order()[static_cast<std::size_t>(l)])];
    min_rem_.assign(static_cast<std::size_t>(n) + 1, 0.0);
    max_rem_.assign(static_cast<std::size_t>(n) + 1, 0.0);
    double scale = 1.0;
    for (int l = n - 1; l >= 0; --l) {
      const double c = coef_[static_cast<std::size_t>(l)];
      min_rem_[static_cast<std::size_t>(l)] = min_rem_[static_cast<std::size_t>(l) + 1] + std::min(c, 0.0);
      max_rem_[static_cast<std::size_t>(l)] = max_rem_[static_cast<std::size_t>(l) + 1] + std::max(c, 0.0);
      scale = std::max(scale, std::abs(c));
    }
    eq_tol_ = 1e-9 * scale;
    le_memo_.resize(static_cast<std::size_t>(n));
    eq_memo_.resize(static_cast<std::size_t>(n));
  }

  NodeId run() {
    if (pb_.comparison == Comparison::less_equal) return le(0, pb_.threshold).node;
    return eq(0, pb_.threshold);
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  // Node for "sum of remaining terms <= r", valid on [lo, hi).
  Interval le(int l, double r) {
    const auto ul = static_cast<std::size_t>(l);
    if (r >= max_rem_[ul]) return {kTrue, max_rem_[ul], kInf};
    if (r < min_rem_[ul]) return {kFalse, -kInf, min_rem_[ul]};
    auto& memo = le_memo_[ul];
    auto it = memo.upper_bound(r);
    if (it != memo.begin()) {
      --it;
      if (r >= it->first && r < it->second.hi) return it->second;
    }
    const double c = coef_[ul];
    const Interval lo = le(l + 1, r);
    const Interval hi = le(l + 1, r - c);
    const NodeId node = mgr_.make(l, lo.node, hi.node);
    const Interval out{node, std::max(lo.lo, hi.lo + c), std::min(lo.hi, hi.hi + c)};
    memo.emplace(out.lo, out);
    return out;
  }

  NodeId eq(int l, double r) {
    const auto ul = static_cast<std::size_t>(l);
    if (r < min_rem_[ul] - eq_tol_ || r > max_rem_[ul] + eq_tol_) return kFalse;
    if (l == mgr_.variable_count()) return std::abs(r) <= eq_tol_ ? kTrue : kFalse;
    auto& memo = eq_memo_[ul];
    if (auto it = memo.find(r); it != memo.end()) return it->second;
    const NodeId lo = eq(l + 1, r);
    const NodeId hi = eq(l + 1, r - coef_[ul]);
    const NodeId node = mgr_.make(l, lo, hi);
    memo.emplace(r, node);
    return node;
  }

  DiagramManager& mgr_;
  const PbConstraint& pb_;
  std::vector<double> coef_;
  std::vector<double> min_rem_;
  std::vector<double> max_rem_;
  double eq_tol_ = 0.0;
  std::vector<std::map<double, Interval>> le_memo_;
  std::vector<std::map<double, NodeId>> eq_memo_;
};

ModelCount pow2(int k) { return static_cast<ModelCount>(1) << k; }

// Models over levels [level(id), n) for every node reachable from root.
ModelCount count_below(const DiagramManager& mgr, NodeId id, std::unordered_map<NodeId, ModelCount>& memo) {
  if (id == kFalse) return 0;
  if (id == kTrue) return 1;
  if (auto it = memo.find(id); it != memo.end()) return it->second;
  const auto& n = mgr.node(id);
  const ModelCount lo = count_below(mgr, n.lo, memo) * pow2(mgr.level(n.lo) - n.level - 1);
  const ModelCount hi = count_below(mgr, n.hi, memo) * pow2(mgr.level(n.hi) - n.level - 1);
  const ModelCount c = lo + hi;
  memo.emplace(id, c);
  return c;
}

}  // namespace

Diagram compile_pb(const std::shared_ptr<DiagramManager>& manager, const PbConstraint& pb) {
  if (!manager) throw std::invalid_argument("compile_pb needs a manager");
  if (static_cast<int>(pb.coefficients.size()) != manager->variable_count()) {
    throw ShapeError("PB constraint has " + std::to_string(pb.coefficients.size()) + " coefficients, manager has " +
                     std::to_string(manager->variable_count()) + " variables");
  }
  for (double c : pb.coefficients) {
    if (!std::isfinite(c)) throw std::invalid_argument("PB coefficients must be finite");
  }
  if (!std::isfinite(pb.threshold)) throw std::invalid_argument("PB threshold must be finite");
  PbCompiler compiler(*manager, pb);
  return Diagram{manager, compiler.run()};
}

Diagram conjoin(const Diagram& a, const Diagram& b) {
  if (a.manager != b.manager) {
    if (!a.manager || !b.manager || a.manager->order() != b.manager->order()) {
      throw std::invalid_argument("conjoin: diagrams use different variable orders");
    }
    throw std::invalid_argument("conjoin: diagrams belong to different managers");
  }
  return Diagram{a.manager, a.manager->conjoin(a.root, b.root)};
}

ModelCount model_count(const Diagram& d) {
  std::unordered_map<NodeId, ModelCount> memo;
  return count_below(*d.manager, d.root, memo) * pow2(d.manager->level(d.root));
}

Psdd::Psdd(Diagram d) : diagram_(std::move(d)) {
  std::unordered_map<NodeId, ModelCount> memo;
  const auto& mgr = *diagram_.manager;
  total_ = count_below(mgr, diagram_.root, memo) * pow2(mgr.level(diagram_.root));
  if (total_ == 0) throw std::invalid_argument("cannot build a uniform PSDD over zero models");
  for (const auto& [id, count] : memo) {
    const auto& n = mgr.node(id);
    const ModelCount hi = count_below(mgr, n.hi, memo) * pow2(mgr.level(n.hi) - n.level - 1);
    hi_prob_.emplace(id, static_cast<double>(static_cast<long double>(hi) / static_cast<long double>(count)));
  }
}

double Psdd::hi_probability(NodeId id) const {
  auto it = hi_prob_.find(id);
  if (it == hi_prob_.end()) throw std::out_of_range("node is not a decision node of this PSDD");
  return it->second;
}

double Psdd::probability(const std::vector<bool>& assignment) const {
  const auto& mgr = *diagram_.manager;
  if (static_cast<int>(assignment.size()) != mgr.variable_count()) throw ShapeError("assignment length mismatch");
  double p = std::ldexp(1.0, -mgr.level(diagram_.root));
  NodeId id = diagram_.root;
  while (id != kFalse && id != kTrue) {
    const auto& n = mgr.node(id);
    const bool bit = assignment[static_cast<std::size_t>(mgr.order()[static_cast<std::size_t>(n.level)])];
    const double ph = hi_prob_.at(id);
    p *= bit ? ph : 1.0 - ph;
    const NodeId next = bit ? n.hi : n.lo;
    p = std::ldexp(p, -(mgr.level(next) - n.level - 1));
    id = next;
  }
  return id == kTrue ? p : 0.0;
}

std::vector<bool> Psdd::sample(std::mt19937_64& rng) const {
  const auto& mgr = *diagram_.manager;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> out(static_cast<std::size_t>(mgr.variable_count()), false);
  auto fill_free = [&](int from, int to) {
    for (int l = from; l < to; ++l) out[static_cast<std::size_t>(mgr.order()[static_cast<std::size_t>(l)])] = coin(rng);
  };
  NodeId id = diagram_.root;
  fill_free(0, mgr.level(id));
  while (id != kTrue) {
    const auto& n = mgr.node(id);
    const bool bit = unit(rng) < hi_prob_.at(id);
    out[static_cast<std::size_t>(mgr.order()[static_cast<std::size_t>(n.level)])] = bit;
    const NodeId next = bit ? n.hi : n.lo;
    fill_free(n.level + 1, mgr.level(next));
    id = next;
  }
  return out;
}

SampleDataset sample_actions(const Psdd& psdd, const BitEncoding& enc, std::size_t count, std::uint64_t seed) {
  if (enc.boolean_count() != psdd.diagram().manager->variable_count()) {
    throw ShapeError("bit encoding does not match the diagram's variables");
  }
  std::mt19937_64 rng(seed);
  SampleDataset out;
  out.source = SampleSource::psdd;
  out.feasible_fraction = 1.0;
  out.records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto values = enc.decode(psdd.sample(rng));
    Vector x(enc.variables);
    for (int v = 0; v < enc.variables; ++v) x(v) = static_cast<double>(values[static_cast<std::size_t>(v)]);
    out.records.push_back({Vector(0), std::move(x)});
  }
  return out;
}

nlohmann::json diagram_to_json(const Diagram& d) {
  const auto& mgr = *d.manager;
  nlohmann::json nodes = nlohmann::json::array();
  std::vector<NodeId> ids;
  std::unordered_set<NodeId> seen;
  std::deque<NodeId> queue{d.root};
  while (!queue.empty()) {
    const NodeId id = queue.front();
    queue.pop_front();
    if (id == kFalse || id == kTrue || !seen.insert(id).second) continue;
    ids.push_back(id);
    queue.push_back(mgr.node(id).lo);
    queue.push_back(mgr.node(id).hi);
  }
  std::sort(ids.begin(), ids.end());
  for (NodeId id : ids) {
    const auto& n = mgr.node(id);
    nodes.push_back({{"id", id}, {"var", mgr.order()[static_cast<std::size_t>(n.level)]}, {"lo", n.lo}, {"hi", n.hi}});
  }
  return {{"terminals", {{"false", kFalse}, {"true", kTrue}}},
          {"root", d.root},
          {"order", mgr.order()},
          {"nodes", std::move(nodes)},
          {"node_count", ids.size()},
          {"model_count", to_string(model_count(d))}};
}

}  // namespace flowact
