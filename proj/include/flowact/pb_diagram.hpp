#pragma once

#include "flowact/samplers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace flowact {

/// Exact model counts; wide enough for diagrams over up to 126 variables.
using ModelCount = unsigned __int128;

std::string to_string(ModelCount c);

struct BudgetError : std::runtime_error {
  BudgetError(const std::string& what, std::size_t peak_width)
      : std::runtime_error(what + " (peak width " + std::to_string(peak_width) + ")"), peak_width(peak_width) {}
  std::size_t peak_width;
};

/// Integer variables in [0, 2^bits - 1], each written as bits weighted
/// 2^(bits-1) .. 2^0. Boolean variable `var * bits + j` holds bit j (MSB first).
struct BitEncoding {
  int variables = 0;
  int bits = 0;

  int boolean_count() const { return variables * bits; }
  int boolean_index(int var, int bit) const { return var * bits + bit; }
  double bit_weight(int bit) const { return static_cast<double>(1L << (bits - 1 - bit)); }
  long max_value() const { return (1L << bits) - 1; }
  std::vector<long> decode(const std::vector<bool>& assignment) const;
};

enum class Comparison { less_equal, equal };

/// sum_k coefficients[k] * b_k  (<= | =)  threshold over Boolean b.
struct PbConstraint {
  std::vector<double> coefficients;
  Comparison comparison = Comparison::less_equal;
  double threshold = 0.0;
};

/// Lifts sum_i c_i a_i (op) threshold over encoded integers to a PB constraint.
PbConstraint encode_linear(const BitEncoding& enc, const std::vector<double>& coefficients, Comparison cmp,
                           double threshold);

enum class VariableOrder { interleaved, blocked };

/// Level -> Boolean variable. Interleaved puts every variable's MSB first,
/// then every variable's next bit, and so on.
std::vector<int> make_order(const BitEncoding& enc, VariableOrder order);

using NodeId = std::uint32_t;
inline constexpr NodeId kFalse = 0;
inline constexpr NodeId kTrue = 1;

/// Unique table for reduced ordered decision diagrams over a fixed order.
///
/// Each decision node tests the variable at its level; lo/hi are the 0/1
/// children. Nodes are hash-consed, so equal functions share one NodeId.
class DiagramManager {
 public:
  explicit DiagramManager(std::vector<int> order, std::size_t node_budget = 10'000'000);

  int variable_count() const { return static_cast<int>(order_.size()); }
  const std::vector<int>& order() const { return order_; }
  int level_of_variable(int var) const { return level_of_var_[static_cast<std::size_t>(var)]; }

  struct Node {
    int level;
    NodeId lo;
    NodeId hi;
  };
  const Node& node(NodeId id) const { return nodes_[id]; }
  /// Level of a node; terminals sit at variable_count().
  int level(NodeId id) const { return nodes_[id].level; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t peak_width() const;

  NodeId make(int level, NodeId lo, NodeId hi);
  NodeId conjoin(NodeId a, NodeId b);

 private:
  struct Key {
    int level;
    NodeId lo;
    NodeId hi;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::size_t h = static_cast<std::size_t>(k.level) * 0x9E3779B97F4A7C15ULL;
      h ^= k.lo + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      h ^= k.hi + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
      return h;
    }
  };

  std::vector<int> order_;
  std::vector<int> level_of_var_;
  std::size_t budget_;
  std::vector<Node> nodes_;
  std::unordered_map<Key, NodeId, KeyHash> unique_;
  std::vector<std::size_t> width_;
};

/// A root in a shared manager.
struct Diagram {
  std::shared_ptr<DiagramManager> manager;
  NodeId root = kFalse;

  bool is_true() const { return root == kTrue; }
  bool is_false() const { return root == kFalse; }
  /// Decision nodes reachable from the root.
  std::size_t node_count() const;
  bool evaluate(const std::vector<bool>& assignment) const;
};

/// Compiles a PB constraint by recursion on partial sums; for inequalities,
/// states whose remaining threshold falls in a known equivalence interval
/// reuse that node.
Diagram compile_pb(const std::shared_ptr<DiagramManager>& manager, const PbConstraint& pb);

/// models(result) = models(a) and models(b). Throws if the diagrams do not
/// share a manager (and therefore a variable order).
Diagram conjoin(const Diagram& a, const Diagram& b);

/// Exact count of satisfying assignments over all manager variables.
ModelCount model_count(const Diagram& d);

/// Decision diagram with branch probabilities set so that every model is
/// equally likely.
class Psdd {
 public:
  explicit Psdd(Diagram d);

  const Diagram& diagram() const { return diagram_; }
  ModelCount model_count() const { return total_; }
  /// Probability of taking the hi branch at a decision node.
  double hi_probability(NodeId id) const;
  double probability(const std::vector<bool>& assignment) const;
  std::vector<bool> sample(std::mt19937_64& rng) const;

 private:
  Diagram diagram_;
  ModelCount total_ = 0;
  std::unordered_map<NodeId, double> hi_prob_;
};

/// Draws `count` integer actions from the PSDD and decodes them.
SampleDataset sample_actions(const Psdd& psdd, const BitEncoding& enc, std::size_t count, std::uint64_t seed);

/// Node list {"nodes": [{"id", "var", "lo", "hi"}], "root", ...} for a diagram.
nlohmann::json diagram_to_json(const Diagram& d);

}  // namespace flowact
