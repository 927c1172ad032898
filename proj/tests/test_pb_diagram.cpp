#include "flowact/constraints.hpp"
#include "flowact/pb_diagram.hpp"

#include <doctest.h>

#include <map>
#include <numeric>
#include <random>

using namespace flowact;

namespace {

std::shared_ptr<DiagramManager> identity_manager(int n, std::size_t budget = 10'000'000) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  return std::make_shared<DiagramManager>(order, budget);
}

std::vector<bool> bits_of(unsigned mask, int n) {
  std::vector<bool> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = (mask >> i) & 1U;
  return out;
}

bool satisfies(const PbConstraint& pb, const std::vector<bool>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] ? pb.coefficients[i] : 0.0;
  return pb.comparison == Comparison::equal ? s == pb.threshold : s <= pb.threshold;
}

PbConstraint toy() { return {{2, 1, 2, 1}, Comparison::less_equal, 2}; }

// Nonnegative integer solutions of x_1 + .. + x_n = total with x_i <= cap.
long long bounded_compositions(int total, int cap, int n) {
  auto choose = [](long long a, long long b) {
    if (b < 0 || a < b) return 0LL;
    long long r = 1;
    for (long long i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
  };
  long long sum = 0;
  for (int k = 0; k <= n; ++k) {
    const int rest = total - k * (cap + 1);
    if (rest < 0) break;
    sum += (k % 2 ? -1 : 1) * choose(n, k) * choose(rest + n - 1, n - 1);
  }
  return sum;
}

Diagram bss_diagram(const std::shared_ptr<DiagramManager>& mgr, const BitEncoding& enc) {
  Diagram d = compile_pb(mgr, encode_linear(enc, {1, 1, 1, 1, 1}, Comparison::equal, 150));
  for (int i = 0; i < 5; ++i) {
    std::vector<double> unit(5, 0.0);
    unit[static_cast<std::size_t>(i)] = 1.0;
    d = conjoin(d, compile_pb(mgr, encode_linear(enc, unit, Comparison::less_equal, 35)));
  }
  return d;
}

}  // namespace

TEST_CASE("toy constraint has six models") {
  auto mgr = identity_manager(4);
  const Diagram d = compile_pb(mgr, toy());
  CHECK(to_string(model_count(d)) == "6");
  int brute = 0;
  for (unsigned m = 0; m < 16; ++m) {
    const auto x = bits_of(m, 4);
    CHECK(d.evaluate(x) == satisfies(toy(), x));
    brute += satisfies(toy(), x);
  }
  CHECK(brute == 6);
}

TEST_CASE("trivial thresholds") {
  auto mgr = identity_manager(4);
  const Diagram all = compile_pb(mgr, {{2, 1, 2, 1}, Comparison::less_equal, 6});
  CHECK(all.is_true());
  CHECK(model_count(all) == 16);
  const Diagram none = compile_pb(mgr, {{2, 1, 2, 1}, Comparison::less_equal, -0.5});
  CHECK(none.is_false());
  CHECK(model_count(none) == 0);
  CHECK_THROWS(compile_pb(mgr, {{2, 1, std::nan(""), 1}, Comparison::less_equal, 1}));
  CHECK_THROWS(compile_pb(mgr, {{2, 1}, Comparison::less_equal, 1}));
}

TEST_CASE("conjoin identities") {
  auto mgr = identity_manager(4);
  const Diagram d = compile_pb(mgr, toy());
  const Diagram top{mgr, kTrue};
  const Diagram bottom{mgr, kFalse};
  CHECK(conjoin(d, top).root == d.root);
  CHECK(conjoin(top, d).root == d.root);
  CHECK(conjoin(d, bottom).is_false());
  CHECK(conjoin(d, d).root == d.root);
}

TEST_CASE("bike allocation model count") {
  const BitEncoding enc{5, 6};
  const long long oracle = bounded_compositions(150, 35, 5);
  REQUIRE(oracle == 23751);
  for (auto order : {VariableOrder::interleaved, VariableOrder::blocked}) {
    auto mgr = std::make_shared<DiagramManager>(make_order(enc, order));
    const Diagram d = bss_diagram(mgr, enc);
    CHECK(to_string(model_count(d)) == std::to_string(oracle));
  }
}

TEST_CASE("compilation matches brute force on random constraints") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> width(1, 14);
  std::uniform_int_distribution<int> icoef(-6, 9);
  std::uniform_real_distribution<double> rcoef(-3.0, 5.0);
  for (int trial = 0; trial < 120; ++trial) {
    const int n = trial < 4 ? 20 : width(rng);
    PbConstraint pb;
    const bool integral = trial % 2 == 0;
    for (int i = 0; i < n; ++i) pb.coefficients.push_back(integral ? icoef(rng) : rcoef(rng));
    pb.comparison = integral && trial % 4 == 0 ? Comparison::equal : Comparison::less_equal;
    pb.threshold = integral ? std::uniform_int_distribution<int>(-4, 3 * n)(rng)
                            : std::uniform_real_distribution<double>(-3.0, 2.0 * n)(rng);
    auto mgr = identity_manager(n);
    const Diagram d = compile_pb(mgr, pb);
    long long brute = 0;
    bool agree = true;
    for (unsigned m = 0; m < (1U << n); ++m) {
      const auto x = bits_of(m, n);
      const bool sat = satisfies(pb, x);
      brute += sat;
      agree = agree && d.evaluate(x) == sat;
    }
    CHECK(agree);
    CHECK(to_string(model_count(d)) == std::to_string(brute));
  }
}

TEST_CASE("conjunction never gains models") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> coef(-3, 6);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 10;
    auto mgr = identity_manager(n);
    auto random_pb = [&] {
      PbConstraint pb;
      for (int i = 0; i < n; ++i) pb.coefficients.push_back(coef(rng));
      pb.threshold = std::uniform_int_distribution<int>(0, 15)(rng);
      return pb;
    };
    const PbConstraint p1 = random_pb();
    const PbConstraint p2 = random_pb();
    const Diagram a = compile_pb(mgr, p1);
    const Diagram b = compile_pb(mgr, p2);
    const Diagram c = conjoin(a, b);
    CHECK(model_count(c) <= std::min(model_count(a), model_count(b)));
    long long brute = 0;
    for (unsigned m = 0; m < (1U << n); ++m) {
      const auto x = bits_of(m, n);
      brute += satisfies(p1, x) && satisfies(p2, x);
    }
    CHECK(to_string(model_count(c)) == std::to_string(brute));
  }
}

TEST_CASE("hash-consing is canonical") {
  auto mgr = identity_manager(4);
  const NodeId a = mgr->make(3, kFalse, kTrue);
  CHECK(mgr->make(3, kFalse, kTrue) == a);
  CHECK(mgr->make(2, a, a) == a);
  const Diagram d1 = compile_pb(mgr, toy());
  const Diagram d2 = compile_pb(mgr, toy());
  CHECK(d1.root == d2.root);
  // Same models, different threshold: integer sums make 2 and 2.7 equivalent.
  const Diagram d3 = compile_pb(mgr, {{2, 1, 2, 1}, Comparison::less_equal, 2.7});
  CHECK(d3.root == d1.root);
  // Same models written as an explicit conjunction of clauses.
  const Diagram no_a = compile_pb(mgr, {{1, 0, 0, 0}, Comparison::less_equal, 0});
  const Diagram no_c = compile_pb(mgr, {{0, 0, 1, 0}, Comparison::less_equal, 0});
  const Diagram both = conjoin(no_a, no_c);
  const Diagram direct = compile_pb(mgr, {{5, 0, 5, 0}, Comparison::less_equal, 4});
  CHECK(both.root == direct.root);
}

TEST_CASE("uniform psdd") {
  SUBCASE("single variable") {
    auto mgr = identity_manager(1);
    const Diagram top{mgr, kTrue};
    const Psdd psdd(top);
    CHECK(psdd.probability({true}) == doctest::Approx(0.5));
    const NodeId x = mgr->make(0, kTrue, kTrue);
    CHECK(x == kTrue);
    const Diagram var{mgr, mgr->make(0, kFalse, kTrue)};
    CHECK(Psdd(var).hi_probability(var.root) == 1.0);
  }
  SUBCASE("toy probabilities and sampling") {
    auto mgr = identity_manager(4);
    const Psdd psdd(compile_pb(mgr, toy()));
    CHECK(psdd.probability({false, false, false, false}) == doctest::Approx(1.0 / 6.0));
    CHECK(psdd.probability({true, true, false, false}) == 0.0);
    double total = 0.0;
    for (unsigned m = 0; m < 16; ++m) total += psdd.probability(bits_of(m, 4));
    CHECK(total == doctest::Approx(1.0));
    std::mt19937_64 rng(9);
    std::map<std::vector<bool>, int> counts;
    for (int k = 0; k < 60000; ++k) ++counts[psdd.sample(rng)];
    CHECK(counts.size() == 6);
    for (const auto& [x, c] : counts) {
      CHECK(satisfies(toy(), x));
      CHECK(std::abs(c - 10000) <= 400);
    }
  }
  SUBCASE("zero models are rejected") {
    auto mgr = identity_manager(2);
    CHECK_THROWS(Psdd(Diagram{mgr, kFalse}));
  }
}

TEST_CASE("bike allocation sampling") {
  const BitEncoding enc{5, 6};
  auto mgr = std::make_shared<DiagramManager>(make_order(enc, VariableOrder::interleaved));
  const Psdd psdd(bss_diagram(mgr, enc));
  const auto cs = ConstraintSet::alloc_eq(150, 35, 5);
  const auto data = sample_actions(psdd, enc, 5000, 3);
  REQUIRE(data.size() == 5000);
  for (const auto& r : data.records) {
    CHECK(is_feasible(cs, r.x, 0.0));
    CHECK(r.x.sum() == 150.0);
  }
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) CHECK(psdd.probability(psdd.sample(rng)) == doctest::Approx(1.0 / 23751.0).epsilon(1e-12));
  CHECK(sample_actions(psdd, enc, 0, 3).empty());
  CHECK(sample_actions(psdd, enc, 100, 8).actions() == sample_actions(psdd, enc, 100, 8).actions());
}

TEST_CASE("budget and manager errors") {
  const BitEncoding enc{5, 6};
  auto small = std::make_shared<DiagramManager>(make_order(enc, VariableOrder::interleaved), 50);
  try {
    bss_diagram(small, enc);
    FAIL("expected a budget error");
  } catch (const BudgetError& e) {
    CHECK(e.peak_width > 0);
  }
  auto m1 = identity_manager(4);
  auto m2 = std::make_shared<DiagramManager>(std::vector<int>{3, 2, 1, 0});
  CHECK_THROWS_AS(conjoin(compile_pb(m1, toy()), compile_pb(m2, toy())), std::invalid_argument);
  CHECK_THROWS(DiagramManager(std::vector<int>{0, 0, 1}));
}

TEST_CASE("diagram json") {
  auto mgr = identity_manager(4);
  const Diagram d = compile_pb(mgr, toy());
  const auto j = diagram_to_json(d);
  CHECK(j.at("model_count") == "6");
  CHECK(j.at("node_count") == d.node_count());
  CHECK(j.at("nodes").size() == d.node_count());
  for (const auto& n : j.at("nodes")) {
    CHECK(n.contains("id"));
    CHECK(n.contains("var"));
    CHECK(n.at("lo") != n.at("hi"));
  }
}
