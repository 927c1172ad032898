#include "flowact/flow.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

using namespace flowact;

namespace {

FlowConfig small_config(int layers, bool identity, std::uint64_t seed = 1) {
  FlowConfig cfg;
  cfg.layers = layers;
  cfg.hidden = {16, 16};
  cfg.identity_init = identity;
  cfg.seed = seed;
  return cfg;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

void set_output_bias(Mlp& net, double value) {
  net.bias(net.num_layers() - 1).value.setConstant(value);
}

std::uint64_t checksum(const FlowModel& fm) {
  const auto p = fm.parameters();
  return parameter_checksum(p);
}

// Mollified box density without the 1/2 normalizer, from erfc.
double box_density(double x, double sigma) {
  const double s = sigma * std::numbers::sqrt2;
  return 0.5 * std::erfc(-(1.0 - x) / s) - 0.5 * std::erfc(-(-1.0 - x) / s);
}

// -E[log p(x)] for x drawn from the normalized density p / 2, per dimension.
double prior_cross_entropy(double sigma) {
  const double lo = -1.0 - 10.0 * sigma;
  const double hi = 1.0 + 10.0 * sigma;
  const int n = 400000;
  const double h = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double p = box_density(x, sigma);
    const double f = p > 0.0 ? -0.5 * p * std::log(p) : 0.0;
    sum += (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * f;
  }
  return sum * h / 3.0;
}

SampleDataset prior_samples(int dim, std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> g(0.0, sigma);
  SampleDataset d;
  for (std::size_t k = 0; k < n; ++k) {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) x(i) = u(rng) + g(rng);
    d.records.push_back({Vector(0), x});
  }
  return d;
}

SampleDataset random_conditioned(int dim, int cond, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SampleDataset d;
  for (std::size_t k = 0; k < n; ++k) {
    Vector x(dim), y(cond);
    for (int i = 0; i < dim; ++i) x(i) = 0.6 * u(rng);
    for (int i = 0; i < cond; ++i) y(i) = u(rng);
    d.records.push_back({y, x});
  }
  return d;
}

Matrix tape_jacobian(const FlowModel& fm, const Vector& z, const Vector& y) {
  const int d = fm.action_dim();
  Matrix jac(d, d);
  for (int j = 0; j < d; ++j) {
    Tape tape;
    Var zv = tape.variable(Matrix(z.transpose()));
    Var x = fm.backward_map(tape, zv, Matrix(y.transpose()));
    Matrix seed = Matrix::Zero(1, d);
    seed(0, j) = 1.0;
    tape.backward(x, seed);
    jac.row(j) = tape.grad(zv);
  }
  return jac;
}

}  // namespace

TEST_CASE("mask schedule and construction") {
  const FlowModel fm(3, 0, small_config(4, true));
  CHECK(fm.layer(0).pass == std::vector<int>{0, 1});
  CHECK(fm.layer(0).transform == std::vector<int>{2});
  CHECK(fm.layer(1).pass == std::vector<int>{0, 2});
  CHECK(fm.layer(1).transform == std::vector<int>{1});
  CHECK(fm.layer(2).pass == std::vector<int>{1, 2});
  CHECK(fm.layer(2).transform == std::vector<int>{0});
  CHECK(fm.layer(0).scale_net.input_dim() == 2);
  CHECK(fm.layer(0).scale_net.output_dim() == 1);

  const FlowModel even(4, 0, small_config(2, true));
  CHECK(even.layer(0).pass == std::vector<int>{0, 1});
  CHECK(even.layer(1).pass == std::vector<int>{2, 3});

  // Every pair of dims is split by at least one layer.
  const FlowModel five(5, 0, small_config(6, true));
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) {
      bool split = false;
      for (int i = 0; i < five.num_layers(); ++i) {
        const auto& p = five.layer(i).pass;
        split = split || (std::count(p.begin(), p.end(), a) != std::count(p.begin(), p.end(), b));
      }
      CHECK(split);
    }
  }
  CHECK_THROWS(FlowModel(1, 0, small_config(2, true)));
}

TEST_CASE("identity-initialized flow") {
  const FlowModel fm(3, 2, small_config(6, true));
  const Matrix z = testutil::random_matrix(50, 3, 3, -1, 1);
  const Matrix y = testutil::random_matrix(50, 2, 4, -1, 1);
  CHECK(fm.backward_map(z, y) == z);
  const auto [back, logdet] = fm.forward_map_logdet(z, y);
  CHECK(back == z);
  CHECK(logdet.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fm.input_gradient(vec({0.1, -0.2, 0.3}), vec({0.5, 0.5})) == Matrix::Identity(3, 3));
}

TEST_CASE("single coupling layer by hand") {
  SUBCASE("constant shift") {
    FlowModel fm(2, 0, small_config(1, true));
    set_output_bias(fm.layer(0).shift_net, 1.0);
    const Vector x = fm.backward_map(vec({0.5, 0.5}), Vector(0));
    CHECK(x(0) == doctest::Approx(0.5));
    CHECK(x(1) == doctest::Approx(-0.5));
  }
  SUBCASE("constant scale") {
    FlowModel fm(2, 0, small_config(1, true));
    set_output_bias(fm.layer(0).scale_net, std::log(2.0));
    const Vector x = fm.backward_map(vec({0.5, 1.0}), Vector(0));
    CHECK(x(0) == doctest::Approx(0.5));
    CHECK(x(1) == doctest::Approx(0.5));
    const auto [z, logdet] = fm.forward_map_logdet(Matrix(x.transpose()), Matrix(1, 0));
    CHECK(z(0, 1) == doctest::Approx(1.0));
    CHECK(logdet(0) == doctest::Approx(std::log(2.0)));
    const Matrix jac = fm.input_gradient(vec({0.3, -0.7}), Vector(0));
    CHECK(jac(0, 0) == doctest::Approx(1.0));
    CHECK(jac(1, 1) == doctest::Approx(0.5));
    CHECK(jac(0, 1) == 0.0);
    CHECK(jac(1, 0) == 0.0);
  }
  SUBCASE("scale clamp") {
    FlowModel fm(2, 0, small_config(1, true));
    set_output_bias(fm.layer(0).scale_net, 20.0);
    const Vector x = fm.backward_map(vec({0.5, 1.0}), Vector(0));
    CHECK(x(1) == doctest::Approx(std::exp(-kScaleClamp)));
  }
}

TEST_CASE("random flow invertibility") {
  const FlowModel fm(3, 2, small_config(6, false, 7));
  const Matrix z = testutil::random_matrix(10000, 3, 11, -1, 1);
  const Matrix y = testutil::random_matrix(10000, 2, 12, -1, 1);
  const Matrix x = fm.backward_map(z, y);
  CHECK((x - z).cwiseAbs().maxCoeff() > 1e-3);
  const auto [z_back, logdet] = fm.forward_map_logdet(x, y);
  CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-6);
  const auto [z2, ld2] = fm.forward_map_logdet(z, y);
  CHECK((fm.backward_map(z2, y) - z).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("log-determinant matches the numerical Jacobian") {
  const FlowModel fm(3, 1, small_config(6, false, 5));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int k = 0; k < 20; ++k) {
    const Vector x = vec({u(rng), u(rng), u(rng)});
    const Vector y = vec({u(rng)});
    const auto [z, logdet] = fm.forward_map_logdet(Matrix(x.transpose()), Matrix(y.transpose()));
    Matrix jac(3, 3);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Vector xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const Matrix zp = fm.forward_map_logdet(Matrix(xp.transpose()), Matrix(y.transpose())).first;
      const Matrix zm = fm.forward_map_logdet(Matrix(xm.transpose()), Matrix(y.transpose())).first;
      jac.col(j) = (zp - zm).row(0).transpose() / (2 * h);
    }
    const double numeric = std::log(std::abs(jac.determinant()));
    CHECK(std::abs(logdet(0) - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric)));
  }
}

TEST_CASE("input gradient against two independent routes") {
  const FlowModel fm(4, 2, small_config(6, false, 9));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    const Vector z = vec({u(rng), u(rng), u(rng), u(rng)});
    const Vector y = vec({u(rng), u(rng)});
    const Matrix analytic = fm.input_gradient(z, y);
    Matrix fd(4, 4);
    const double h = 1e-6;
    for (int j = 0; j < 4; ++j) {
      Vector zp = z, zm = z;
      zp(j) += h;
      zm(j) -= h;
      fd.col(j) = (fm.backward_map(zp, y) - fm.backward_map(zm, y)) / (2 * h);
    }
    CHECK(testutil::rel_err(analytic, fd) < 1e-4);
    CHECK(testutil::rel_err(analytic, tape_jacobian(fm, z, y)) < 1e-8);
  }
  SUBCASE("clamped scales") {
    FlowModel clamped(2, 0, small_config(2, false, 4));
    clamped.layer(0).scale_net.bias(clamped.layer(0).scale_net.num_layers() - 1).value.setConstant(30.0);
    const Vector z = vec({0.2, -0.4});
    CHECK(testutil::rel_err(clamped.input_gradient(z, Vector(0)), tape_jacobian(clamped, z, Vector(0))) < 1e-8);
  }
}

TEST_CASE("accuracy and recall") {
  const FlowModel id2(2, 0, small_config(6, true));
  const double expected = std::numbers::pi * 0.05 / 4.0;
  const auto eval = evaluate_accuracy(id2, ConstraintSet::ball(0.05), Vector(0), 100000, 0);
  CHECK(eval.samples == 100000);
  CHECK(std::abs(eval.accuracy() - expected) < 3.0 * std::sqrt(expected * (1 - expected) / 1e5));
  CHECK(eval.invalid_distances.size() == eval.samples - eval.valid);
  CHECK(eval.mean_cv_of_invalid > 0.0);
  CHECK(accuracy(id2, ConstraintSet::box(Vector::Constant(2, -1), Vector::Constant(2, 1)), Vector(0), 1000) == 1.0);

  // Integer outputs are judged after rounding but measured from the raw
  // output, so distances are not confined to lattice norms.
  const auto alloc = ConstraintSet::alloc_eq(150, 35, 5);
  const FlowModel id5(5, 0, small_config(6, true), ActionScaling::for_set(alloc));
  const auto bss = evaluate_accuracy(id5, alloc, Vector(0), 5000, 1);
  REQUIRE(!bss.invalid_distances.empty());
  const auto fractional = std::count_if(bss.invalid_distances.begin(), bss.invalid_distances.end(), [](double d) {
    return std::abs(d * d - std::round(d * d)) > 1e-6;
  });
  CHECK(fractional > 0);
  const auto ones = std::count_if(bss.invalid_distances.begin(), bss.invalid_distances.end(),
                                  [](double d) { return d < 1.0 + 1e-9; });
  CHECK(bss.fraction_within(1.0) == doctest::Approx(static_cast<double>(ones) / bss.invalid_distances.size()));

  FlowEvaluation edge;
  edge.invalid_distances = {0.5, 1.0, 1.0 + 1e-12, 1.5};
  CHECK(edge.fraction_within(1.0) == 0.75);
  CHECK(FlowEvaluation{}.fraction_within(1.0) == 1.0);

  SampleDataset ref;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int k = 0; k < 500; ++k) ref.records.push_back({Vector(0), vec({u(rng), u(rng)})});
  CHECK(recall(id2, ref) == 1.0);

  FlowModel away(2, 0, small_config(1, true));
  set_output_bias(away.layer(0).shift_net, 10.0);
  CHECK(recall(away, ref) == 0.0);
  CHECK_THROWS(recall(id2, SampleDataset{}));
}

TEST_CASE("action scaling") {
  const auto alloc = ConstraintSet::alloc_eq(150, 35, 5);
  const auto box = ActionScaling::for_box(alloc);
  CHECK(box.offset == Vector::Constant(5, 17.5));
  CHECK(box.scale == Vector::Constant(5, 18.0));
  CHECK(box.rotation.size() == 0);

  const auto s = ActionScaling::for_set(alloc);
  const Matrix x = testutil::random_matrix(4, 5, 1, -1, 1);
  CHECK((s.to_flow(s.to_env(x)) - x).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((s.rotation.transpose() * s.rotation - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.rotation.col(0) - Vector::Constant(5, 1.0 / std::sqrt(5.0))).cwiseAbs().maxCoeff() < 1e-12);
  // The first flow axis moves the total by exactly +-0.5; the others keep it.
  for (int j = 0; j < 5; ++j) {
    for (double sign : {-1.0, 1.0}) {
      Matrix e = Matrix::Zero(1, 5);
      e(0, j) = sign;
      const double total = s.to_env(e).sum();
      CHECK(total == doctest::Approx(j == 0 ? 150.0 + 0.5 * sign : 150.0).epsilon(1e-12));
    }
  }
  // Every vertex of the allocation polytope, e.g. a permutation of
  // (35, 35, 35, 35, 10), lands inside the flow's range.
  for (int low = 0; low < 5; ++low) {
    Matrix v = Matrix::Constant(1, 5, 35.0);
    v(0, low) = 10.0;
    CHECK(s.to_flow(v).cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK(s.jacobian().isApprox(s.rotation * s.scale.asDiagonal()));

  const auto ball = ActionScaling::for_set(ConstraintSet::ball(0.05));
  CHECK(ball.offset == Vector::Zero(2));
  CHECK(ball.scale == Vector::Ones(2));
  // NLL of the scaled flow equals the unit flow's NLL plus sum log scale.
  const FlowModel unit(5, 0, small_config(2, false, 3));
  FlowModel scaled(5, 0, small_config(2, false, 3), s);
  const Matrix xf = testutil::random_matrix(20, 5, 2, -0.5, 0.5);
  const Vector lp_unit = unit.log_prob(xf, Matrix(1, 0));
  const Vector lp_scaled = scaled.log_prob(s.to_env(xf), Matrix(1, 0));
  CHECK(((lp_unit - lp_scaled).array() - s.log_scale_sum()).abs().maxCoeff() < 1e-10);
}

TEST_CASE("training") {
  const auto data = random_conditioned(2, 1, 2000, 8);
  FlowTrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 500;
  tc.learning_rate = 1e-3;
  tc.seed = 3;

  SUBCASE("likelihood improves") {
    FlowModel fm(2, 1, small_config(4, true));
    const auto log = train(fm, data, tc);
    REQUIRE(log.epoch_nll.size() == 15);
    CHECK(log.initial_nll == doctest::Approx(dataset_nll(FlowModel(2, 1, small_config(4, true)), data)));
    CHECK(dataset_nll(fm, data) < log.initial_nll);
    CHECK(log.epoch_nll.back() < log.epoch_nll.front());
  }
  SUBCASE("zero epochs leave the model untouched") {
    FlowModel fm(2, 1, small_config(4, true));
    const auto before = checksum(fm);
    tc.epochs = 0;
    const auto log = train(fm, data, tc);
    CHECK(log.epoch_nll.empty());
    CHECK(checksum(fm) == before);
  }
  SUBCASE("identical seeds give identical parameters") {
    FlowModel a(2, 1, small_config(4, true));
    FlowModel b(2, 1, small_config(4, true));
    train(a, data, tc);
    train(b, data, tc);
    CHECK(checksum(a) == checksum(b));
    FlowModel c(2, 1, small_config(4, true));
    tc.seed = 4;
    train(c, data, tc);
    CHECK(checksum(c) != checksum(a));
  }
  SUBCASE("bad inputs") {
    FlowModel fm(2, 1, small_config(4, true));
    CHECK_THROWS(train(fm, SampleDataset{}, tc));
    CHECK_THROWS_AS(train(fm, random_conditioned(3, 1, 10, 1), tc), ShapeError);
    fm.layer(0).scale_net.weight(0).value(0, 0) = std::nan("");
    fm.layer(0).scale_net.weight(fm.layer(0).scale_net.num_layers() - 1).value.setConstant(1.0);
    try {
      train(fm, data, tc);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
}

TEST_CASE("training on prior samples stays at the prior cross-entropy") {
  const double sigma = 0.01;
  const auto data = prior_samples(2, 5000, sigma, 21);
  const double oracle = 2.0 * prior_cross_entropy(sigma);
  FlowModel fm(2, 0, small_config(4, true));
  const Vector per_sample = -fm.log_prob(data.actions(), Matrix(1, 0));
  const double mean = per_sample.mean();
  const double se = std::sqrt((per_sample.array() - mean).square().sum() / (per_sample.size() - 1)) /
                    std::sqrt(static_cast<double>(per_sample.size()));
  CHECK(std::abs(mean - oracle) < 4.0 * se);
  FlowTrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 1000;
  tc.learning_rate = 1e-4;
  tc.seed = 1;
  train(fm, data, tc);
  CHECK(std::abs(dataset_nll(fm, data) - oracle) < 4.0 * se + 0.02);
}

TEST_CASE("histogram") {
  const auto h = make_histogram({0.05, 0.15, 0.17, 5.0}, 0.1, 10);
  CHECK(h.counts.size() == 10);
  CHECK(h.counts[0] == 1);
  CHECK(h.counts[1] == 2);
  CHECK(h.counts[9] == 1);
  CHECK(h.total() == 4);
  CHECK(h.fraction_below(0.1) == doctest::Approx(0.25));
}

TEST_CASE("checkpoint round trip") {
  const FlowModel fm(3, 2, small_config(6, false, 13), ActionScaling{vec({1, 2, 3}), vec({2, 2, 4})});
  const auto path = (std::filesystem::temp_directory_path() / "flowact_flow.json").string();
  save_flow(fm, path);
  const FlowModel back = load_flow(path);
  std::filesystem::remove(path);
  CHECK(back.action_dim() == 3);
  CHECK(back.cond_dim() == 2);
  CHECK(back.num_layers() == 6);
  CHECK(checksum(back) == checksum(fm));
  const Matrix z = testutil::random_matrix(30, 3, 1, -1, 1);
  const Matrix y = testutil::random_matrix(30, 2, 2, -1, 1);
  CHECK(back.backward_map(z, y) == fm.backward_map(z, y));
  const auto j = flow_to_json(fm);
  CHECK(j.at("manifest").at("pass_dims").size() == 6);
  auto bad = j;
  bad["manifest"]["sigma"] = -1.0;
  CHECK_THROWS(flow_from_json(bad));
}
