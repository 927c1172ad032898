// Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. `acceptance 1,2,7` runs a subset.

#include "flowact/cli.hpp"
#include "flowact/config.hpp"
#include "flowact/env.hpp"
#include "flowact/flow.hpp"
#include "flowact/pb_diagram.hpp"
#include "flowact/samplers.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace flowact;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, as stated by each criterion.
constexpr double kBssCount = 23751;
constexpr double kBssSeconds = 10.0;
constexpr double kRejectionTarget = std::numbers::pi * 0.05 / 4.0;
constexpr double kRejectionBand = 0.005;
constexpr std::size_t kRejectionProposals = 1'000'000;
constexpr double kSamplerSeconds = 60.0;
constexpr std::size_t kHmcSamples = 100'000;
constexpr double kChiSquareMinP = 0.01;
constexpr double kMarginalMaxTv = 0.02;
constexpr double kUniformitySeconds = 60.0;
constexpr double kRoundTripMax = 1e-6;
constexpr double kLogDetRel = 1e-4;
constexpr double kJacobianFdRel = 1e-4;
constexpr double kJacobianTapeRel = 1e-8;
constexpr double kFlowPropertySeconds = 120.0;
constexpr double kPointReachAccuracy = 0.99;
constexpr double kPointReachRecall = 0.95;
constexpr int kMaxEpochs = 5000;
constexpr double kPointReachSeconds = 30 * 60.0;
constexpr double kBssAccuracy = 0.75;
constexpr double kBssRecall = 0.70;
constexpr double kBssWithinOne = 0.80;
constexpr double kBssSeconds60 = 60 * 60.0;
constexpr double kPriorCenterTol = 1e-6;
constexpr double kPriorEdgeTol = 1e-3;
constexpr double kGapFraction = 0.5;
constexpr double kViolationRatio = 5.0;
constexpr double kRlSecondsPerRun = 20 * 60.0;
constexpr int kRlSeeds = 3;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "flowact");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Runs a CLI step and throws with its stderr on a nonzero exit.
void cli_step(const std::vector<std::string>& args) {
  const auto r = cli(args);
  if (r.code != 0) throw std::runtime_error(args.front() + " exited " + std::to_string(r.code) + ": " + r.err);
}

fs::path fresh_dir(const fs::path& root, const std::string& name) {
  const fs::path p = root / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_config(const fs::path& dir, const nlohmann::json& j) {
  const auto path = (dir / "config.json").string();
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string without_wallclock(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Independent oracles.

/// Number of (a_1..a_n) with 0 <= a_i <= cap and sum = total, by inclusion-exclusion.
long long bounded_compositions(long long total, long long cap, long long n) {
  auto choose = [](long long a, long long b) -> long long {
    if (b < 0 || a < b) return 0;
    long long r = 1;
    for (long long i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
  };
  long long sum = 0;
  for (long long k = 0; k <= n; ++k) {
    const long long rest = total - k * (cap + 1);
    if (rest < 0) break;
    sum += (k % 2 ? -1 : 1) * choose(n, k) * choose(rest + n - 1, n - 1);
  }
  return sum;
}

/// Mass of the uniform disc of radius r on x <= t.
double semicircle_cdf(double t, double r) {
  const double u = std::clamp(t / r, -1.0, 1.0);
  return 0.5 + (u * std::sqrt(1.0 - u * u) + std::asin(u)) / std::numbers::pi;
}

// ---------------------------------------------------------------------------
// Shared configurations.

nlohmann::json pointreach_flow_config() {
  return {{"seed", 0},
          {"env", {{"name", "pointreach"}}},
          {"sampler", {{"method", "hmc"}, {"count", 100000}}},
          {"flow",
           {{"layers", 6},
            {"hidden", {64, 64}},
            {"epochs", 40},
            {"batch_size", 1000},
            {"learning_rate", 5e-4},
            {"eval_samples", 100000},
            {"recall_samples", 10000}}}};
}

nlohmann::json bikeshare_flow_config() {
  return {{"seed", 0},
          {"env", {{"name", "bikeshare"}}},
          {"sampler", {{"method", "psdd"}, {"count", 100000}}},
          {"flow",
           {{"layers", 6},
            {"hidden", {64, 64}},
            {"epochs", 450},
            {"batch_size", 1000},
            {"learning_rate", 1e-4},
            {"eval_samples", 100000},
            {"recall_samples", 10000}}}};
}

nlohmann::json pointreach_rl_config(std::uint64_t seed, const std::string& baseline, const std::string& flow) {
  nlohmann::json j = pointreach_flow_config();
  j["seed"] = seed;
  j["checkpoint"] = flow;
  j["rl"] = {{"episodes", 400},
             {"actor_hidden", {64, 64}},
             {"critic_hidden", {64, 64}},
             {"baseline", baseline}};
  return j;
}

struct Context {
  fs::path root;
  std::optional<fs::path> pointreach_run;

  /// Full sample -> train-flow -> eval-flow pipeline in `dir`.
  static void flow_pipeline(const fs::path& dir, const nlohmann::json& config) {
    const auto cfg = write_config(dir, config);
    cli_step({"sample", "--config", cfg, "--out", dir.string()});
    cli_step({"train-flow", "--config", cfg, "--out", dir.string()});
    cli_step({"eval-flow", "--config", cfg, "--out", dir.string()});
  }

  const fs::path& pointreach() {
    if (!pointreach_run) {
      const auto dir = fresh_dir(root, "c5_pointreach");
      flow_pipeline(dir, pointreach_flow_config());
      pointreach_run = dir;
    }
    return *pointreach_run;
  }
};

// ---------------------------------------------------------------------------
// Criteria.

Outcome psdd_exactness(Context&) {
  const auto t0 = Clock::now();
  const PbSettings pb = pb_for_env(env_spec_from_json({{"name", "bikeshare"}}));
  const Diagram d = compile_settings(pb);
  const std::string count = to_string(model_count(d));
  const double secs = seconds_since(t0);
  const long long oracle = bounded_compositions(150, 35, 5);
  const bool ok = count == fmt("%.0f", kBssCount) && oracle == static_cast<long long>(kBssCount) && secs < kBssSeconds;
  return {ok, "model_count=" + count + " inclusion_exclusion=" + std::to_string(oracle) + fmt(" (%.2f s)", secs)};
}

Outcome sampler_efficiency(Context&) {
  const auto t0 = Clock::now();
  const auto ball = ConstraintSet::ball(0.05, 2);
  // Enough accepted samples that the proposal count passes 10^6.
  RejectionStats st;
  rejection_sample(ball, Vector(), static_cast<std::size_t>(1.02 * kRejectionTarget * kRejectionProposals), 0, &st);
  const double rate = static_cast<double>(st.accepted) / static_cast<double>(st.proposals);

  HmcConfig hc;
  hc.seed = 0;
  const auto hmc = hmc_sample(ball, Vector(), kHmcSamples, hc);
  std::size_t valid = 0;
  for (const auto& r : hmc.records) valid += is_feasible(ball, r.x);
  const double secs = seconds_since(t0);
  const bool ok = st.proposals >= kRejectionProposals && std::abs(rate - kRejectionTarget) <= kRejectionBand &&
                  valid == hmc.size() && hmc.size() == kHmcSamples && secs < kSamplerSeconds;
  return {ok, fmt("rejection %.4f%% over %zu proposals (target %.4f%% +- %.1f%%), hmc valid %zu/%zu (%.1f s)",
                  100 * rate, st.proposals, 100 * kRejectionTarget, 100 * kRejectionBand, valid, hmc.size(), secs)};
}

Outcome hmc_uniformity(Context&) {
  const auto t0 = Clock::now();
  const double r2 = 0.05;
  const double r = std::sqrt(r2);
  HmcConfig hc;
  hc.seed = 0;
  const auto data = hmc_sample(ConstraintSet::ball(r2, 2), Vector(), kHmcSamples, hc);

  // 5 equal-area rings x 10 sectors, equal probability under uniformity.
  constexpr int rings = 5, sectors = 10, bins = rings * sectors;
  std::vector<double> counts(bins, 0.0);
  constexpr int marginal_bins = 20;
  std::vector<double> mx(marginal_bins, 0.0), my(marginal_bins, 0.0);
  auto marginal_bin = [&](double v) {
    return std::clamp(static_cast<int>(std::floor((v + r) / (2 * r) * marginal_bins)), 0, marginal_bins - 1);
  };
  for (const auto& rec : data.records) {
    const double x = rec.x(0), y = rec.x(1);
    const int ring = std::min(rings - 1, static_cast<int>((x * x + y * y) / r2 * rings));
    const double angle = std::atan2(y, x) + std::numbers::pi;
    const int sector = std::min(sectors - 1, static_cast<int>(angle / (2 * std::numbers::pi) * sectors));
    counts[static_cast<std::size_t>(ring * sectors + sector)] += 1;
    mx[static_cast<std::size_t>(marginal_bin(x))] += 1;
    my[static_cast<std::size_t>(marginal_bin(y))] += 1;
  }
  const double n = static_cast<double>(data.size());
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - n / bins) * (c - n / bins) / (n / bins);
  const double p = boost::math::gamma_q((bins - 1) / 2.0, chi2 / 2.0);

  auto tv = [&](const std::vector<double>& m) {
    double acc = 0.0;
    for (int b = 0; b < marginal_bins; ++b) {
      const double lo = -r + 2 * r * b / marginal_bins, hi = -r + 2 * r * (b + 1) / marginal_bins;
      acc += std::abs(m[static_cast<std::size_t>(b)] / n - (semicircle_cdf(hi, r) - semicircle_cdf(lo, r)));
    }
    return 0.5 * acc;
  };
  const double tv_x = tv(mx), tv_y = tv(my);
  const double secs = seconds_since(t0);
  const bool ok = p > kChiSquareMinP && tv_x <= kMarginalMaxTv && tv_y <= kMarginalMaxTv && secs < kUniformitySeconds;
  return {ok, fmt("chi2=%.1f df=%d p=%.3f (> %.2f), marginal TV x=%.4f y=%.4f (<= %.2f) (%.1f s)", chi2, bins - 1, p,
                  kChiSquareMinP, tv_x, tv_y, kMarginalMaxTv, secs)};
}

Outcome flow_properties(Context&) {
  const auto t0 = Clock::now();
  FlowConfig fc;
  fc.layers = 6;
  fc.hidden = {32, 32};
  fc.identity_init = false;
  fc.seed = 11;
  const int dim = 3, cond = 2;
  const FlowModel fm(dim, cond, fc);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };

  constexpr int n = 10000;
  const Matrix z = random_matrix(n, dim);
  const Matrix y = random_matrix(n, cond);
  const Matrix x = fm.backward_map(z, y);
  const double round_zx = (fm.forward_map_logdet(x, y).first - z).cwiseAbs().maxCoeff();
  const double round_xz = (fm.backward_map(fm.forward_map_logdet(z, y).first, y) - z).cwiseAbs().maxCoeff();

  double logdet_err = 0.0, fd_err = 0.0, tape_err = 0.0;
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const Vector zi = z.row(i).transpose();
    const Vector yi = y.row(i).transpose();
    const Vector xi = x.row(i).transpose();
    const Matrix yrow = yi.transpose();

    // Numerical Jacobian of the forward map at xi.
    Matrix jf(dim, dim);
    for (int c = 0; c < dim; ++c) {
      Matrix up = xi.transpose(), down = xi.transpose();
      up(0, c) += h;
      down(0, c) -= h;
      jf.col(c) = ((fm.forward_map_logdet(up, yrow).first - fm.forward_map_logdet(down, yrow).first) / (2 * h)).transpose();
    }
    const double analytic = fm.forward_map_logdet(xi.transpose(), yrow).second(0);
    const double numeric = std::log(std::abs(jf.determinant()));
    logdet_err = std::max(logdet_err, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));

    const Matrix jac = fm.input_gradient(zi, yi);
    Matrix jb(dim, dim);
    for (int c = 0; c < dim; ++c) {
      Vector up = zi, down = zi;
      up(c) += h;
      down(c) -= h;
      jb.col(c) = (fm.backward_map(up, yi) - fm.backward_map(down, yi)) / (2 * h);
    }
    const double scale = std::max(jb.cwiseAbs().maxCoeff(), 1e-12);
    fd_err = std::max(fd_err, (jac - jb).cwiseAbs().maxCoeff() / scale);

    Matrix jt(dim, dim);
    for (int row = 0; row < dim; ++row) {
      Tape tape;
      Var zv = tape.variable(Matrix(zi.transpose()));
      Var out = fm.backward_map(tape, zv, yrow);
      Matrix seed = Matrix::Zero(1, dim);
      seed(0, row) = 1.0;
      tape.backward(out, seed);
      jt.row(row) = tape.grad(zv);
    }
    tape_err = std::max(tape_err, (jac - jt).cwiseAbs().maxCoeff() / std::max(jt.cwiseAbs().maxCoeff(), 1e-12));
  }
  const double secs = seconds_since(t0);
  const bool ok = round_zx < kRoundTripMax && round_xz < kRoundTripMax && logdet_err < kLogDetRel &&
                  fd_err < kJacobianFdRel && tape_err < kJacobianTapeRel && secs < kFlowPropertySeconds;
  return {ok, fmt("round trip %.2e/%.2e (< %.0e), logdet rel %.2e (< %.0e), jacobian vs FD %.2e (< %.0e), vs tape "
                  "%.2e (< %.0e) (%.1f s)",
                  round_zx, round_xz, kRoundTripMax, logdet_err, kLogDetRel, fd_err, kJacobianFdRel, tape_err,
                  kJacobianTapeRel, secs)};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

Outcome pointreach_flow(Context& ctx) {
  const auto t0 = Clock::now();
  const auto& dir = ctx.pointreach();
  const double secs = seconds_since(t0);
  const auto eval = read_json(dir / "eval.json");
  const double acc = eval.at("accuracy"), rec = eval.at("recall");
  const std::size_t samples = eval.at("samples");
  const int epochs = pointreach_flow_config()["flow"]["epochs"];
  const std::size_t train_size = load_dataset((dir / "dataset.csv").string()).size();
  const bool ok = acc >= kPointReachAccuracy && rec >= kPointReachRecall && samples == 100000 &&
                  train_size == 100000 && epochs <= kMaxEpochs && secs <= kPointReachSeconds;
  return {ok, fmt("accuracy=%.5f (>= %.2f) recall=%.4f (>= %.2f) over %zu latents, %zu HMC samples, %d epochs "
                  "(%.1f s)",
                  acc, kPointReachAccuracy, rec, kPointReachRecall, samples, train_size, epochs, secs)};
}

Outcome bikeshare_flow(Context& ctx) {
  const auto t0 = Clock::now();
  const auto dir = fresh_dir(ctx.root, "c6_bikeshare");
  Context::flow_pipeline(dir, bikeshare_flow_config());
  const double secs = seconds_since(t0);
  const auto eval = read_json(dir / "eval.json");
  const double acc = eval.at("accuracy"), rec = eval.at("recall");
  const double within = eval.at("invalid_distance_histogram").at("fraction_within_1");
  const bool ok = acc >= kBssAccuracy && rec >= kBssRecall && within >= kBssWithinOne && secs <= kBssSeconds60;
  return {ok, fmt("accuracy=%.4f (>= %.2f) recall=%.4f (>= %.2f) invalid within 1.0: %.3f (>= %.2f) (%.1f s)", acc,
                  kBssAccuracy, rec, kBssRecall, within, kBssWithinOne, secs)};
}

Outcome mollified_prior(Context&) {
  const MollifiedUniform prior{1, 0.01};
  auto p = [&](double z) { return std::exp(prior.log_density(Eigen::RowVectorXd::Constant(1, z))); };
  const double p0 = p(0.0), p_pos = p(1.0), p_neg = p(-1.0);
  const bool ok = std::abs(p0 - 1.0) <= kPriorCenterTol && std::abs(p_pos - 0.5) <= kPriorEdgeTol &&
                  std::abs(p_neg - 0.5) <= kPriorEdgeTol;
  return {ok, fmt("p(0)=%.9f (1 +- %.0e) p(1)=%.6f p(-1)=%.6f (0.5 +- %.0e)", p0, kPriorCenterTol, p_pos, p_neg,
                  kPriorEdgeTol)};
}

struct MetricsTable {
  std::vector<long> step;
  std::vector<long> cum_violations;
  std::vector<double> return_ma100;
};

MetricsTable parse_metrics(const std::string& csv) {
  MetricsTable t;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    t.step.push_back(std::stol(cells.at(0)));
    t.return_ma100.push_back(std::stod(cells.at(2)));
    t.cum_violations.push_back(std::stol(cells.at(3)));
  }
  return t;
}

/// Violation rate over the episodes that start in the last quarter of the run's steps.
double last_quarter_rate(const MetricsTable& t) {
  const long total = t.step.back();
  std::size_t first = 0;
  while (first < t.step.size() && t.step[first] <= total * 3 / 4) ++first;
  const long base_steps = first == 0 ? 0 : t.step[first - 1];
  const long base_viol = first == 0 ? 0 : t.cum_violations[first - 1];
  return static_cast<double>(t.cum_violations.back() - base_viol) / static_cast<double>(total - base_steps);
}

/// Mean episode return of a fixed policy over `episodes` fresh episodes.
double policy_return(const EnvSpec& spec, const std::function<Vector(const Vector&, std::mt19937_64&)>& policy,
                     int episodes, std::uint64_t seed) {
  auto env = make_env(spec);
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vector s = env->reset(seed + 7919 * static_cast<std::uint64_t>(e + 1));
    bool done = false;
    while (!done) {
      const auto res = env->step(policy(s, rng));
      total += res.reward;
      s = res.next_state;
      done = res.done;
    }
  }
  return total / episodes;
}

Outcome rl_integration(Context& ctx) {
  const fs::path flow = ctx.pointreach() / "flow.json";
  const EnvSpec spec = env_spec_from_json({{"name", "pointreach"}});
  const auto ball = ConstraintSet::ball(spec.radius_sq, 2);
  const double r = std::sqrt(spec.radius_sq);

  const double random_return = policy_return(
      spec,
      [&](const Vector&, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-r, r);
        Vector a(2);
        do {
          a << u(rng), u(rng);
        } while (!is_feasible(ball, a));
        return a;
      },
      1000, 101);
  const double greedy_return = policy_return(
      spec, [&](const Vector& s, std::mt19937_64&) { return project(ball, Vector(s.tail(2) - s.head(2))); }, 1000, 101);
  const double bar = random_return + kGapFraction * (greedy_return - random_return);

  bool ok = true;
  std::string detail = fmt("random=%.2f greedy=%.2f bar=%.2f;", random_return, greedy_return, bar);
  for (int seed = 0; seed < kRlSeeds; ++seed) {
    const auto t0 = Clock::now();
    const auto dir = fresh_dir(ctx.root, "c8_flow_seed" + std::to_string(seed));
    const auto cfg = write_config(dir, pointreach_rl_config(seed, "flow", flow.string()));
    const auto run = cli({"train-rl", "--config", cfg, "--out", dir.string()});
    const double secs = seconds_since(t0);
    const auto base_dir = fresh_dir(ctx.root, "c8_projection_seed" + std::to_string(seed));
    const auto base_cfg = write_config(base_dir, pointreach_rl_config(seed, "ddpg-projection", flow.string()));
    const auto base = cli({"train-rl", "--config", base_cfg, "--out", base_dir.string()});
    if (run.code != 0 || base.code != 0) {
      return {false, fmt("seed %d: train-rl exited %d / %d: %s%s", seed, run.code, base.code, run.err.c_str(),
                         base.err.c_str())};
    }
    const auto m = parse_metrics(slurp(dir / "metrics.csv"));
    const auto mb = parse_metrics(slurp(base_dir / "metrics.csv"));
    const auto summary = read_json(dir / "summary.json");
    const auto base_summary = read_json(base_dir / "summary.json");
    const double final_return = m.return_ma100.back();
    const double flow_rate = last_quarter_rate(m), base_rate = last_quarter_rate(mb);
    const long infeasible = summary.at("infeasible_executed").get<long>() + base_summary.at("infeasible_executed").get<long>();
    const bool a = final_return >= bar;
    const bool b = m.step == mb.step && flow_rate * kViolationRatio <= base_rate;
    const bool c = infeasible == 0;
    ok = ok && a && b && c && secs <= kRlSecondsPerRun;
    detail += fmt(" seed %d: return_ma100=%.2f%s flow viol=%.4f proj raw infeas=%.4f%s infeasible_executed=%ld (%.0f s);",
                  seed, final_return, a ? "" : " [a]", flow_rate, base_rate, b ? "" : " [b]", infeasible, secs);
  }
  return {ok, detail};
}

Outcome determinism(Context& ctx) {
  std::vector<std::string> failed;
  // Sampler runs.
  {
    const auto ball = ConstraintSet::ball(0.05, 2);
    RejectionStats s1, s2;
    const auto d1 = rejection_sample(ball, Vector(), 20000, 3, &s1);
    const auto d2 = rejection_sample(ball, Vector(), 20000, 3, &s2);
    if (dataset_to_string(d1) != dataset_to_string(d2) || s1.proposals != s2.proposals) failed.push_back("rejection");
    HmcConfig hc;
    hc.seed = 3;
    if (dataset_to_string(hmc_sample(ball, Vector(), 20000, hc)) != dataset_to_string(hmc_sample(ball, Vector(), 20000, hc))) {
      failed.push_back("hmc");
    }
  }
  // The PointReach flow pipeline, repeated end to end.
  const auto& first = ctx.pointreach();
  const auto again = fresh_dir(ctx.root, "c9_pointreach");
  Context::flow_pipeline(again, pointreach_flow_config());
  for (const char* f : {"dataset.csv", "flow_nll.csv", "flow.json", "eval.json"}) {
    if (slurp(first / f) != slurp(again / f)) failed.push_back(std::string("pointreach ") + f);
  }
  // A shortened bikeshare pipeline, twice.
  nlohmann::json bss = bikeshare_flow_config();
  bss["sampler"]["count"] = 5000;
  bss["flow"]["epochs"] = 2;
  bss["flow"]["eval_samples"] = 5000;
  bss["flow"]["recall_samples"] = 1000;
  const auto b1 = fresh_dir(ctx.root, "c9_bikeshare_a"), b2 = fresh_dir(ctx.root, "c9_bikeshare_b");
  Context::flow_pipeline(b1, bss);
  Context::flow_pipeline(b2, bss);
  for (const char* f : {"dataset.csv", "flow_nll.csv", "flow.json", "eval.json"}) {
    if (slurp(b1 / f) != slurp(b2 / f)) failed.push_back(std::string("bikeshare ") + f);
  }
  // The first RL seed of criterion 8, repeated.
  const auto rl = fresh_dir(ctx.root, "c9_rl");
  const auto cfg = write_config(rl, pointreach_rl_config(0, "flow", (first / "flow.json").string()));
  cli_step({"train-rl", "--config", cfg, "--out", rl.string()});
  const auto ref = ctx.root / "c8_flow_seed0";
  if (fs::exists(ref / "metrics.csv")) {
    if (without_wallclock(slurp(ref / "metrics.csv")) != without_wallclock(slurp(rl / "metrics.csv"))) {
      failed.push_back("rl metrics.csv");
    }
    if (slurp(ref / "summary.json") != slurp(rl / "summary.json")) failed.push_back("rl summary.json");
  } else {
    const auto rl2 = fresh_dir(ctx.root, "c9_rl_b");
    const auto cfg2 = write_config(rl2, pointreach_rl_config(0, "flow", (first / "flow.json").string()));
    cli_step({"train-rl", "--config", cfg2, "--out", rl2.string()});
    if (without_wallclock(slurp(rl2 / "metrics.csv")) != without_wallclock(slurp(rl / "metrics.csv"))) {
      failed.push_back("rl metrics.csv");
    }
  }
  std::string detail = failed.empty() ? "sampler datasets, flow NLL/eval outputs and RL metrics (minus wallclock) identical"
                                      : "differs:";
  for (const auto& f : failed) detail += " " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"psdd exactness", psdd_exactness},     {"sampler efficiency", sampler_efficiency},
      {"hmc uniformity", hmc_uniformity},     {"flow properties", flow_properties},
      {"pointreach flow", pointreach_flow},   {"bikeshare flow", bikeshare_flow},
      {"mollified prior", mollified_prior},   {"rl integration", rl_integration},
      {"determinism", determinism},
  };
  std::set<int> only;
  if (argc > 1) {
    std::istringstream in(argv[1]);
    std::string item;
    while (std::getline(in, item, ',')) only.insert(std::stoi(item));
  }
  Context ctx;
  ctx.root = fs::temp_directory_path() / "flowact_acceptance";
  fs::create_directories(ctx.root);

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << "  " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
