#include "flowact/samplers.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace flowact {

std::string to_string(SampleSource s) {
  switch (s) {
    case SampleSource::rejection: return "rejection";
    case SampleSource::hmc: return "hmc";
    case SampleSource::psdd: return "psdd";
  }
  return "hmc";
}

SampleSource sample_source_from_string(const std::string& s) {
  if (s == "rejection") return SampleSource::rejection;
  if (s == "hmc") return SampleSource::hmc;
  if (s == "psdd") return SampleSource::psdd;
  throw std::invalid_argument("unknown sample source: " + s);
}

Matrix SampleDataset::actions() const {
  Matrix m(static_cast<Eigen::Index>(records.size()), x_dim());
  for (std::size_t i = 0; i < records.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = records[i].x.transpose();
  return m;
}

Matrix SampleDataset::conditioning() const {
  Matrix m(static_cast<Eigen::Index>(records.size()), y_dim());
  for (std::size_t i = 0; i < records.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = records[i].y.transpose();
  return m;
}

SampleDataset rejection_sample(const ConstraintSet& cs, const Vector& y, std::size_t count, std::uint64_t seed,
                               RejectionStats* stats, std::size_t proposal_cap) {
  if (!cs.lower().allFinite() || !cs.upper().allFinite()) throw SamplingError("rejection sampling needs a finite box");
  std::mt19937_64 rng(seed);
  SampleDataset out;
  out.source = SampleSource::rejection;
  out.records.reserve(count);
  const int d = cs.dim();
  std::vector<std::uniform_real_distribution<double>> real;
  std::vector<std::uniform_int_distribution<long>> lattice;
  for (int i = 0; i < d; ++i) {
    if (cs.integral()) {
      lattice.emplace_back(static_cast<long>(std::ceil(cs.lower()(i))), static_cast<long>(std::floor(cs.upper()(i))));
    } else {
      real.emplace_back(cs.lower()(i), cs.upper()(i));
    }
  }
  std::size_t proposals = 0;
  Vector x(d);
  while (out.records.size() < count) {
    if (proposals >= proposal_cap) {
      throw SamplingError("rejection sampling hit its proposal cap; use HMC (continuous) or PSDD (integer) sampling");
    }
    for (int i = 0; i < d; ++i) {
      x(i) = cs.integral() ? static_cast<double>(lattice[static_cast<std::size_t>(i)](rng))
                           : real[static_cast<std::size_t>(i)](rng);
    }
    ++proposals;
    if (is_feasible(cs, x)) out.records.push_back({y, x});
    if (proposals == 1'000'000 && static_cast<double>(out.records.size()) / proposals < 1e-6) {
      throw SamplingError("rejection acceptance rate below 1e-6; use HMC (continuous) or PSDD (integer) sampling");
    }
  }
  out.feasible_fraction = proposals == 0 ? 1.0 : static_cast<double>(out.records.size()) / proposals;
  if (stats != nullptr) *stats = {proposals, out.records.size()};
  return out;
}

SampleDataset hmc_sample(const ConstraintSet& cs, const Vector& y, std::size_t count, const HmcConfig& cfg,
                         HmcStats* stats) {
  if (!(cfg.step_size > 0.0)) throw std::invalid_argument("HMC step size must be positive");
  if (cfg.burn_in < 0 || cfg.thinning < 0 || cfg.leapfrog_steps < 1) {
    throw std::invalid_argument("HMC burn-in/thinning must be >= 0 and leapfrog steps >= 1");
  }
  if (cs.integral()) throw SamplingError("HMC samples continuous sets; use PSDD sampling for integer sets");

  const int d = cs.dim();
  Vector x = Vector::Zero(d);
  if (!is_feasible(cs, x, 0.0)) {
    try {
      x = project(cs, x);
    } catch (const ProjectionError&) {
      throw SamplingError("HMC found no feasible starting point");
    }
    if (!is_feasible(cs, x, 0.0)) throw SamplingError("HMC found no feasible starting point");
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto gaussian = [&] {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = normal(rng);
    return v;
  };

  const std::size_t thin = cfg.thinning == 0 ? 1 : static_cast<std::size_t>(cfg.thinning);
  const std::size_t iterations = static_cast<std::size_t>(cfg.burn_in) + count * thin;
  SampleDataset out;
  out.source = SampleSource::hmc;
  out.records.reserve(count);
  HmcStats local;
  Vector p = gaussian();
  const double refresh = std::sqrt(1.0 - cfg.decay * cfg.decay);

  for (std::size_t it = 0; it < iterations; ++it) {
    if (cfg.persistence) {
      p = cfg.decay * p + refresh * gaussian();
    } else {
      p = gaussian();
    }
    // The potential is flat inside the set, so the leapfrog momentum
    // half-steps vanish and each full step is a straight drift.
    Vector proposal = x;
    for (int l = 0; l < cfg.leapfrog_steps; ++l) proposal += cfg.step_size * p;
    ++local.proposals;
    bool accept = false;
    if (is_feasible(cs, proposal, 0.0)) {
      const double h_old = 0.5 * p.squaredNorm();
      const double h_new = 0.5 * p.squaredNorm();
      accept = unit(rng) < std::exp(h_old - h_new);
    }
    if (accept) {
      x = proposal;
      ++local.accepted;
    } else if (cfg.persistence) {
      p = -p;
    }
    if (it >= static_cast<std::size_t>(cfg.burn_in) && (it - cfg.burn_in + 1) % thin == 0) {
      out.records.push_back({y, x});
    }
  }
  out.feasible_fraction = 1.0;
  if (stats != nullptr) *stats = local;
  return out;
}

SampleDataset hmc_sample_conditioned(const std::function<ConstraintSet(const Vector&)>& constraint_for,
                                     const Matrix& ys, std::size_t per_state, HmcConfig cfg) {
  SampleDataset out;
  out.source = SampleSource::hmc;
  const std::uint64_t base = cfg.seed;
  for (Eigen::Index i = 0; i < ys.rows(); ++i) {
    const Vector y = ys.row(i).transpose();
    cfg.seed = base + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ULL;
    auto part = hmc_sample(constraint_for(y), y, per_state, cfg);
    out.records.insert(out.records.end(), part.records.begin(), part.records.end());
  }
  return out;
}

namespace {

void append_double(std::string& s, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  s.append(buf, static_cast<std::size_t>(n));
}

void validate(const SampleDataset& d) {
  if (d.feasible_fraction < 0.0 || d.feasible_fraction > 1.0) throw std::invalid_argument("feasible_fraction outside [0,1]");
  const int ydim = d.y_dim();
  const int xdim = d.x_dim();
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    if (d.records[i].y.size() != ydim || d.records[i].x.size() != xdim) {
      throw ShapeError("dataset record " + std::to_string(i) + " has mixed dimensions");
    }
  }
}

struct LineCursor {
  const std::string& line;
  std::size_t lineno;
  std::size_t pos = 0;

  std::string_view field() {
    const auto end = line.find(',', pos);
    const auto stop = end == std::string::npos ? line.size() : end;
    std::string_view f(line.data() + pos, stop - pos);
    return f;
  }
  void advance(std::size_t len) {
    pos += len;
    if (pos < line.size() && line[pos] == ',') ++pos;
  }
  bool done() const { return pos >= line.size(); }

  double number() {
    if (done()) throw DatasetParseError("missing field", lineno, pos);
    const auto f = field();
    double v = 0.0;
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
      throw DatasetParseError("malformed number '" + std::string(f) + "'", lineno, pos);
    }
    advance(f.size());
    return v;
  }
  long integer() {
    if (done()) throw DatasetParseError("missing field", lineno, pos);
    const auto f = field();
    long v = 0;
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size() || v < 0) {
      throw DatasetParseError("malformed integer '" + std::string(f) + "'", lineno, pos);
    }
    advance(f.size());
    return v;
  }
  std::string word() {
    if (done()) throw DatasetParseError("missing field", lineno, pos);
    std::string w(field());
    advance(w.size());
    return w;
  }
};

}  // namespace

std::string dataset_to_string(const SampleDataset& d) {
  validate(d);
  std::string s;
  s += std::to_string(d.y_dim()) + "," + std::to_string(d.x_dim()) + "," + to_string(d.source) + "," +
       std::to_string(d.size()) + ",";
  append_double(s, d.feasible_fraction);
  s += '\n';
  for (const auto& r : d.records) {
    bool first = true;
    for (const Vector* v : {&r.y, &r.x}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) {
        if (!first) s += ',';
        append_double(s, (*v)(i));
        first = false;
      }
    }
    s += '\n';
  }
  return s;
}

SampleDataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DatasetParseError("missing header", 1, 0);
  LineCursor header{line, 1};
  const long ydim = header.integer();
  const long xdim = header.integer();
  SampleDataset d;
  const auto tag = header.word();
  try {
    d.source = sample_source_from_string(tag);
  } catch (const std::invalid_argument&) {
    throw DatasetParseError("unknown source tag '" + tag + "'", 1, header.pos);
  }
  const long count = header.integer();
  d.feasible_fraction = header.number();
  if (!header.done()) throw DatasetParseError("trailing header fields", 1, header.pos);
  if (d.feasible_fraction < 0.0 || d.feasible_fraction > 1.0) {
    throw DatasetParseError("feasible_fraction outside [0,1]", 1, 0);
  }
  d.records.reserve(static_cast<std::size_t>(count));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LineCursor c{line, lineno};
    SampleRecord r{Vector(ydim), Vector(xdim)};
    for (long i = 0; i < ydim; ++i) r.y(i) = c.number();
    for (long i = 0; i < xdim; ++i) r.x(i) = c.number();
    if (!c.done()) throw DatasetParseError("too many fields", lineno, c.pos);
    d.records.push_back(std::move(r));
  }
  if (static_cast<long>(d.records.size()) != count) {
    throw DatasetParseError("header declares " + std::to_string(count) + " records, found " +
                                std::to_string(d.records.size()),
                            lineno, 0);
  }
  return d;
}

void save_dataset(const SampleDataset& d, const std::string& path) {
  const std::string text = dataset_to_string(d);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  out << text;
}

SampleDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return dataset_from_string(ss.str());
}

}  // namespace flowact
