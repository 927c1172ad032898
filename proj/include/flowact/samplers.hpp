#pragma once

#include "flowact/constraints.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowact {

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetParseError : std::runtime_error {
  DatasetParseError(const std::string& what, std::size_t line, std::size_t offset)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", offset " + std::to_string(offset) + ")"),
        line(line),
        offset(offset) {}
  std::size_t line;
  std::size_t offset;
};

enum class SampleSource { rejection, hmc, psdd };

std::string to_string(SampleSource s);
SampleSource sample_source_from_string(const std::string& s);

struct SampleRecord {
  Vector y;  // conditioning
  Vector x;  // action
};

/// Training set D of feasible actions, each paired with its conditioning vector.
struct SampleDataset {
  std::vector<SampleRecord> records;
  double feasible_fraction = 1.0;
  SampleSource source = SampleSource::hmc;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  int y_dim() const { return records.empty() ? 0 : static_cast<int>(records.front().y.size()); }
  int x_dim() const { return records.empty() ? 0 : static_cast<int>(records.front().x.size()); }
  Matrix actions() const;
  Matrix conditioning() const;
};

struct HmcConfig {
  double step_size = 0.2;
  /// Momentum decay, used only with persistent momentum.
  double decay = 0.9;
  bool persistence = false;
  int leapfrog_steps = 1;
  int burn_in = 1000;
  int thinning = 20;
  std::uint64_t seed = 0;
};

struct HmcStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const { return proposals == 0 ? 0.0 : static_cast<double>(accepted) / proposals; }
};

struct RejectionStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
};

/// Uniform proposals over the box (integer lattice points for integer sets),
/// kept if feasible, until `count` are accepted.
SampleDataset rejection_sample(const ConstraintSet& cs, const Vector& y, std::size_t count, std::uint64_t seed,
                               RejectionStats* stats = nullptr, std::size_t proposal_cap = 200'000'000);

/// HMC under a hard-wall potential (0 inside the set, +inf outside).
///
/// Only the terminal leapfrog position is tested; an infeasible endpoint is
/// rejected and the chain repeats its current state. The chain starts at the
/// origin, projected onto the set if the origin is infeasible.
SampleDataset hmc_sample(const ConstraintSet& cs, const Vector& y, std::size_t count, const HmcConfig& cfg,
                         HmcStats* stats = nullptr);

/// One HMC chain per conditioning row of `ys`, `per_state` samples each.
SampleDataset hmc_sample_conditioned(const std::function<ConstraintSet(const Vector&)>& constraint_for,
                                     const Matrix& ys, std::size_t per_state, HmcConfig cfg);

// File layout: a header line "y_dim,x_dim,source,count,feasible_fraction"
// then one CSV row per record (y then x), doubles at 17 significant digits.
void save_dataset(const SampleDataset& d, const std::string& path);
SampleDataset load_dataset(const std::string& path);
std::string dataset_to_string(const SampleDataset& d);
SampleDataset dataset_from_string(const std::string& text);

}  // namespace flowact
