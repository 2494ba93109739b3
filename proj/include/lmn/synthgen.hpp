#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmn/domain.hpp"

namespace lmn {

// Synthetic longitudinal data-generating process. A low-dimensional latent
// health state evolves weекly as an AR(1); observed concepts are noisy linear
// lifts of it; cumulative doses are confounded through the state; outcomes are
// a smooth bounded function of (state, dose). Every record's true propensity
// vector and counterfactual means are retained in the oracle table.
struct DgpConfig {
  int n_units = 1000;
  int min_steps = 4;
  int max_steps = 8;
  int latent_dim = 4;       // dimension of the true state
  int ambient_dim = 100;    // number of observed concepts
  int action_count = 7;
  double confound_strength = 2.5;
  double lipschitz_scale = 4.0;   // bound on the state-gradient of theta
  double outcome_noise_sd = 0.5;
  double positivity_floor = 0.05;
  uint64_t seed = 0;

  // Timeline and observation shape.
  int lead_in_days = 190;   // observation history before the first outcome
  int min_gap_days = 25;
  int max_gap_days = 45;
  double obs_noise_sd = 0.25;
  // The outcome conditions on the mean state over this many trailing weeks;
  // larger values give the process a longer effective memory.
  int memory_weeks = 1;

  void validate() const;  // throws ConfigError
};

struct OracleRecord {
  UnitId unit;
  int32_t time;
  Eigen::VectorXd state;       // sufficient latent state (empty when loaded from CSV)
  Eigen::VectorXd propensity;  // assignment law of the recorded dose, one entry per action
  Eigen::VectorXd theta;       // counterfactual mean per action
};

class OracleTable {
 public:
  void add(OracleRecord rec);
  const OracleRecord& at(UnitId unit, int32_t time) const;  // throws LookupError
  bool contains(UnitId unit, int32_t time) const;
  double theta(UnitId unit, int32_t time, int action) const;
  const std::vector<OracleRecord>& records() const { return records_; }
  int action_count() const;

 private:
  std::vector<OracleRecord> records_;
  std::unordered_map<uint64_t, size_t> index_;
};

double oracle_theta(const OracleTable& oracle, UnitId unit, int32_t time, int action);

struct PositivityReport {
  bool ok;
  double min_propensity;
};

// True iff every stored propensity entry is at least delta.
PositivityReport check_positivity(const OracleTable& oracle, double delta);

std::pair<Dataset, OracleTable> generate(const DgpConfig& config);

void save_oracle_csv(const OracleTable& oracle, const std::string& path);
OracleTable load_oracle_csv(const std::string& path);

}  // namespace lmn
