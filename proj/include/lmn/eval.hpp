#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmn/estimator.hpp"
#include "lmn/synthgen.hpp"

namespace lmn {

struct MetricsReport {
  double rmse_overall = 0.0;
  Eigen::VectorXd rmse_per_action;
  Eigen::VectorXd bias_per_action;
  // Root mean square error of pairwise effect contrasts
  // (theta_hat(a) - theta_hat(a')) vs the oracle contrasts, over records and
  // unordered action pairs.
  double pehe = 0.0;
  // | mean theta_hat(pi*) - mean theta(pi*) | at the oracle's lowest-severity
  // action per record.
  double policy_value_gap = 0.0;
  int n_records = 0;
};

// The oracle must cover every (unit, time) present in the table.
MetricsReport score(const ThetaTable& theta, const OracleTable& oracle);

struct PhenotypeAssignment {
  std::vector<UnitId> units;      // ascending
  std::vector<int> cluster_of;    // parallel to units
  Eigen::MatrixXd centers;        // latent dim x clusters
  std::vector<double> inertia_trace;

  int cluster_of_unit(UnitId unit) const;  // throws LookupError when absent
  int cluster_count() const { return static_cast<int>(centers.cols()); }

 private:
  friend PhenotypeAssignment assign_phenotypes(const LatentTable&, int, uint64_t);
  std::unordered_map<UnitId, int> index_;
};

// k-means over per-unit time-averaged latent vectors, k-means++ seeding,
// deterministic in the seed.
PhenotypeAssignment assign_phenotypes(const LatentTable& table, int n_clusters,
                                      uint64_t seed);

struct EffectCurve {
  std::string group;
  Eigen::VectorXd mean_theta;  // per action
  Eigen::VectorXd sd_theta;    // dispersion across units
  int n_units = 0;
};

// Mean and SD of theta_hat across units (per-unit record averages first),
// grouped by phenotype when one is supplied, otherwise a single "all" group.
// Empty groups are dropped with a warning on stderr.
std::vector<EffectCurve> effect_curves(const ThetaTable& theta,
                                       const PhenotypeAssignment* phenotypes,
                                       int action_count);

struct DifferenceCurve {
  std::string group;
  Eigen::VectorXd delta;  // mean_theta - baseline mean_theta, per action
};

std::vector<DifferenceCurve> curve_differences(const std::vector<EffectCurve>& curves,
                                               const std::vector<EffectCurve>& baseline);

void save_curves_csv(const std::vector<EffectCurve>& curves, const std::string& path);
void save_differences_csv(const std::vector<DifferenceCurve>& diffs, const std::string& path);
// Minimal self-contained line chart, one polyline per group.
void save_curves_svg(const std::vector<EffectCurve>& curves, const std::string& path);

}  // namespace lmn
