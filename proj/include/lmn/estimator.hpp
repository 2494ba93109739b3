#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "lmn/lsh.hpp"

namespace lmn {

// Multinomial logistic propensity model over latent features plus a bias.
struct PropensityModel {
  Eigen::MatrixXd weights;  // action_count x (dim + 1), last column is the bias
  double clip_floor = 0.01;
  int iterations_run = 0;
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // recorded every iteration, non-increasing

  int dim() const { return static_cast<int>(weights.cols()) - 1; }
  int action_count() const { return static_cast<int>(weights.rows()); }
  Eigen::VectorXd predict(const Eigen::VectorXd& features) const;
  Eigen::VectorXd predict_clipped(const Eigen::VectorXd& features) const;
};

// Full-batch gradient descent on the cross-entropy, with step halving on any
// increase so the recorded loss never goes up. Every action must appear in the
// training data.
PropensityModel fit_propensity(const Eigen::MatrixXd& features,
                               const std::vector<int>& actions, int action_count,
                               double clip_floor, int iterations, double learning_rate,
                               uint64_t seed);

// Ridge regression of outcome on (features, action one-hot, bias), solved in
// closed form; switches to the dual formulation when rows < columns.
struct LocalOutcomeModel {
  Eigen::VectorXd coef;  // [features..., action one-hot..., bias]
  int dim = 0;
  int action_count = 0;

  double predict(const Eigen::VectorXd& z, int action) const;
};

LocalOutcomeModel fit_local_outcome(const Eigen::MatrixXd& features,
                                    const std::vector<int>& actions,
                                    const Eigen::VectorXd& outcomes, int action_count,
                                    double ridge);

struct Estimate {
  UnitId unit = 0;
  int32_t time = 0;
  int action = 0;
  double theta = 0.0;
  double q_term = 0.0;
  double correction = 0.0;
  int k_used = 0;
  bool fell_back = false;
};

struct ThetaTable {
  std::vector<Estimate> rows;
  int action_count = 0;
};

struct DrConfig {
  int k = 50;
  NeighborMode mode = NeighborMode::unrestricted;
  double clip_floor = 0.01;
  double ridge = 1e-3;
  bool fallback = true;
  int candidate_cap = 0;
};

// The doubly-robust average over an explicit neighborhood:
//   theta = (1/k) sum_j [ q_of(j) + 1{A_j = a} / e_of(j) * (y_j - q_of(j)) ]
// with e_of clamped to [clip_floor, 1 - clip_floor]. The exact two-term
// decomposition is retained.
Estimate dr_core(const std::vector<Neighbor>& neighborhood, const LatentTable& rows,
                 int action, const std::function<double(int32_t)>& e_of,
                 const std::function<double(int32_t)>& q_of, double clip_floor);

// Retrieve neighbors through the index, fit the local outcome model, apply the
// correction.
Estimate dr_estimate(const Eigen::VectorXd& z, int action, const LshIndex& index,
                     const PropensityModel& propensity, const DrConfig& cfg);

// Test and experiment hooks: replace either nuisance, or only the outcomes the
// local model is fitted on (residuals always use the recorded outcomes).
struct NuisanceOverrides {
  std::function<double(int32_t, int)> q_of;  // (train row, action) -> Q-hat
  std::function<double(int32_t, int)> e_of;  // (train row, action) -> e-hat
  const Eigen::VectorXd* q_fit_outcomes = nullptr;  // per train row
};

// One estimate per (query row, action). In unrestricted mode the neighborhood
// and its local model are shared across the actions of a query.
ThetaTable estimate_all(const LatentTable& queries, const LshIndex& index,
                        const PropensityModel& propensity, const DrConfig& cfg,
                        const NuisanceOverrides* overrides = nullptr);

// Outcome-regression baseline: one global ridge fit on hashed text features,
// evaluated at every counterfactual action.
ThetaTable baseline_or(const Eigen::MatrixXd& train_features,
                       const std::vector<int>& train_actions,
                       const Eigen::VectorXd& train_outcomes,
                       const Eigen::MatrixXd& test_features,
                       const std::vector<LatentRow>& test_rows, int action_count,
                       double ridge);

// Hajek-normalized inverse propensity weighting, computed globally on the
// training rows and broadcast to the test rows. Propensities are supplied as
// a matrix (action x train row) so true values can be injected.
struct IpwResult {
  Eigen::VectorXd value_per_action;
  ThetaTable table;
};

IpwResult baseline_ipw(const LatentTable& train, const Eigen::MatrixXd& propensities,
                       const std::vector<LatentRow>& test_rows, double clip_floor);

// Local AIPW in a raw feature geometry: brute-force neighborhoods, its own
// propensity fit on the same features, then the shared DR arithmetic.
ThetaTable baseline_local_aipw(const LatentTable& train, const LatentTable& queries,
                               int k, const DrConfig& cfg, int prop_iterations,
                               double prop_rate);

void save_theta_csv(const ThetaTable& table, const std::string& path);
ThetaTable load_theta_csv(const std::string& path);

}  // namespace lmn
