#include "lmn/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"

namespace lmn {

// --- propensity ----------------------------------------------------------------

Eigen::VectorXd PropensityModel::predict(const Eigen::VectorXd& features) const {
  if (features.size() != dim())
    throw std::invalid_argument("propensity feature dim mismatch");
  Eigen::VectorXd logits = weights.leftCols(dim()) * features + weights.col(dim());
  double max_logit = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - max_logit).exp();
  return p / p.sum();
}

Eigen::VectorXd PropensityModel::predict_clipped(const Eigen::VectorXd& features) const {
  return predict(features).cwiseMax(clip_floor).cwiseMin(1.0 - clip_floor);
}

PropensityModel fit_propensity(const Eigen::MatrixXd& features,
                               const std::vector<int>& actions, int action_count,
                               double clip_floor, int iterations, double learning_rate,
                               uint64_t seed) {
  (void)seed;  // full-batch descent from zero weights; kept for interface stability
  const int n = static_cast<int>(features.cols());
  const int dim = static_cast<int>(features.rows());
  if (static_cast<int>(actions.size()) != n)
    throw std::invalid_argument("propensity features/actions size mismatch");
  if (n == 0) throw std::invalid_argument("cannot fit propensity on zero rows");
  if (!(clip_floor > 0) || clip_floor >= 0.5)
    throw ConfigError("propensity clip floor must lie in (0, 0.5)");

  std::vector<int> counts(static_cast<size_t>(action_count), 0);
  for (int a : actions) {
    if (a < 0 || a >= action_count)
      throw std::invalid_argument("action outside the configured action set");
    ++counts[static_cast<size_t>(a)];
  }
  for (int a = 0; a < action_count; ++a) {
    if (counts[static_cast<size_t>(a)] == 0)
      throw std::runtime_error(
          "action a=" + std::to_string(a) +
          " never appears in the training data; positivity requires every "
          "action to be observed");
  }

  Eigen::MatrixXd x_aug(dim + 1, n);
  x_aug.topRows(dim) = features;
  x_aug.bottomRows(1).setOnes();
  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(action_count, n);
  for (int i = 0; i < n; ++i) one_hot(actions[static_cast<size_t>(i)], i) = 1.0;

  PropensityModel model;
  model.clip_floor = clip_floor;
  model.weights = Eigen::MatrixXd::Zero(action_count, dim + 1);

  auto eval = [&](const Eigen::MatrixXd& w, Eigen::MatrixXd* probs) {
    Eigen::MatrixXd logits = w * x_aug;
    Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
    Eigen::MatrixXd p = (logits.rowwise() - col_max).array().exp();
    Eigen::RowVectorXd col_sum = p.colwise().sum();
    p.array().rowwise() /= col_sum.array();
    double ce = 0.0;
    for (int i = 0; i < n; ++i)
      ce -= std::log(std::max(p(actions[static_cast<size_t>(i)], i), 1e-300));
    if (probs) *probs = std::move(p);
    return ce / n;
  };

  Eigen::MatrixXd probs;
  double loss = eval(model.weights, &probs);
  model.loss_trace.push_back(loss);
  double rate = learning_rate;
  int accepted = 0;
  for (int it = 0; it < iterations && rate > 1e-12; ++it) {
    Eigen::MatrixXd grad = (probs - one_hot) * x_aug.transpose() / n;
    Eigen::MatrixXd proposal = model.weights - rate * grad;
    Eigen::MatrixXd new_probs;
    double new_loss = eval(proposal, &new_probs);
    if (new_loss <= loss) {
      model.weights = std::move(proposal);
      probs = std::move(new_probs);
      loss = new_loss;
      ++accepted;
    } else {
      rate *= 0.5;  // too large a step; retry smaller
    }
    model.loss_trace.push_back(loss);
  }
  model.iterations_run = accepted;
  model.final_loss = loss;
  return model;
}

// --- local outcome model ---------------------------------------------------------

double LocalOutcomeModel::predict(const Eigen::VectorXd& z, int action) const {
  if (z.size() != dim) throw std::invalid_argument("outcome model feature dim mismatch");
  if (action < 0 || action >= action_count)
    throw std::invalid_argument("outcome model action out of range");
  double value = coef.head(dim).dot(z);
  value += coef[dim + action];
  value += coef[dim + action_count];  // bias
  return value;
}

LocalOutcomeModel fit_local_outcome(const Eigen::MatrixXd& features,
                                    const std::vector<int>& actions,
                                    const Eigen::VectorXd& outcomes, int action_count,
                                    double ridge) {
  const int n = static_cast<int>(features.cols());
  const int dim = static_cast<int>(features.rows());
  if (n == 0) throw std::invalid_argument("cannot fit an outcome model on zero rows");
  if (static_cast<int>(actions.size()) != n || outcomes.size() != n)
    throw std::invalid_argument("outcome model input size mismatch");
  if (!(ridge > 0)) throw ConfigError("ridge strength must be positive");

  const int p = dim + action_count + 1;
  Eigen::MatrixXd design(n, p);
  design.leftCols(dim) = features.transpose();
  design.middleCols(dim, action_count).setZero();
  for (int i = 0; i < n; ++i) design(i, dim + actions[static_cast<size_t>(i)]) = 1.0;
  design.col(p - 1).setOnes();

  LocalOutcomeModel model;
  model.dim = dim;
  model.action_count = action_count;
  if (n >= p) {
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += ridge;
    model.coef = gram.ldlt().solve(design.transpose() * outcomes);
  } else {
    // Dual form: beta = X^T (X X^T + ridge I)^{-1} y, identical for ridge > 0.
    Eigen::MatrixXd gram = design * design.transpose();
    gram.diagonal().array() += ridge;
    model.coef = design.transpose() * gram.ldlt().solve(outcomes);
  }
  return model;
}

// --- doubly robust core ----------------------------------------------------------

Estimate dr_core(const std::vector<Neighbor>& neighborhood, const LatentTable& rows,
                 int action, const std::function<double(int32_t)>& e_of,
                 const std::function<double(int32_t)>& q_of, double clip_floor) {
  if (neighborhood.empty())
    throw std::runtime_error("doubly-robust estimate over an empty neighborhood");
  const double k = static_cast<double>(neighborhood.size());
  double q_sum = 0.0, corr_sum = 0.0;
  for (const Neighbor& nb : neighborhood) {
    const LatentRow& row = rows.rows[static_cast<size_t>(nb.row)];
    const double q_hat = q_of(nb.row);
    q_sum += q_hat;
    if (row.action == action) {
      double e_hat = std::clamp(e_of(nb.row), clip_floor, 1.0 - clip_floor);
      corr_sum += (row.outcome - q_hat) / e_hat;
    }
  }
  Estimate est;
  est.action = action;
  est.q_term = q_sum / k;
  est.correction = corr_sum / k;
  est.theta = est.q_term + est.correction;
  est.k_used = static_cast<int>(neighborhood.size());
  return est;
}

namespace {

LocalOutcomeModel fit_neighborhood_model(const std::vector<Neighbor>& neighborhood,
                                         const LatentTable& rows, const DrConfig& cfg,
                                         const Eigen::VectorXd* fit_outcomes) {
  const int k = static_cast<int>(neighborhood.size());
  Eigen::MatrixXd z(rows.dim(), k);
  std::vector<int> actions(static_cast<size_t>(k));
  Eigen::VectorXd y(k);
  for (int i = 0; i < k; ++i) {
    int32_t row = neighborhood[static_cast<size_t>(i)].row;
    z.col(i) = rows.z.col(row);
    actions[static_cast<size_t>(i)] = rows.rows[static_cast<size_t>(row)].action;
    y[i] = fit_outcomes ? (*fit_outcomes)[row] : rows.rows[static_cast<size_t>(row)].outcome;
  }
  return fit_local_outcome(z, actions, y, rows.action_count, cfg.ridge);
}

Estimate estimate_one(const Eigen::VectorXd& z, int action,
                      const std::vector<Neighbor>& neighborhood, bool fell_back,
                      const LshIndex& index, const PropensityModel* propensity,
                      const DrConfig& cfg, const NuisanceOverrides* overrides,
                      const LocalOutcomeModel* shared_model) {
  const LatentTable& rows = index.rows();

  std::function<double(int32_t)> e_of;
  if (overrides && overrides->e_of) {
    e_of = [&](int32_t row) { return overrides->e_of(row, action); };
  } else {
    e_of = [&](int32_t row) { return propensity->predict(rows.z.col(row))[action]; };
  }

  std::function<double(int32_t)> q_of;
  LocalOutcomeModel local;
  if (overrides && overrides->q_of) {
    q_of = [&](int32_t row) { return overrides->q_of(row, action); };
  } else {
    if (!shared_model) {
      local = fit_neighborhood_model(
          neighborhood, rows, cfg,
          overrides ? overrides->q_fit_outcomes : nullptr);
      shared_model = &local;
    }
    q_of = [&, shared_model](int32_t row) {
      return shared_model->predict(rows.z.col(row), action);
    };
  }

  Estimate est = dr_core(neighborhood, rows, action, e_of, q_of, cfg.clip_floor);
  est.fell_back = fell_back;
  (void)z;
  return est;
}

}  // namespace

Estimate dr_estimate(const Eigen::VectorXd& z, int action, const LshIndex& index,
                     const PropensityModel& propensity, const DrConfig& cfg) {
  QueryConfig query{cfg.k, cfg.mode, cfg.candidate_cap, cfg.fallback};
  QueryResult res = index.query_knn(z, action, query);
  if (static_cast<int>(res.neighbors.size()) < cfg.k)
    throw std::runtime_error("neighborhood starvation: got " +
                             std::to_string(res.neighbors.size()) + " of k=" +
                             std::to_string(cfg.k) + " neighbors with fallback off");
  return estimate_one(z, action, res.neighbors, res.fell_back, index, &propensity, cfg,
                      nullptr, nullptr);
}

ThetaTable estimate_all(const LatentTable& queries, const LshIndex& index,
                        const PropensityModel& propensity, const DrConfig& cfg,
                        const NuisanceOverrides* overrides) {
  const int a_count = index.rows().action_count;
  const int n = queries.size();
  ThetaTable table;
  table.action_count = a_count;
  table.rows.resize(static_cast<size_t>(n) * static_cast<size_t>(a_count));

#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd z = queries.z.col(i);
    const LatentRow& meta = queries.rows[static_cast<size_t>(i)];
    QueryConfig query{cfg.k, cfg.mode, cfg.candidate_cap, cfg.fallback};

    if (cfg.mode == NeighborMode::unrestricted) {
      // One neighborhood serves every action; the indicator inside the DR sum
      // selects the treated rows.
      QueryResult res = index.query_knn(z, 0, query);
      LocalOutcomeModel shared;
      bool have_shared = false;
      if (!(overrides && overrides->q_of)) {
        shared = fit_neighborhood_model(res.neighbors, index.rows(), cfg,
                                        overrides ? overrides->q_fit_outcomes : nullptr);
        have_shared = true;
      }
      for (int a = 0; a < a_count; ++a) {
        Estimate est = estimate_one(z, a, res.neighbors, res.fell_back, index,
                                    &propensity, cfg, overrides,
                                    have_shared ? &shared : nullptr);
        est.unit = meta.unit;
        est.time = meta.time;
        table.rows[static_cast<size_t>(i) * a_count + static_cast<size_t>(a)] = est;
      }
    } else {
      for (int a = 0; a < a_count; ++a) {
        QueryResult res = index.query_knn(z, a, query);
        Estimate est = estimate_one(z, a, res.neighbors, res.fell_back, index,
                                    &propensity, cfg, overrides, nullptr);
        est.unit = meta.unit;
        est.time = meta.time;
        table.rows[static_cast<size_t>(i) * a_count + static_cast<size_t>(a)] = est;
      }
    }
  }
  return table;
}

// --- baselines -------------------------------------------------------------------

ThetaTable baseline_or(const Eigen::MatrixXd& train_features,
                       const std::vector<int>& train_actions,
                       const Eigen::VectorXd& train_outcomes,
                       const Eigen::MatrixXd& test_features,
                       const std::vector<LatentRow>& test_rows, int action_count,
                       double ridge) {
  LocalOutcomeModel model = fit_local_outcome(train_features, train_actions,
                                              train_outcomes, action_count, ridge);
  ThetaTable table;
  table.action_count = action_count;
  table.rows.resize(test_rows.size() * static_cast<size_t>(action_count));
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(test_rows.size()); ++i) {
    for (int a = 0; a < action_count; ++a) {
      Estimate est;
      est.unit = test_rows[static_cast<size_t>(i)].unit;
      est.time = test_rows[static_cast<size_t>(i)].time;
      est.action = a;
      est.q_term = model.predict(test_features.col(i), a);
      est.correction = 0.0;
      est.theta = est.q_term;
      table.rows[static_cast<size_t>(i) * action_count + static_cast<size_t>(a)] = est;
    }
  }
  return table;
}

IpwResult baseline_ipw(const LatentTable& train, const Eigen::MatrixXd& propensities,
                       const std::vector<LatentRow>& test_rows, double clip_floor) {
  const int a_count = train.action_count;
  if (propensities.rows() != a_count || propensities.cols() != train.size())
    throw std::invalid_argument("ipw propensity matrix must be actions x train rows");

  IpwResult out;
  out.value_per_action.resize(a_count);
  for (int a = 0; a < a_count; ++a) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < train.size(); ++i) {
      if (train.rows[static_cast<size_t>(i)].action != a) continue;
      double e_hat = std::clamp(propensities(a, i), clip_floor, 1.0 - clip_floor);
      num += train.rows[static_cast<size_t>(i)].outcome / e_hat;
      den += 1.0 / e_hat;
    }
    if (den == 0.0)
      throw std::runtime_error("no units treated with a=" + std::to_string(a) +
                               "; positivity fails for the IPW baseline");
    out.value_per_action[a] = num / den;
  }

  out.table.action_count = a_count;
  out.table.rows.reserve(test_rows.size() * static_cast<size_t>(a_count));
  for (const LatentRow& row : test_rows) {
    for (int a = 0; a < a_count; ++a) {
      Estimate est;
      est.unit = row.unit;
      est.time = row.time;
      est.action = a;
      est.q_term = out.value_per_action[a];
      est.correction = 0.0;
      est.theta = est.q_term;
      out.table.rows.push_back(est);
    }
  }
  return out;
}

ThetaTable baseline_local_aipw(const LatentTable& train, const LatentTable& queries,
                               int k, const DrConfig& cfg, int prop_iterations,
                               double prop_rate) {
  if (k > train.size())
    throw std::runtime_error("local AIPW k exceeds the training rows");
  std::vector<int> actions(static_cast<size_t>(train.size()));
  for (int i = 0; i < train.size(); ++i)
    actions[static_cast<size_t>(i)] = train.rows[static_cast<size_t>(i)].action;
  PropensityModel propensity = fit_propensity(train.z, actions, train.action_count,
                                              cfg.clip_floor, prop_iterations,
                                              prop_rate, 0);

  const int a_count = train.action_count;
  ThetaTable table;
  table.action_count = a_count;
  table.rows.resize(queries.rows.size() * static_cast<size_t>(a_count));

#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < queries.size(); ++i) {
    const Eigen::VectorXd z = queries.z.col(i);
    const LatentRow& meta = queries.rows[static_cast<size_t>(i)];
    auto run_action = [&](int a, const std::vector<Neighbor>& neighborhood,
                          const LocalOutcomeModel& model) {
      Estimate est = dr_core(
          neighborhood, train, a,
          [&](int32_t row) { return propensity.predict(train.z.col(row))[a]; },
          [&](int32_t row) { return model.predict(train.z.col(row), a); },
          cfg.clip_floor);
      est.unit = meta.unit;
      est.time = meta.time;
      table.rows[static_cast<size_t>(i) * a_count + static_cast<size_t>(a)] = est;
    };

    if (cfg.mode == NeighborMode::unrestricted) {
      auto neighborhood = brute_force_knn(train, z, 0, k, cfg.mode);
      DrConfig local_cfg = cfg;
      LocalOutcomeModel model = fit_neighborhood_model(neighborhood, train, local_cfg, nullptr);
      for (int a = 0; a < a_count; ++a) run_action(a, neighborhood, model);
    } else {
      for (int a = 0; a < a_count; ++a) {
        auto neighborhood = brute_force_knn(train, z, a, k, cfg.mode);
        LocalOutcomeModel model = fit_neighborhood_model(neighborhood, train, cfg, nullptr);
        run_action(a, neighborhood, model);
      }
    }
  }
  return table;
}

// --- files -------------------------------------------------------------------------

void save_theta_csv(const ThetaTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write theta table: " + path);
  out << "unit,time,action,theta_hat,q_term,correction_term,k_used,fell_back\n";
  for (const Estimate& e : table.rows) {
    out << e.unit << ',' << e.time << ',' << e.action << ',' << format_full(e.theta)
        << ',' << format_full(e.q_term) << ',' << format_full(e.correction) << ','
        << e.k_used << ',' << (e.fell_back ? 1 : 0) << '\n';
  }
}

ThetaTable load_theta_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read theta table: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "unit,time,action,theta_hat,q_term,correction_term,k_used,fell_back")
    throw std::runtime_error("theta table missing expected header: " + path);
  ThetaTable table;
  int max_action = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    Estimate e;
    auto next = [&]() {
      if (!std::getline(ss, field, ','))
        throw std::runtime_error("malformed theta line: " + line);
      return field;
    };
    e.unit = static_cast<UnitId>(std::stol(next()));
    e.time = static_cast<int32_t>(std::stol(next()));
    e.action = static_cast<int>(std::stol(next()));
    e.theta = std::stod(next());
    e.q_term = std::stod(next());
    e.correction = std::stod(next());
    e.k_used = static_cast<int>(std::stol(next()));
    e.fell_back = std::stol(next()) != 0;
    max_action = std::max(max_action, e.action);
    table.rows.push_back(e);
  }
  table.action_count = max_action + 1;
  return table;
}

}  // namespace lmn
