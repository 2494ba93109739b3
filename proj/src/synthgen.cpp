#include "lmn/synthgen.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"

namespace lmn {

namespace {

// Weekly AR(1) coefficient of the latent state; the innovation scale keeps the
// stationary variance at one.
constexpr double kArCoefficient = 0.8;

uint64_t key_of(UnitId unit, int32_t time) {
  return (uint64_t(uint32_t(unit)) << 32) | uint32_t(time);
}

struct ConceptDef {
  std::string name;
  Eigen::VectorXd loading;  // row of the linear lift, scaled per group
  double base;
};

// Concept groups mirror wearable-style channels. Heart concepts carry the
// strongest lift of the latent state, records concepts none at all, which
// gives ablation studies a known-dead group to exclude.
struct GroupSpec {
  const char* prefix;
  double scale;
};
constexpr GroupSpec kGroups[] = {{"activity_", 0.7},
                                 {"breathing_", 0.7},
                                 {"heart_", 1.0},
                                 {"records_", 0.0}};
constexpr int kGroupCount = 4;

std::vector<ConceptDef> make_concepts(const DgpConfig& cfg, Rng rng) {
  std::vector<ConceptDef> defs;
  defs.reserve(static_cast<size_t>(cfg.ambient_dim));
  char buf[64];
  for (int g = 0; g < kGroupCount; ++g) {
    int count = cfg.ambient_dim / kGroupCount + (g < cfg.ambient_dim % kGroupCount ? 1 : 0);
    for (int j = 0; j < count; ++j) {
      std::snprintf(buf, sizeof(buf), "%s%03d", kGroups[g].prefix, j);
      ConceptDef def;
      def.name = buf;
      def.loading = Eigen::VectorXd::Zero(cfg.latent_dim);
      for (int k = 0; k < cfg.latent_dim; ++k) def.loading[k] = rng.normal();
      double norm = def.loading.norm();
      if (norm > 0) def.loading *= kGroups[g].scale / norm;
      def.base = rng.uniform(-2.0, 2.0);
      defs.push_back(std::move(def));
    }
  }
  return defs;
}

// The confounding enters through one latent direction. Dose logits scale an
// action-linear statistic by the running maximum of that projection, which is
// non-decreasing along a trajectory; together with one comonotone quantile
// draw per unit this makes the per-step draws themselves non-decreasing, so
// the recorded cumulative dose follows the stored per-record propensity law
// exactly (the running maximum never binds).
Eigen::VectorXd make_confounder_direction(const DgpConfig& cfg, Rng rng) {
  Eigen::VectorXd w(cfg.latent_dim);
  for (int k = 0; k < cfg.latent_dim; ++k) w[k] = rng.normal();
  double norm = w.norm();
  if (norm > 0) w /= norm;
  return w;
}

// theta(z, a) = c_a + s_a * tanh(u_a . z); |s_a| <= L and |u_a| = 1 keep the
// map L-Lipschitz in the state. The intercepts peak at a = 1 so the default
// generated dose-response curve is non-monotone. The directions u_a lean
// toward the confounder direction so treated strata genuinely differ in
// outcome level.
struct ThetaSpec {
  Eigen::VectorXd intercept;   // c_a
  Eigen::VectorXd slope;       // s_a
  Eigen::MatrixXd direction;   // rows u_a, unit norm
};

ThetaSpec make_theta(const DgpConfig& cfg, const Eigen::VectorXd& confounder, Rng rng) {
  ThetaSpec spec;
  const int a_count = cfg.action_count;
  spec.intercept.resize(a_count);
  spec.slope.resize(a_count);
  spec.direction.resize(a_count, cfg.latent_dim);
  for (int a = 0; a < a_count; ++a) {
    spec.intercept[a] =
        a == 0 ? 3.5 : 4.0 + 6.0 * std::exp(-0.5 * double(a - 1) * double(a - 1));
    spec.slope[a] = 0.8 * cfg.lipschitz_scale;
    Eigen::VectorXd u(cfg.latent_dim);
    for (int k = 0; k < cfg.latent_dim; ++k) u[k] = rng.normal();
    double norm = u.norm();
    if (norm > 0) u /= norm;
    u = confounder + 0.8 * u;
    u /= u.norm();
    spec.direction.row(a) = u.transpose();
  }
  return spec;
}

double theta_value(const ThetaSpec& spec, const Eigen::VectorXd& state, int action) {
  return spec.intercept[action] +
         spec.slope[action] * std::tanh(spec.direction.row(action).dot(state));
}

// Softmax of the confounded logits, floor-mixed with the uniform distribution:
// e = delta*A * uniform + (1 - delta*A) * softmax, so every entry lies in
// [delta, 1 - delta*(A-1)] exactly. The logit of action a is
// confound * (a / (A-1)) * g with g the running-max confounder value, so the
// family is stochastically increasing in g.
Eigen::VectorXd propensity_vector(const DgpConfig& cfg, double confounder_value) {
  Eigen::VectorXd logits(cfg.action_count);
  for (int a = 0; a < cfg.action_count; ++a)
    logits[a] = cfg.confound_strength * confounder_value *
                (static_cast<double>(a) / std::max(1, cfg.action_count - 1));
  double max_logit = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - max_logit).exp();
  p /= p.sum();
  const double mix = cfg.positivity_floor * cfg.action_count;
  return Eigen::VectorXd::Constant(cfg.action_count, cfg.positivity_floor) +
         (1.0 - mix) * p;
}

int quantile_action(const Eigen::VectorXd& propensity, double u) {
  double acc = 0.0;
  for (int a = 0; a + 1 < propensity.size(); ++a) {
    acc += propensity[a];
    if (u < acc) return a;
  }
  return static_cast<int>(propensity.size()) - 1;
}

struct UnitData {
  std::vector<Observation> observations;
  std::vector<OutcomeRecord> outcomes;
  std::vector<OracleRecord> oracle;
};

UnitData generate_unit(const DgpConfig& cfg, const std::vector<ConceptDef>& concepts,
                       const ThetaSpec& theta, const Eigen::VectorXd& confounder,
                       UnitId unit, Rng rng) {
  UnitData out;

  const int steps =
      cfg.min_steps + static_cast<int>(rng.integer(
                          static_cast<uint64_t>(cfg.max_steps - cfg.min_steps + 1)));
  // One quantile draw per unit; see propensity_vector for why the resulting
  // dose path is monotone.
  const double dose_quantile = rng.uniform();

  std::vector<int32_t> outcome_days(static_cast<size_t>(steps));
  int32_t day = cfg.lead_in_days + static_cast<int32_t>(rng.integer(15));
  for (int s = 0; s < steps; ++s) {
    outcome_days[static_cast<size_t>(s)] = day;
    day += cfg.min_gap_days +
           static_cast<int32_t>(rng.integer(
               static_cast<uint64_t>(cfg.max_gap_days - cfg.min_gap_days + 1)));
  }

  const int last_week = outcome_days.back() / 7;
  std::vector<Eigen::VectorXd> latent(static_cast<size_t>(last_week + 1));
  latent[0] = Eigen::VectorXd::Zero(cfg.latent_dim);
  for (int k = 0; k < cfg.latent_dim; ++k) latent[0][k] = rng.normal();
  const double innovation_sd = std::sqrt(1.0 - kArCoefficient * kArCoefficient);
  for (int w = 1; w <= last_week; ++w) {
    Eigen::VectorXd eps(cfg.latent_dim);
    for (int k = 0; k < cfg.latent_dim; ++k) eps[k] = rng.normal();
    latent[static_cast<size_t>(w)] =
        kArCoefficient * latent[static_cast<size_t>(w - 1)] + innovation_sd * eps;
  }

  out.observations.reserve(static_cast<size_t>(last_week + 1) * concepts.size());
  for (int w = 0; w <= last_week; ++w) {
    int32_t obs_day = 7 * w + static_cast<int32_t>(rng.integer(3)) - 1;
    if (obs_day < 0) obs_day = 0;
    const Eigen::VectorXd& z = latent[static_cast<size_t>(w)];
    for (size_t j = 0; j < concepts.size(); ++j) {
      double value = concepts[j].base + concepts[j].loading.dot(z) +
                     cfg.obs_noise_sd * rng.normal();
      out.observations.push_back(
          {unit, obs_day, static_cast<int32_t>(j), value});
    }
  }

  int cumulative_dose = 0;
  double confounder_running_max = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < steps; ++s) {
    const int32_t t = outcome_days[static_cast<size_t>(s)];
    const int week = t / 7;
    const int first = std::max(0, week - cfg.memory_weeks + 1);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(cfg.latent_dim);
    for (int w = first; w <= week; ++w) state += latent[static_cast<size_t>(w)];
    state /= double(week - first + 1);

    confounder_running_max = std::max(confounder_running_max, confounder.dot(state));
    Eigen::VectorXd prop = propensity_vector(cfg, confounder_running_max);
    int draw = quantile_action(prop, dose_quantile);
    cumulative_dose = std::max(cumulative_dose, draw);

    Eigen::VectorXd theta_row(cfg.action_count);
    for (int a = 0; a < cfg.action_count; ++a)
      theta_row[a] = theta_value(theta, state, a);
    double y = theta_row[cumulative_dose] + cfg.outcome_noise_sd * rng.normal();

    out.outcomes.push_back({unit, t, cumulative_dose, y});
    out.oracle.push_back({unit, t, state, prop, theta_row});
  }
  return out;
}

}  // namespace

void DgpConfig::validate() const {
  if (n_units < 1) throw ConfigError("dgp.n_units must be >= 1");
  if (min_steps < 1 || max_steps < min_steps)
    throw ConfigError("dgp steps range invalid: need 1 <= min_steps <= max_steps");
  if (latent_dim < 1) throw ConfigError("dgp.latent_dim must be >= 1");
  if (ambient_dim < 1) throw ConfigError("dgp.ambient_dim must be >= 1");
  if (action_count < 2) throw ConfigError("dgp.action_count must be >= 2");
  if (confound_strength < 0) throw ConfigError("dgp.confound_strength must be >= 0");
  if (lipschitz_scale < 0) throw ConfigError("dgp.lipschitz_scale must be >= 0");
  if (outcome_noise_sd < 0) throw ConfigError("dgp.outcome_noise_sd must be >= 0");
  if (obs_noise_sd < 0) throw ConfigError("dgp.obs_noise_sd must be >= 0");
  if (!(positivity_floor > 0) || positivity_floor * action_count > 1.0)
    throw ConfigError("dgp.positivity_floor must satisfy 0 < floor*A <= 1");
  if (min_gap_days < 1 || max_gap_days < min_gap_days)
    throw ConfigError("dgp gap range invalid");
  if (lead_in_days < 0) throw ConfigError("dgp.lead_in_days must be >= 0");
  if (memory_weeks < 1) throw ConfigError("dgp.memory_weeks must be >= 1");
}

void OracleTable::add(OracleRecord rec) {
  uint64_t key = key_of(rec.unit, rec.time);
  if (index_.count(key))
    throw std::runtime_error("duplicate oracle record for unit " +
                             std::to_string(rec.unit) + " time " +
                             std::to_string(rec.time));
  index_.emplace(key, records_.size());
  records_.push_back(std::move(rec));
}

const OracleRecord& OracleTable::at(UnitId unit, int32_t time) const {
  auto it = index_.find(key_of(unit, time));
  if (it == index_.end())
    throw LookupError("no oracle record for unit " + std::to_string(unit) +
                      " at time " + std::to_string(time));
  return records_[it->second];
}

bool OracleTable::contains(UnitId unit, int32_t time) const {
  return index_.count(key_of(unit, time)) != 0;
}

double OracleTable::theta(UnitId unit, int32_t time, int action) const {
  const OracleRecord& rec = at(unit, time);
  if (action < 0 || action >= rec.theta.size())
    throw LookupError("action " + std::to_string(action) +
                      " outside oracle action set");
  return rec.theta[action];
}

int OracleTable::action_count() const {
  return records_.empty() ? 0 : static_cast<int>(records_.front().theta.size());
}

double oracle_theta(const OracleTable& oracle, UnitId unit, int32_t time, int action) {
  return oracle.theta(unit, time, action);
}

PositivityReport check_positivity(const OracleTable& oracle, double delta) {
  double min_prop = 1.0;
  for (const auto& rec : oracle.records())
    min_prop = std::min(min_prop, rec.propensity.minCoeff());
  return {min_prop >= delta, min_prop};
}

std::pair<Dataset, OracleTable> generate(const DgpConfig& config) {
  config.validate();
  Rng master(config.seed);
  const auto concepts = make_concepts(config, master.derive(1));
  const auto confounder = make_confounder_direction(config, master.derive(3));
  const auto theta = make_theta(config, confounder, master.derive(2));

  std::vector<UnitData> units(static_cast<size_t>(config.n_units));
#pragma omp parallel for schedule(dynamic, 16)
  for (int u = 0; u < config.n_units; ++u) {
    units[static_cast<size_t>(u)] =
        generate_unit(config, concepts, theta, confounder, u,
                      master.derive(0x100000000ULL + static_cast<uint64_t>(u)));
  }

  Dataset ds;
  OracleTable oracle;
  for (const auto& def : concepts) ds.intern_concept(def.name);
  for (auto& unit : units) {
    for (const auto& o : unit.observations)
      ds.add_observation(o.unit, o.time, o.concept_id, o.value);
    for (const auto& r : unit.outcomes)
      ds.add_outcome(r.unit, r.time, r.action, r.outcome);
    for (auto& rec : unit.oracle) oracle.add(std::move(rec));
  }
  ds.set_unit_count(config.n_units);
  ds.set_action_count(config.action_count);
  ds.finalize();
  return {std::move(ds), std::move(oracle)};
}

void save_oracle_csv(const OracleTable& oracle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write oracle file: " + path);
  out << "unit,time,action,theta,propensity\n";
  char buf[160];
  for (const auto& rec : oracle.records()) {
    for (int a = 0; a < rec.theta.size(); ++a) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%s,%s\n", rec.unit, rec.time, a,
                    format_full(rec.theta[a]).c_str(),
                    format_full(rec.propensity[a]).c_str());
      out << buf;
    }
  }
}

OracleTable load_oracle_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read oracle file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "unit,time,action,theta,propensity")
    throw std::runtime_error("oracle file missing expected header: " + path);

  OracleTable table;
  OracleRecord current;
  std::vector<double> thetas, props;
  bool have_current = false;
  auto flush = [&]() {
    if (!have_current) return;
    current.theta = Eigen::Map<Eigen::VectorXd>(thetas.data(), static_cast<long>(thetas.size()));
    current.propensity = Eigen::Map<Eigen::VectorXd>(props.data(), static_cast<long>(props.size()));
    table.add(current);
    thetas.clear();
    props.clear();
    have_current = false;
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    int32_t vals[3];
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(ss, field, ','))
        throw std::runtime_error("malformed oracle line: " + line);
      vals[i] = static_cast<int32_t>(std::stol(field));
    }
    std::getline(ss, field, ',');
    double theta = std::stod(field);
    std::getline(ss, field, ',');
    double prop = std::stod(field);

    if (!have_current || current.unit != vals[0] || current.time != vals[1]) {
      flush();
      current = OracleRecord{vals[0], vals[1], Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd()};
      have_current = true;
    }
    if (vals[2] != static_cast<int32_t>(thetas.size()))
      throw std::runtime_error("oracle actions out of order in line: " + line);
    thetas.push_back(theta);
    props.push_back(prop);
  }
  flush();
  return table;
}

}  // namespace lmn
