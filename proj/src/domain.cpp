#include "lmn/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lmn/rng.hpp"
#include "json.hpp"

namespace lmn {

int32_t Dataset::intern_concept(const std::string& name) {
  auto it = concept_ids_.find(name);
  if (it != concept_ids_.end()) return it->second;
  int32_t id = static_cast<int32_t>(concept_names_.size());
  concept_names_.push_back(name);
  concept_ids_.emplace(name, id);
  return id;
}

void Dataset::add_observation(UnitId unit, int32_t time, int32_t concept_id,
                              double value) {
  observations_.push_back({unit, time, concept_id, value});
}

void Dataset::add_outcome(UnitId unit, int32_t time, int32_t action,
                          double outcome) {
  outcomes_.push_back({unit, time, action, outcome});
}

void Dataset::finalize() {
  auto by_unit_time = [](const auto& a, const auto& b) {
    if (a.unit != b.unit) return a.unit < b.unit;
    return a.time < b.time;
  };
  std::stable_sort(observations_.begin(), observations_.end(), by_unit_time);
  std::stable_sort(outcomes_.begin(), outcomes_.end(), by_unit_time);

  int max_unit = -1;
  for (const auto& o : observations_) max_unit = std::max(max_unit, o.unit);
  for (const auto& o : outcomes_) max_unit = std::max(max_unit, o.unit);
  if (unit_count_ < max_unit + 1) unit_count_ = max_unit + 1;

  obs_range_.assign(static_cast<size_t>(unit_count_), {0, 0});
  out_range_.assign(static_cast<size_t>(unit_count_), {0, 0});
  for (size_t i = 0; i < observations_.size();) {
    size_t j = i;
    while (j < observations_.size() && observations_[j].unit == observations_[i].unit) ++j;
    if (observations_[i].unit >= 0 && observations_[i].unit < unit_count_)
      obs_range_[static_cast<size_t>(observations_[i].unit)] = {i, j};
    i = j;
  }
  for (size_t i = 0; i < outcomes_.size();) {
    size_t j = i;
    while (j < outcomes_.size() && outcomes_[j].unit == outcomes_[i].unit) ++j;
    if (outcomes_[i].unit >= 0 && outcomes_[i].unit < unit_count_)
      out_range_[static_cast<size_t>(outcomes_[i].unit)] = {i, j};
    i = j;
  }
  finalized_ = true;
}

std::span<const Observation> Dataset::observations_for(UnitId unit) const {
  if (unit < 0 || unit >= unit_count_) return {};
  auto [b, e] = obs_range_[static_cast<size_t>(unit)];
  return {observations_.data() + b, e - b};
}

std::span<const OutcomeRecord> Dataset::outcomes_for(UnitId unit) const {
  if (unit < 0 || unit >= unit_count_) return {};
  auto [b, e] = out_range_[static_cast<size_t>(unit)];
  return {outcomes_.data() + b, e - b};
}

const OutcomeRecord& Dataset::outcome_at(UnitId unit, int32_t time) const {
  for (const auto& rec : outcomes_for(unit)) {
    if (rec.time == time) return rec;
  }
  throw LookupError("no outcome record for unit " + std::to_string(unit) +
                    " at time " + std::to_string(time));
}

const char* split_role_name(SplitRole role) {
  switch (role) {
    case SplitRole::train: return "train";
    case SplitRole::validation: return "validation";
    case SplitRole::test: return "test";
  }
  return "?";
}

SplitRole split_role_from_name(const std::string& name) {
  if (name == "train") return SplitRole::train;
  if (name == "validation") return SplitRole::validation;
  if (name == "test") return SplitRole::test;
  throw ConfigError("unknown split role: " + name);
}

int SplitAssignment::count(SplitRole r) const {
  int n = 0;
  for (SplitRole x : role)
    if (x == r) ++n;
  return n;
}

std::vector<Violation> validate_dataset(const Dataset& dataset) {
  std::vector<Violation> out;
  const int n = dataset.unit_count();
  const int a_max = dataset.action_count();

  for (const auto& obs : dataset.observations()) {
    if (obs.unit < 0 || obs.unit >= n)
      out.push_back({obs.unit, obs.time, "observation unit out of range"});
    if (!std::isfinite(obs.value))
      out.push_back({obs.unit, obs.time, "non-finite observation value"});
    if (obs.time < 0)
      out.push_back({obs.unit, obs.time, "negative observation time"});
  }

  for (UnitId u = 0; u < n; ++u) {
    auto recs = dataset.outcomes_for(u);
    if (recs.empty()) {
      out.push_back({u, 0, "unit has no outcome records"});
      continue;
    }
    for (size_t i = 0; i < recs.size(); ++i) {
      const auto& r = recs[i];
      if (r.action < 0 || r.action >= a_max)
        out.push_back({u, r.time, "action outside configured action set"});
      if (!std::isfinite(r.outcome))
        out.push_back({u, r.time, "non-finite outcome"});
      if (i > 0) {
        if (recs[i].time == recs[i - 1].time)
          out.push_back({u, r.time, "duplicate outcome at time"});
        else if (recs[i].time < recs[i - 1].time)
          out.push_back({u, r.time, "outcome times not increasing"});
        if (recs[i].action < recs[i - 1].action)
          out.push_back({u, r.time, "non-monotone action (cumulative doses decreased)"});
      }
    }
  }

  for (const auto& rec : dataset.outcomes()) {
    if (rec.unit < 0 || rec.unit >= n)
      out.push_back({rec.unit, rec.time, "outcome unit out of range"});
  }
  return out;
}

SplitAssignment split_units(const Dataset& dataset, double train_frac,
                            double validation_frac, double test_frac,
                            uint64_t seed) {
  if (!(train_frac > 0) || !(validation_frac > 0) || !(test_frac > 0))
    throw ConfigError("split fractions must be positive");
  if (std::abs(train_frac + validation_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  const int n = dataset.unit_count();
  std::vector<UnitId> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  int n_train = static_cast<int>(std::floor(train_frac * n + 0.5));
  int n_val = static_cast<int>(std::floor(validation_frac * n + 0.5));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  SplitAssignment split;
  split.role.assign(static_cast<size_t>(n), SplitRole::test);
  for (int i = 0; i < n_train; ++i)
    split.role[static_cast<size_t>(order[static_cast<size_t>(i)])] = SplitRole::train;
  for (int i = n_train; i < n_train + n_val; ++i)
    split.role[static_cast<size_t>(order[static_cast<size_t>(i)])] = SplitRole::validation;
  return split;
}

// --- serialization ---------------------------------------------------------

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  out.reserve(dataset.observations().size() * 64 + dataset.outcomes().size() * 64);
  char buf[256];
  for (const auto& o : dataset.observations()) {
    std::snprintf(buf, sizeof(buf),
                  "{\"unit\":%d,\"time\":%d,\"concept\":\"%s\",\"value\":%s}\n",
                  o.unit, o.time, dataset.concept_name(o.concept_id).c_str(),
                  format_full(o.value).c_str());
    out += buf;
  }
  for (const auto& r : dataset.outcomes()) {
    std::snprintf(buf, sizeof(buf),
                  "{\"unit\":%d,\"time\":%d,\"action\":%d,\"outcome\":%s}\n",
                  r.unit, r.time, r.action, format_full(r.outcome).c_str());
    out += buf;
  }
  return out;
}

void save_dataset_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << dataset_to_jsonl(dataset);
}

Dataset load_dataset_jsonl(const std::string& path, int default_action_count) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset file: " + path);
  Dataset ds;
  int max_action = -1;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": invalid JSON line");
    UnitId unit = j.at("unit").get<UnitId>();
    int32_t time = j.at("time").get<int32_t>();
    if (j.contains("concept")) {
      int32_t cid = ds.intern_concept(j.at("concept").get<std::string>());
      ds.add_observation(unit, time, cid, j.at("value").get<double>());
    } else {
      int action = j.at("action").get<int>();
      max_action = std::max(max_action, action);
      ds.add_outcome(unit, time, action, j.at("outcome").get<double>());
    }
  }
  ds.set_action_count(std::max(default_action_count, max_action + 1));
  ds.finalize();
  return ds;
}

void save_split_csv(const SplitAssignment& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write split file: " + path);
  out << "unit,role\n";
  for (size_t u = 0; u < split.role.size(); ++u)
    out << u << ',' << split_role_name(split.role[u]) << '\n';
}

SplitAssignment load_split_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read split file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "unit,role")
    throw std::runtime_error("split file missing 'unit,role' header: " + path);
  SplitAssignment split;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed split line: " + line);
    size_t unit = static_cast<size_t>(std::stol(line.substr(0, comma)));
    SplitRole role = split_role_from_name(line.substr(comma + 1));
    if (split.role.size() <= unit) split.role.resize(unit + 1, SplitRole::test);
    split.role[unit] = role;
  }
  return split;
}

}  // namespace lmn
