#include "lmn/history.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lmn {

bool ConceptSet::matches(const std::string& concept_name) const {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes)
    if (concept_name.rfind(p, 0) == 0) return true;
  return false;
}

ConceptSet ConceptSet::builtin(const std::string& name) {
  if (name == "ALL") return {"ALL", {}};
  if (name == "HEART") return {"HEART", {"heart_"}};
  if (name == "BREATHING") return {"BREATHING", {"breathing_"}};
  if (name == "ACTIVITY") return {"ACTIVITY", {"activity_"}};
  if (name == "RECORDS") return {"RECORDS", {"records_"}};
  throw LookupError("unknown concept set: " + name);
}

void HistoryConfig::validate() const {
  if (lookback_days < 1) throw ConfigError("history.lookback must be >= 1");
  if (scales.empty()) throw ConfigError("history.scales must be non-empty");
  for (size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] > lookback_days)
      throw ConfigError("history scale " + std::to_string(scales[i]) +
                        " exceeds lookback " + std::to_string(lookback_days));
    if (i > 0 && scales[i] <= scales[i - 1])
      throw ConfigError("history.scales must be strictly increasing");
  }
}

HistoryConfig HistoryConfig::for_lookback(int lookback_days) {
  HistoryConfig cfg;
  cfg.lookback_days = lookback_days;
  cfg.scales.clear();
  for (int s : {7, 30, 90, 180})
    if (s <= lookback_days) cfg.scales.push_back(s);
  if (cfg.scales.empty()) cfg.scales.push_back(lookback_days);
  cfg.validate();
  return cfg;
}

double StatCell::sd() const {
  return count >= 2 ? std::sqrt(m2 / (count - 1)) : 0.0;
}

namespace {

std::vector<int32_t> retained_concepts(const Dataset& dataset, const ConceptSet& whitelist) {
  // Dataset concepts sorted by name so slot order never depends on insertion
  // order.
  std::vector<int32_t> ids;
  for (int32_t id = 0; id < static_cast<int32_t>(dataset.concept_names().size()); ++id)
    if (whitelist.matches(dataset.concept_name(id))) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), [&](int32_t a, int32_t b) {
    return dataset.concept_name(a) < dataset.concept_name(b);
  });
  return ids;
}

void accumulate(StatCell& cell, double value) {
  if (cell.count == 0) {
    cell.min = cell.max = value;
  } else {
    cell.min = std::min(cell.min, value);
    cell.max = std::max(cell.max, value);
  }
  ++cell.count;
  double delta = value - cell.mean;
  cell.mean += delta / cell.count;
  cell.m2 += delta * (value - cell.mean);
}

}  // namespace

FeatureLayout::FeatureLayout(const Dataset& dataset, const HistoryConfig& config) {
  config.validate();
  concept_ids_ = retained_concepts(dataset, config.whitelist);
  scales_ = config.scales;
  // Per (concept, scale): 4 stats with indicators plus a count slot; then
  // prior_action and prior_outcome (value + indicator).
  size_ = static_cast<int>(concept_ids_.size() * scales_.size()) * 9 + 3;
}

std::vector<FeatureLayout::Slot> FeatureLayout::slots(const Dataset& dataset) const {
  std::vector<Slot> out;
  out.reserve(static_cast<size_t>(size_));
  for (int32_t cid : concept_ids_) {
    const std::string& name = dataset.concept_name(cid);
    for (int scale : scales_) {
      for (const char* stat : {"mean", "std", "min", "max"}) {
        out.push_back({name, scale, stat});
        out.push_back({name, scale, std::string(stat) + "_missing"});
      }
      out.push_back({name, scale, "count"});
    }
  }
  out.push_back({"", 0, "prior_action"});
  out.push_back({"", 0, "prior_outcome"});
  out.push_back({"", 0, "prior_outcome_missing"});
  return out;
}

void FeatureLayout::save_manifest_csv(const Dataset& dataset, const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write layout manifest: " + path);
  out << "slot_index,concept,scale,stat\n";
  auto all = slots(dataset);
  for (size_t i = 0; i < all.size(); ++i)
    out << i << ',' << all[i].concept_name << ',' << all[i].scale << ',' << all[i].stat << '\n';
}

HistorySummary build_history(const Dataset& dataset, UnitId unit, int32_t time,
                             const HistoryConfig& config) {
  config.validate();
  dataset.outcome_at(unit, time);  // throws LookupError when (unit, time) is unknown

  HistorySummary summary;
  summary.unit = unit;
  summary.time = time;
  summary.concept_ids = retained_concepts(dataset, config.whitelist);
  summary.scales = config.scales;
  summary.cells.assign(summary.concept_ids.size() * summary.scales.size(), StatCell{});

  std::vector<int32_t> concept_slot(dataset.concept_names().size(), -1);
  for (size_t i = 0; i < summary.concept_ids.size(); ++i)
    concept_slot[static_cast<size_t>(summary.concept_ids[i])] = static_cast<int32_t>(i);

  const int32_t window_start = time - config.lookback_days;
  for (const Observation& obs : dataset.observations_for(unit)) {
    if (obs.time > time) continue;  // strict leakage guard: nothing after t
    if (obs.time < window_start) continue;
    int32_t slot = concept_slot[static_cast<size_t>(obs.concept_id)];
    if (slot < 0) continue;
    summary.max_contributing_time = std::max(summary.max_contributing_time, obs.time);
    for (size_t s = 0; s < summary.scales.size(); ++s) {
      if (obs.time >= time - summary.scales[s])
        accumulate(summary.cells[static_cast<size_t>(slot) * summary.scales.size() + s],
                   obs.value);
    }
  }

  for (const OutcomeRecord& rec : dataset.outcomes_for(unit)) {
    if (rec.time >= time) break;  // records are time-sorted
    summary.prior_action = rec.action;
    summary.prior_outcome = rec.outcome;
    summary.max_contributing_time = std::max(summary.max_contributing_time, rec.time);
  }
  return summary;
}

Eigen::VectorXd feature_vector(const HistorySummary& summary, const FeatureLayout& layout) {
  if (summary.concept_ids != layout.concept_ids_ || summary.scales != layout.scales_)
    throw std::runtime_error(
        "feature layout does not match the summary's concepts/scales");

  Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.size());
  int idx = 0;
  auto put = [&](double value, bool missing) {
    v[idx++] = missing ? 0.0 : value;
    v[idx++] = missing ? 1.0 : 0.0;
  };
  for (size_t c = 0; c < summary.concept_ids.size(); ++c) {
    for (size_t s = 0; s < summary.scales.size(); ++s) {
      const StatCell& cell = summary.cell(c, s);
      const bool empty = cell.count == 0;
      put(cell.mean, empty);
      put(cell.sd(), cell.count < 2);
      put(cell.min, empty);
      put(cell.max, empty);
      v[idx++] = cell.count;
    }
  }
  v[idx++] = summary.prior_action;
  put(summary.prior_outcome.value_or(0.0), !summary.prior_outcome.has_value());
  return v;
}

std::string serialize_history_text(const HistorySummary& summary, const Dataset& dataset) {
  std::string out;
  out.reserve(summary.cells.size() * 48 + 64);
  char buf[192];

  std::snprintf(buf, sizeof(buf), "HISTORY unit=%d time=%d prior_doses=%d prior_outcome=%s\n",
                summary.unit, summary.time, summary.prior_action,
                summary.prior_outcome ? format_double(*summary.prior_outcome, 2).c_str()
                                      : "na");
  out += buf;

  auto stat_str = [](bool present, double value) {
    return present ? format_double(value, 2) : std::string("na");
  };
  for (size_t s = 0; s < summary.scales.size(); ++s) {
    for (size_t c = 0; c < summary.concept_ids.size(); ++c) {
      const StatCell& cell = summary.cell(c, s);
      std::snprintf(buf, sizeof(buf), "WINDOW %dd | %s | mean=%s std=%s min=%s max=%s n=%d\n",
                    summary.scales[s],
                    dataset.concept_name(summary.concept_ids[c]).c_str(),
                    stat_str(cell.count >= 1, cell.mean).c_str(),
                    stat_str(cell.count >= 2, cell.sd()).c_str(),
                    stat_str(cell.count >= 1, cell.min).c_str(),
                    stat_str(cell.count >= 1, cell.max).c_str(), cell.count);
      out += buf;
    }
  }
  return out;
}

}  // namespace lmn
