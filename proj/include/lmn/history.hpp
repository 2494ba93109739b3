#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmn/domain.hpp"

namespace lmn {

// Named family of concept-id prefixes; an empty prefix list matches everything.
struct ConceptSet {
  std::string name = "ALL";
  std::vector<std::string> prefixes;

  bool matches(const std::string& concept_name) const;
  static ConceptSet all() { return {}; }
  // ALL, HEART, BREATHING, ACTIVITY, RECORDS; throws LookupError otherwise.
  static ConceptSet builtin(const std::string& name);
};

struct HistoryConfig {
  int lookback_days = 180;
  std::vector<int> scales = {7, 30, 90, 180};
  ConceptSet whitelist = ConceptSet::all();

  void validate() const;
  // Default scales restricted to a shorter lookback window.
  static HistoryConfig for_lookback(int lookback_days);
};

constexpr std::array<const char*, 5> kStatNames = {"mean", "std", "min", "max", "count"};

// Rolling statistics for one (concept, scale) cell. mean/min/max are defined
// when count >= 1, the sample standard deviation when count >= 2.
struct StatCell {
  int count = 0;
  double mean = 0.0;
  double m2 = 0.0;  // Welford sum of squared deviations
  double min = 0.0;
  double max = 0.0;

  double sd() const;  // valid only when count >= 2
};

struct HistorySummary {
  UnitId unit = 0;
  int32_t time = 0;
  std::vector<int32_t> concept_ids;  // dataset concepts kept by the whitelist, name order
  std::vector<int> scales;
  std::vector<StatCell> cells;  // concept-major: cells[c * scales + s]
  int prior_action = 0;
  std::optional<double> prior_outcome;
  // Leakage instrumentation: largest record time that contributed anything.
  int32_t max_contributing_time = INT32_MIN;

  const StatCell& cell(size_t concept_idx, size_t scale_idx) const {
    return cells[concept_idx * scales.size() + scale_idx];
  }
};

// Fixed slot ordering for feature vectors: for each retained concept (name
// order) and each scale (ascending), value+missing-indicator slots for
// mean/std/min/max and one count slot; then prior_action and prior_outcome
// (value + indicator).
class FeatureLayout {
 public:
  FeatureLayout() = default;
  FeatureLayout(const Dataset& dataset, const HistoryConfig& config);

  int size() const { return size_; }
  const std::vector<int32_t>& concept_ids() const { return concept_ids_; }
  const std::vector<int>& scales() const { return scales_; }

  struct Slot {
    std::string concept_name;  // empty for the trailing context slots
    int scale = 0;
    std::string stat;
  };
  std::vector<Slot> slots(const Dataset& dataset) const;
  void save_manifest_csv(const Dataset& dataset, const std::string& path) const;

 private:
  std::vector<int32_t> concept_ids_;
  std::vector<int> scales_;
  int size_ = 0;
  friend Eigen::VectorXd feature_vector(const HistorySummary&, const FeatureLayout&);
};

// Summary of everything observed in [time - lookback, time]. (unit, time) must
// identify an outcome record.
HistorySummary build_history(const Dataset& dataset, UnitId unit, int32_t time,
                             const HistoryConfig& config);

// Fixed-length numeric encoding; missing stats become (0, indicator=1).
Eigen::VectorXd feature_vector(const HistorySummary& summary, const FeatureLayout& layout);

// Deterministic line-oriented rendering, windows ascending and concepts in
// lexicographic order; missing stats render as "na".
std::string serialize_history_text(const HistorySummary& summary, const Dataset& dataset);

}  // namespace lmn
