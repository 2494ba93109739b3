#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmn/common.hpp"

namespace lmn {

using UnitId = int32_t;

// One measured concept value for a unit at an integer day offset.
struct Observation {
  UnitId unit;
  int32_t time;
  int32_t concept_id;  // index into Dataset::concept_names()
  double value;
};

// One outcome measurement together with the cumulative dose at that moment.
struct OutcomeRecord {
  UnitId unit;
  int32_t time;
  int32_t action;
  double outcome;
};

// Immutable after finalize(). Observations and outcomes are stored sorted by
// (unit, time) with per-unit ranges, so read access is cheap and the dataset
// can be shared read-only across worker threads.
class Dataset {
 public:
  int32_t intern_concept(const std::string& name);
  const std::string& concept_name(int32_t id) const { return concept_names_.at(id); }
  const std::vector<std::string>& concept_names() const { return concept_names_; }

  void add_observation(UnitId unit, int32_t time, int32_t concept_id, double value);
  void add_outcome(UnitId unit, int32_t time, int32_t action, double outcome);

  void set_action_count(int a) { action_count_ = a; }
  void set_unit_count(int n) { unit_count_ = n; }

  // Sorts records and builds per-unit ranges. Must be called once, after all
  // records are added and before any read access.
  void finalize();
  bool finalized() const { return finalized_; }

  int unit_count() const { return unit_count_; }
  int action_count() const { return action_count_; }

  const std::vector<Observation>& observations() const { return observations_; }
  const std::vector<OutcomeRecord>& outcomes() const { return outcomes_; }
  std::span<const Observation> observations_for(UnitId unit) const;
  std::span<const OutcomeRecord> outcomes_for(UnitId unit) const;

  // The outcome record at exactly (unit, time); throws LookupError if absent.
  const OutcomeRecord& outcome_at(UnitId unit, int32_t time) const;

 private:
  std::vector<std::string> concept_names_;
  std::unordered_map<std::string, int32_t> concept_ids_;
  std::vector<Observation> observations_;
  std::vector<OutcomeRecord> outcomes_;
  std::vector<std::pair<size_t, size_t>> obs_range_;  // per unit [begin, end)
  std::vector<std::pair<size_t, size_t>> out_range_;
  int unit_count_ = 0;
  int action_count_ = 7;
  bool finalized_ = false;
};

enum class SplitRole { train, validation, test };

const char* split_role_name(SplitRole role);
SplitRole split_role_from_name(const std::string& name);

struct SplitAssignment {
  std::vector<SplitRole> role;  // indexed by unit id

  SplitRole of(UnitId unit) const { return role.at(static_cast<size_t>(unit)); }
  int count(SplitRole r) const;
};

struct Violation {
  UnitId unit;
  int32_t time;
  std::string rule;
};

// Report-based validation; an empty result means every invariant holds.
std::vector<Violation> validate_dataset(const Dataset& dataset);

// Participant-level split. Deterministic in the seed; realized counts are
// within one unit of fraction * N.
SplitAssignment split_units(const Dataset& dataset, double train_frac,
                            double validation_frac, double test_frac,
                            uint64_t seed);

// --- file formats ---------------------------------------------------------
// Dataset files are JSON Lines; observation lines carry a "concept" key,
// outcome lines an "action" key. Split files are CSV with header "unit,role".

void save_dataset_jsonl(const Dataset& dataset, const std::string& path);
Dataset load_dataset_jsonl(const std::string& path, int default_action_count = 7);
std::string dataset_to_jsonl(const Dataset& dataset);

void save_split_csv(const SplitAssignment& split, const std::string& path);
SplitAssignment load_split_csv(const std::string& path);

}  // namespace lmn
