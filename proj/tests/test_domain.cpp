#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lmn/domain.hpp"
#include "lmn/sha256.hpp"

using namespace lmn;

namespace {

Dataset toy_dataset() {
  Dataset ds;
  int32_t hr = ds.intern_concept("heart_rate_weekly_mean");
  ds.add_observation(0, 1, hr, 72.0);
  ds.add_observation(0, 8, hr, 74.5);
  ds.add_observation(1, 2, hr, 60.0);
  ds.add_outcome(0, 10, 0, 4.0);
  ds.add_outcome(0, 40, 1, 3.5);
  ds.add_outcome(1, 12, 2, 6.0);
  ds.set_action_count(7);
  ds.finalize();
  return ds;
}

}  // namespace

TEST_SUITE("domain") {

TEST_CASE("well-formed toy dataset validates cleanly") {
  Dataset ds = toy_dataset();
  CHECK(validate_dataset(ds).empty());
  CHECK(ds.unit_count() == 2);
  CHECK(ds.outcomes_for(0).size() == 2);
  CHECK(ds.observations_for(1).size() == 1);
}

TEST_CASE("decreasing cumulative dose is reported") {
  Dataset ds;
  ds.add_outcome(0, 5, 1, 2.0);
  ds.add_outcome(0, 9, 0, 2.0);
  ds.finalize();
  auto report = validate_dataset(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].unit == 0);
  CHECK(report[0].time == 9);
  CHECK(report[0].rule.find("non-monotone action") != std::string::npos);
}

TEST_CASE("duplicate outcome time is reported") {
  Dataset ds;
  ds.add_outcome(0, 5, 1, 2.0);
  ds.add_outcome(0, 5, 1, 2.5);
  ds.finalize();
  auto report = validate_dataset(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].rule.find("duplicate outcome") != std::string::npos);
}

TEST_CASE("out-of-range actions and non-finite values are reported") {
  Dataset ds;
  int32_t c = ds.intern_concept("activity_steps");
  ds.add_observation(0, 1, c, std::nan(""));
  ds.add_outcome(0, 5, 9, 2.0);  // action outside [0, 7)
  ds.set_action_count(7);
  ds.finalize();
  auto report = validate_dataset(ds);
  bool saw_action = false, saw_value = false;
  for (const auto& v : report) {
    if (v.rule.find("action outside") != std::string::npos) saw_action = true;
    if (v.rule.find("non-finite observation") != std::string::npos) saw_value = true;
  }
  CHECK(saw_action);
  CHECK(saw_value);
}

TEST_CASE("split_units hits exact rounding on N=10") {
  Dataset ds;
  for (int u = 0; u < 10; ++u) ds.add_outcome(u, 1, 0, 0.0);
  ds.finalize();
  SplitAssignment split = split_units(ds, 0.7, 0.1, 0.2, 1);
  CHECK(split.count(SplitRole::train) == 7);
  CHECK(split.count(SplitRole::validation) == 1);
  CHECK(split.count(SplitRole::test) == 2);
}

TEST_CASE("split_units at the cohort scale lands within one of the fractions") {
  Dataset ds;
  for (int u = 0; u < 13511; ++u) ds.add_outcome(u, 1, 0, 0.0);
  ds.finalize();
  SplitAssignment split = split_units(ds, 0.7, 0.1, 0.2, 3);
  CHECK(std::abs(split.count(SplitRole::train) - 9458) <= 1);
  CHECK(std::abs(split.count(SplitRole::validation) - 1351) <= 1);
  CHECK(std::abs(split.count(SplitRole::test) - 2702) <= 1);
  CHECK(split.count(SplitRole::train) + split.count(SplitRole::validation) +
            split.count(SplitRole::test) ==
        13511);
}

TEST_CASE("split_units is deterministic in the seed") {
  Dataset ds;
  for (int u = 0; u < 257; ++u) ds.add_outcome(u, 1, 0, 0.0);
  ds.finalize();
  SplitAssignment a = split_units(ds, 0.7, 0.1, 0.2, 42);
  SplitAssignment b = split_units(ds, 0.7, 0.1, 0.2, 42);
  SplitAssignment c = split_units(ds, 0.7, 0.1, 0.2, 43);
  CHECK(a.role == b.role);
  CHECK(a.role != c.role);
}

TEST_CASE("invalid fractions are rejected with a message") {
  Dataset ds = toy_dataset();
  CHECK_THROWS_AS(split_units(ds, 0.8, 0.1, 0.2, 0), ConfigError);
  CHECK_THROWS_AS(split_units(ds, -0.1, 0.9, 0.2, 0), ConfigError);
  try {
    split_units(ds, 0.5, 0.1, 0.2, 0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("sum to 1") != std::string::npos);
  }
}

TEST_CASE("dataset JSONL round-trips") {
  Dataset ds = toy_dataset();
  auto path = std::filesystem::temp_directory_path() / "lmn_test_dataset.jsonl";
  save_dataset_jsonl(ds, path.string());
  Dataset loaded = load_dataset_jsonl(path.string());
  CHECK(dataset_to_jsonl(loaded) == dataset_to_jsonl(ds));
  CHECK(loaded.unit_count() == ds.unit_count());
  CHECK(loaded.action_count() == ds.action_count());
  std::filesystem::remove(path);
}

TEST_CASE("split CSV round-trips") {
  Dataset ds;
  for (int u = 0; u < 23; ++u) ds.add_outcome(u, 1, 0, 0.0);
  ds.finalize();
  SplitAssignment split = split_units(ds, 0.7, 0.1, 0.2, 9);
  auto path = std::filesystem::temp_directory_path() / "lmn_test_split.csv";
  save_split_csv(split, path.string());
  SplitAssignment loaded = load_split_csv(path.string());
  CHECK(loaded.role == split.role);
  std::filesystem::remove(path);
}

TEST_CASE("outcome lookup by (unit, time)") {
  Dataset ds = toy_dataset();
  CHECK(ds.outcome_at(0, 40).action == 1);
  CHECK_THROWS_AS(ds.outcome_at(0, 41), LookupError);
  CHECK_THROWS_AS(ds.outcome_at(5, 10), LookupError);
}

TEST_CASE("sha256 matches known vectors") {
  CHECK(Sha256::hex_digest("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(Sha256::hex_digest("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // TEST_SUITE
