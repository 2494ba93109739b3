#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lmn/eval.hpp"
#include "lmn/rng.hpp"

using namespace lmn;

namespace {

// Oracle with two records and three actions, values chosen for hand arithmetic.
OracleTable tiny_oracle() {
  OracleTable oracle;
  OracleRecord a;
  a.unit = 0;
  a.time = 10;
  a.theta = Eigen::Vector3d(1.0, 2.0, 3.0);
  a.propensity = Eigen::Vector3d(0.3, 0.3, 0.4);
  OracleRecord b;
  b.unit = 1;
  b.time = 20;
  b.theta = Eigen::Vector3d(2.0, 0.0, 4.0);
  b.propensity = Eigen::Vector3d(0.2, 0.5, 0.3);
  oracle.add(a);
  oracle.add(b);
  return oracle;
}

ThetaTable table_from(const OracleTable& oracle, double shift) {
  ThetaTable t;
  t.action_count = oracle.action_count();
  for (const auto& rec : oracle.records())
    for (int a = 0; a < t.action_count; ++a)
      t.rows.push_back({rec.unit, rec.time, a, rec.theta[a] + shift, rec.theta[a] + shift,
                        0.0, 1, false});
  return t;
}

LatentTable blob_table(int units_per_blob, uint64_t seed) {
  // three well-separated blobs in 2-d, several rows per unit
  LatentTable t;
  t.action_count = 2;
  Rng rng(seed);
  std::vector<Eigen::Vector2d> centers = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  std::vector<Eigen::VectorXd> zs;
  for (int blob = 0; blob < 3; ++blob) {
    for (int u = 0; u < units_per_blob; ++u) {
      UnitId unit = blob * units_per_blob + u;
      for (int rec = 0; rec < 3; ++rec) {
        Eigen::VectorXd z = centers[static_cast<size_t>(blob)] +
                            Eigen::Vector2d(0.1 * rng.normal(), 0.1 * rng.normal());
        t.rows.push_back({unit, rec, 0, 0.0});
        zs.push_back(z);
      }
    }
  }
  t.z.resize(2, static_cast<long>(zs.size()));
  for (size_t i = 0; i < zs.size(); ++i) t.z.col(static_cast<long>(i)) = zs[i];
  return t;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("a perfect table scores zero everywhere") {
  OracleTable oracle = tiny_oracle();
  MetricsReport report = score(table_from(oracle, 0.0), oracle);
  CHECK(report.rmse_overall == 0.0);
  CHECK(report.pehe == 0.0);
  CHECK(report.policy_value_gap == 0.0);
  CHECK(report.bias_per_action.cwiseAbs().maxCoeff() == 0.0);
  CHECK(report.n_records == 2);
}

TEST_CASE("a constant shift moves bias but not the pairwise-effect error") {
  OracleTable oracle = tiny_oracle();
  MetricsReport report = score(table_from(oracle, 1.0), oracle);
  CHECK(report.rmse_overall == doctest::Approx(1.0).epsilon(1e-12));
  for (int a = 0; a < 3; ++a)
    CHECK(report.bias_per_action[a] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.pehe == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.policy_value_gap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-record hand computation") {
  // theta_hat: record (0,10): (1.5, 2.0, 3.0); record (1,20): (2.0, 1.0, 4.0)
  // errors: a0: {0.5, 0}  a1: {0, 1.0}  a2: {0, 0}
  // per-action rmse: a0 sqrt(0.125), a1 sqrt(0.5), a2 0
  // overall rmse = sqrt((0.25 + 1.0) / 6)
  // pairwise errors per record: r1: (0-1): 0.5, (0-2): 0.5, (1-2): 0
  //                             r2: (0-1): -1,  (0-2): 0,   (1-2): 1
  // pehe = sqrt((0.25 + 0.25 + 0 + 1 + 0 + 1) / 6) = sqrt(2.5 / 6)
  // policy: argmin theta r1 = a0 (1.0), r2 = a1 (0.0)
  //   mean theta_hat at pi* = (1.5 + 1.0)/2 = 1.25; truth = (1.0 + 0.0)/2 = 0.5
  //   gap = 0.75
  OracleTable oracle = tiny_oracle();
  ThetaTable t = table_from(oracle, 0.0);
  t.rows[0].theta = 1.5;  // (0,10,a0)
  t.rows[4].theta = 1.0;  // (1,20,a1)
  MetricsReport report = score(t, oracle);
  CHECK(report.rmse_overall == doctest::Approx(std::sqrt(1.25 / 6)).epsilon(1e-12));
  CHECK(report.rmse_per_action[0] == doctest::Approx(std::sqrt(0.125)).epsilon(1e-12));
  CHECK(report.rmse_per_action[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(report.rmse_per_action[2] == 0.0);
  CHECK(report.pehe == doctest::Approx(std::sqrt(2.5 / 6)).epsilon(1e-12));
  CHECK(report.policy_value_gap == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("score is invariant to the row order of the table") {
  OracleTable oracle = tiny_oracle();
  ThetaTable t = table_from(oracle, 0.3);
  t.rows[0].theta += 0.7;
  t.rows[3].theta -= 0.2;
  ThetaTable shuffled = t;
  std::reverse(shuffled.rows.begin(), shuffled.rows.end());
  MetricsReport a = score(t, oracle);
  MetricsReport b = score(shuffled, oracle);
  CHECK(a.rmse_overall == b.rmse_overall);
  CHECK(a.pehe == b.pehe);
  CHECK(a.policy_value_gap == b.policy_value_gap);
}

TEST_CASE("per-action errors reaggregate to the overall rmse") {
  OracleTable oracle = tiny_oracle();
  ThetaTable t = table_from(oracle, 0.0);
  Rng rng(4);
  for (auto& e : t.rows) e.theta += 0.5 * rng.normal();
  MetricsReport report = score(t, oracle);
  double total = 0;
  for (int a = 0; a < 3; ++a)
    total += report.rmse_per_action[a] * report.rmse_per_action[a] * 2;  // 2 records each
  CHECK(std::sqrt(total / 6) == doctest::Approx(report.rmse_overall).epsilon(1e-9));
}

TEST_CASE("a coverage gap is reported with the missing keys") {
  OracleTable oracle = tiny_oracle();
  ThetaTable t = table_from(oracle, 0.0);
  t.rows.push_back({9, 99, 0, 1.0, 1.0, 0.0, 1, false});
  try {
    score(t, oracle);
    FAIL("expected LookupError");
  } catch (const LookupError& e) {
    CHECK(std::string(e.what()).find("(9,99)") != std::string::npos);
  }
}

TEST_CASE("well-separated blobs are recovered as phenotypes") {
  LatentTable table = blob_table(12, 5);
  PhenotypeAssignment pheno = assign_phenotypes(table, 3, 6);
  REQUIRE(pheno.units.size() == 36);
  // all units of a blob share a label, and the three blobs get distinct labels
  std::vector<int> blob_label(3, -1);
  for (size_t i = 0; i < pheno.units.size(); ++i) {
    int blob = pheno.units[i] / 12;
    if (blob_label[static_cast<size_t>(blob)] < 0)
      blob_label[static_cast<size_t>(blob)] = pheno.cluster_of[i];
    CHECK(pheno.cluster_of[i] == blob_label[static_cast<size_t>(blob)]);
  }
  std::sort(blob_label.begin(), blob_label.end());
  CHECK(blob_label == std::vector<int>{0, 1, 2});
}

TEST_CASE("one cluster assigns every unit the same phenotype") {
  LatentTable table = blob_table(5, 7);
  PhenotypeAssignment pheno = assign_phenotypes(table, 1, 8);
  for (int c : pheno.cluster_of) CHECK(c == 0);
}

TEST_CASE("phenotype assignment is deterministic and its objective non-increasing") {
  LatentTable table = blob_table(9, 9);
  PhenotypeAssignment a = assign_phenotypes(table, 3, 10);
  PhenotypeAssignment b = assign_phenotypes(table, 3, 10);
  CHECK(a.cluster_of == b.cluster_of);
  for (size_t i = 1; i < a.inertia_trace.size(); ++i)
    CHECK(a.inertia_trace[i] <= a.inertia_trace[i - 1] + 1e-9);
  CHECK_THROWS_AS(assign_phenotypes(table, 100, 1), std::runtime_error);
}

TEST_CASE("constant estimates give a flat curve with zero dispersion") {
  ThetaTable t;
  t.action_count = 4;
  for (UnitId u = 0; u < 6; ++u)
    for (int a = 0; a < 4; ++a) t.rows.push_back({u, 0, a, 2.5, 2.5, 0.0, 1, false});
  auto curves = effect_curves(t, nullptr, 4);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].group == "all");
  CHECK(curves[0].n_units == 6);
  for (int a = 0; a < 4; ++a) {
    CHECK(curves[0].mean_theta[a] == 2.5);
    CHECK(curves[0].sd_theta[a] == 0.0);
  }
}

TEST_CASE("a dose-response column shaped like the reported tables peaks at a=1") {
  const std::vector<double> column = {3.76, 10.42, 9.68, 4.54, 3.92, 4.46, 3.68};
  ThetaTable t;
  t.action_count = 7;
  for (int a = 0; a < 7; ++a)
    t.rows.push_back({0, 0, a, column[static_cast<size_t>(a)],
                      column[static_cast<size_t>(a)], 0.0, 1, false});
  auto curves = effect_curves(t, nullptr, 7);
  REQUIRE(curves.size() == 1);
  int peak = 0;
  curves[0].mean_theta.maxCoeff(&peak);
  CHECK(peak == 1);
}

TEST_CASE("groups with distinct levels produce offset curves") {
  LatentTable latents = blob_table(8, 11);
  PhenotypeAssignment pheno = assign_phenotypes(latents, 3, 12);
  ThetaTable t;
  t.action_count = 2;
  for (size_t i = 0; i < pheno.units.size(); ++i) {
    double level = 1.0 + 2.0 * pheno.cluster_of[i];
    for (int a = 0; a < 2; ++a)
      t.rows.push_back({pheno.units[i], 0, a, level + a, level + a, 0.0, 1, false});
  }
  auto curves = effect_curves(t, &pheno, 2);
  REQUIRE(curves.size() == 3);
  for (const auto& c : curves) {
    int cluster = c.group.back() - '0';
    CHECK(c.mean_theta[0] == doctest::Approx(1.0 + 2.0 * cluster));
    CHECK(c.mean_theta[1] == doctest::Approx(2.0 + 2.0 * cluster));
    CHECK(c.sd_theta[0] == doctest::Approx(0.0));
  }
  auto diffs = curve_differences(curves, curves);
  for (const auto& d : diffs) CHECK(d.delta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("curve files are written with the expected headers") {
  ThetaTable t;
  t.action_count = 2;
  for (UnitId u = 0; u < 4; ++u)
    for (int a = 0; a < 2; ++a)
      t.rows.push_back({u, 0, a, 1.0 * a + u, 1.0 * a + u, 0.0, 1, false});
  auto curves = effect_curves(t, nullptr, 2);
  auto dir = std::filesystem::temp_directory_path();
  save_curves_csv(curves, (dir / "lmn_curves.csv").string());
  save_curves_svg(curves, (dir / "lmn_curves.svg").string());
  std::ifstream csv(dir / "lmn_curves.csv");
  std::string first;
  std::getline(csv, first);
  CHECK(first == "group,action,mean_theta,sd_theta,n");
  std::ifstream svg(dir / "lmn_curves.svg");
  std::string body((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  CHECK(body.find("<svg") != std::string::npos);
  CHECK(body.find("polyline") != std::string::npos);
  std::filesystem::remove(dir / "lmn_curves.csv");
  std::filesystem::remove(dir / "lmn_curves.svg");
}

}  // TEST_SUITE
