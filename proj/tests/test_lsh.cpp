#include <cmath>
#include <fstream>
#include <filesystem>

#include "doctest.h"
#include "lmn/lsh.hpp"
#include "lmn/rng.hpp"

using namespace lmn;

namespace {

LatentTable random_table(int n, int dim, int actions, uint64_t seed) {
  LatentTable t;
  t.action_count = actions;
  t.rows.resize(static_cast<size_t>(n));
  t.z.resize(dim, n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) t.z(d, i) = rng.normal();
    t.rows[static_cast<size_t>(i)] = {i, 0, static_cast<int>(rng.integer(actions)), rng.normal()};
  }
  return t;
}

bool neighbors_equal(const std::vector<Neighbor>& a, const std::vector<Neighbor>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].row != b[i].row || a[i].distance != b[i].distance) return false;
  return true;
}

}  // namespace

TEST_SUITE("lsh") {

TEST_CASE("hash_value floors toward minus infinity") {
  HashFunction h;
  h.w = Eigen::VectorXd::Zero(2);
  h.offset = 0.3;
  h.width = 1.0;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  CHECK(hash_value(h, z) == 0);  // floor(0.3)

  h.w.resize(1);
  h.w << 2.5;
  h.offset = 0.0;
  Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  CHECK(hash_value(h, one) == 2);  // floor(2.5)

  h.w << -0.1;
  CHECK(hash_value(h, one) == -1);  // floor(-0.1)

  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(hash_value(h, bad), std::invalid_argument);
}

TEST_CASE("every row lands in one bucket per table") {
  LatentTable rows = random_table(500, 8, 3, 1);
  LshParams params;
  params.tables = 6;
  params.hashes_per_table = 4;
  params.seed = 2;
  LshIndex index = LshIndex::build(rows, params);
  CHECK(index.stored_entries() == 500u * 6u);
}

TEST_CASE("identical vectors share composite keys in every table") {
  LatentTable rows = random_table(50, 8, 2, 3);
  rows.z.col(7) = rows.z.col(3);
  LshParams params;
  params.seed = 4;
  LshIndex index = LshIndex::build(rows, params);
  for (int t = 0; t < params.tables; ++t)
    CHECK(index.composite_key(t, rows.z.col(7)) == index.composite_key(t, rows.z.col(3)));
}

TEST_CASE("rebuilding with the same seed is bit-identical on disk") {
  LatentTable rows = random_table(200, 6, 2, 5);
  LshParams params;
  params.seed = 6;
  auto dir = std::filesystem::temp_directory_path();
  LshIndex::build(rows, params).save((dir / "lmn_idx_a.bin").string());
  LshIndex::build(rows, params).save((dir / "lmn_idx_b.bin").string());
  std::ifstream a(dir / "lmn_idx_a.bin", std::ios::binary);
  std::ifstream b(dir / "lmn_idx_b.bin", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::filesystem::remove(dir / "lmn_idx_a.bin");
  std::filesystem::remove(dir / "lmn_idx_b.bin");
}

TEST_CASE("a stored vector is its own nearest neighbor at distance zero") {
  LatentTable rows = random_table(300, 8, 2, 7);
  LshParams params;
  params.seed = 8;
  LshIndex index = LshIndex::build(rows, params);
  QueryConfig cfg;
  cfg.k = 3;
  QueryResult res = index.query_knn(rows.z.col(42), 0, cfg);
  REQUIRE(!res.neighbors.empty());
  CHECK(res.neighbors[0].row == 42);
  CHECK(res.neighbors[0].distance == 0.0);
}

TEST_CASE("k equal to the whole stratum returns it fully sorted") {
  LatentTable rows = random_table(120, 4, 3, 9);
  LshParams params;
  params.seed = 10;
  LshIndex index = LshIndex::build(rows, params);
  const int eligible = index.eligible_count(1, NeighborMode::action_stratified);
  REQUIRE(eligible > 10);
  QueryConfig cfg;
  cfg.k = eligible;
  cfg.mode = NeighborMode::action_stratified;
  Eigen::VectorXd q = Eigen::VectorXd::Constant(4, 0.25);
  QueryResult res = index.query_knn(q, 1, cfg);
  auto exact = brute_force_knn_serial(rows, q, 1, eligible, NeighborMode::action_stratified);
  CHECK(neighbors_equal(res.neighbors, exact));
  for (size_t i = 1; i < res.neighbors.size(); ++i)
    CHECK(res.neighbors[i - 1].distance <= res.neighbors[i].distance);
}

TEST_CASE("k beyond the eligible rows raises an error naming the stratum") {
  LatentTable rows = random_table(30, 4, 2, 11);
  LshParams params;
  params.seed = 12;
  LshIndex index = LshIndex::build(rows, params);
  QueryConfig cfg;
  cfg.k = 31;
  try {
    index.query_knn(rows.z.col(0), 0, cfg);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("eligible rows") != std::string::npos);
  }
  cfg.mode = NeighborMode::action_stratified;
  try {
    index.query_knn(rows.z.col(0), 1, cfg);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("action stratum a=1") != std::string::npos);
  }
}

TEST_CASE("brute force: ordering and tie-breaks") {
  LatentTable rows;
  rows.action_count = 1;
  rows.rows = {{0, 0, 0, 0}, {1, 0, 0, 0}, {2, 0, 0, 0}};
  rows.z.resize(1, 3);
  rows.z << 1.0, 2.0, 3.0;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(1);
  auto top2 = brute_force_knn_serial(rows, q, 0, 2, NeighborMode::unrestricted);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].row == 0);
  CHECK(top2[1].row == 1);

  // equidistant pair: the lower row id wins
  rows.z << -1.0, 1.0, 3.0;
  auto tied = brute_force_knn_serial(rows, q, 0, 2, NeighborMode::unrestricted);
  CHECK(tied[0].row == 0);
  CHECK(tied[1].row == 1);
}

TEST_CASE("parallel brute force equals the serial reference") {
  LatentTable rows = random_table(4000, 12, 4, 13);
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd q(12);
    for (int d = 0; d < 12; ++d) q[d] = rng.normal();
    int action = static_cast<int>(rng.integer(4));
    auto serial = brute_force_knn_serial(rows, q, action, 15, NeighborMode::action_stratified);
    auto parallel = brute_force_knn(rows, q, action, 15, NeighborMode::action_stratified);
    CHECK(neighbors_equal(serial, parallel));
  }
}

TEST_CASE("exhaustive candidate gathering agrees with brute force") {
  LatentTable rows = random_table(600, 5, 2, 15);
  LshParams params;
  params.width = 1e9;  // everything collapses into one bucket per table
  params.seed = 16;
  LshIndex index = LshIndex::build(rows, params);
  QueryConfig cfg;
  cfg.k = 25;
  cfg.candidate_cap = 600;
  Rng rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    Eigen::VectorXd q(5);
    for (int d = 0; d < 5; ++d) q[d] = rng.normal();
    QueryResult res = index.query_knn(q, 0, cfg);
    CHECK_FALSE(res.fell_back);
    auto exact = brute_force_knn_serial(rows, q, 0, cfg.k, cfg.mode);
    CHECK(neighbors_equal(res.neighbors, exact));
  }
}

TEST_CASE("fallback completes sparse candidate sets by linear scan") {
  LatentTable rows = random_table(400, 16, 2, 18);
  LshParams params;
  params.width = 1e-6;  // every row in its own bucket; candidates are just self-hits
  params.seed = 19;
  LshIndex index = LshIndex::build(rows, params);
  QueryConfig cfg;
  cfg.k = 10;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(16);
  QueryResult res = index.query_knn(q, 0, cfg);
  CHECK(res.fell_back);
  auto exact = brute_force_knn_serial(rows, q, 0, cfg.k, cfg.mode);
  CHECK(neighbors_equal(res.neighbors, exact));

  cfg.fallback = false;
  QueryResult starved = index.query_knn(q, 0, cfg);
  CHECK_FALSE(starved.fell_back);
  CHECK(starved.neighbors.size() < 10);
}

TEST_CASE("recall on clustered rows without fallback") {
  LshParams params;
  params.seed = 20;
  QueryConfig cfg;
  cfg.k = 10;
  cfg.fallback = false;
  cfg.candidate_cap = 4000;
  auto points = recall_sweep({2000}, 16, 25, 32, 0, 0.05, params, cfg, 21);
  REQUIRE(points.size() == 1);
  CHECK(points[0].fallback_rate == 0.0);
  CHECK(points[0].recall_at_k >= 0.9);
}

TEST_CASE("recall is non-decreasing in the table count") {
  QueryConfig cfg;
  cfg.k = 10;
  cfg.fallback = false;
  cfg.candidate_cap = 4000;
  double last = -1.0;
  for (int tables : {1, 4, 12}) {
    LshParams params;
    params.tables = tables;
    // default m=8 buckets; single tables miss often enough to see the trend
    params.seed = 22;
    auto points = recall_sweep({3000}, 16, 25, 32, 0, 0.08, params, cfg, 23);
    CHECK(points[0].recall_at_k >= last - 1e-9);
    last = points[0].recall_at_k;
  }
  CHECK(last >= 0.9);
}

TEST_CASE("examined fraction shrinks as the table grows") {
  LshParams params;
  params.seed = 24;
  QueryConfig cfg;
  cfg.k = 10;
  cfg.candidate_cap = 5000;
  auto points = recall_sweep({1000, 100000}, 16, 20, 32, 100, 0.05, params, cfg, 25);
  REQUIRE(points.size() == 2);
  CHECK(points[0].recall_at_k >= 0.9);
  CHECK(points[1].recall_at_k >= 0.9);
  CHECK(points[1].mean_fraction_examined < points[0].mean_fraction_examined);
}

TEST_CASE("collision probability at zero distance is exactly one") {
  CHECK(collision_rate(1.0, 0.0, 10000, 1) == 1.0);
  CHECK(collision_rate_closed_form(1.0, 0.0) == 1.0);
}

TEST_CASE("chunk-seeded Monte Carlo matches its serial reference exactly") {
  double a = collision_rate(0.8, 1.3, 100001, 2);
  double b = collision_rate_serial(0.8, 1.3, 100001, 2);
  CHECK(a == b);
}

TEST_CASE("Monte Carlo collision rates track the closed form and decrease") {
  const double r = 1.0;
  double last = 2.0;
  for (double d : {0.5, 1.0, 2.0, 4.0}) {
    double mc = collision_rate(r, d, 200000, 3);
    double exact = collision_rate_closed_form(r, d);
    CHECK(std::abs(mc - exact) < 0.02);
    CHECK(mc < last);
    last = mc;
  }
}

TEST_CASE("returned distances are true Euclidean distances") {
  LatentTable rows = random_table(500, 6, 2, 26);
  LshParams params;
  params.seed = 27;
  LshIndex index = LshIndex::build(rows, params);
  QueryConfig cfg;
  cfg.k = 5;
  Eigen::VectorXd q = rows.z.col(99);
  QueryResult res = index.query_knn(q, 0, cfg);
  for (const Neighbor& nb : res.neighbors) {
    double direct = (rows.z.col(nb.row) - q).norm();
    CHECK(nb.distance == direct);
  }
}

TEST_CASE("index persistence round-trips queries") {
  LatentTable rows = random_table(250, 8, 3, 28);
  LshParams params;
  params.seed = 29;
  LshIndex index = LshIndex::build(rows, params);
  auto path = std::filesystem::temp_directory_path() / "lmn_idx_rt.bin";
  index.save(path.string());
  LshIndex loaded = LshIndex::load(path.string());
  CHECK(loaded.width() == index.width());
  CHECK(loaded.stored_entries() == index.stored_entries());
  Rng rng(30);
  QueryConfig cfg;
  cfg.k = 7;
  cfg.mode = NeighborMode::action_stratified;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd q(8);
    for (int d = 0; d < 8; ++d) q[d] = rng.normal();
    int a = static_cast<int>(rng.integer(3));
    CHECK(neighbors_equal(index.query_knn(q, a, cfg).neighbors,
                          loaded.query_knn(q, a, cfg).neighbors));
  }
  // save -> load -> save reproduces the same bytes
  auto path2 = std::filesystem::temp_directory_path() / "lmn_idx_rt2.bin";
  loaded.save(path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("building on zero rows is rejected") {
  LatentTable empty;
  empty.action_count = 1;
  empty.z.resize(4, 0);
  CHECK_THROWS_AS(LshIndex::build(empty, LshParams{}), std::invalid_argument);
}

}  // TEST_SUITE
