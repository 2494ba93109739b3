#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmn/encoder.hpp"

namespace lmn {

// One p-stable (Gaussian) hash: h(z) = floor((w.z + offset) / width).
struct HashFunction {
  Eigen::VectorXd w;
  double offset = 0.0;
  double width = 1.0;
};

int64_t hash_value(const HashFunction& h, const Eigen::VectorXd& z);

enum class NeighborMode { unrestricted, action_stratified };
const char* neighbor_mode_name(NeighborMode mode);
NeighborMode neighbor_mode_from_name(const std::string& name);

struct LshParams {
  int tables = 12;
  int hashes_per_table = 8;
  // Bucket width; <= 0 derives median sampled pairwise distance / 4.
  double width = 0.0;
  uint64_t seed = 0;
};

struct QueryConfig {
  int k = 10;
  NeighborMode mode = NeighborMode::unrestricted;
  int candidate_cap = 0;  // <= 0 means 10 * k * tables
  bool fallback = true;   // widen to a linear scan when candidates < k
};

struct Neighbor {
  int32_t row;
  double distance;
};

struct QueryResult {
  std::vector<Neighbor> neighbors;  // ascending (distance, row)
  bool fell_back = false;
  int candidates_examined = 0;
};

// Multi-table index over a latent table, immutable once built; concurrent
// queries are safe.
class LshIndex {
 public:
  static LshIndex build(LatentTable rows, const LshParams& params);

  QueryResult query_knn(const Eigen::VectorXd& z, int action, const QueryConfig& cfg) const;

  const LatentTable& rows() const { return rows_; }
  const LshParams& params() const { return params_; }
  double width() const { return width_; }
  int eligible_count(int action, NeighborMode mode) const;
  size_t stored_entries() const;
  const std::vector<std::vector<HashFunction>>& hash_functions() const { return functions_; }
  uint64_t composite_key(int table, const Eigen::VectorXd& z) const;

  void save(const std::string& path) const;
  static LshIndex load(const std::string& path);

 private:
  using Bucket = std::vector<int32_t>;
  LatentTable rows_;
  LshParams params_;
  double width_ = 1.0;
  std::vector<std::vector<HashFunction>> functions_;           // [table][hash]
  std::vector<std::unordered_map<uint64_t, Bucket>> buckets_;  // per table
  std::vector<std::vector<int32_t>> rows_by_action_;

  void build_buckets();
  QueryResult scan_all(const Eigen::VectorXd& z, int action, const QueryConfig& cfg) const;
};

// Exact k-nearest oracle, ties broken by row id. The _serial variant is the
// reference implementation; the default parallelizes the distance pass and
// must return identical results.
std::vector<Neighbor> brute_force_knn(const LatentTable& rows, const Eigen::VectorXd& z,
                                      int action, int k, NeighborMode mode);
std::vector<Neighbor> brute_force_knn_serial(const LatentTable& rows,
                                             const Eigen::VectorXd& z, int action, int k,
                                             NeighborMode mode);

// Monte Carlo estimate of the collision probability of two points at the given
// distance under fresh (w, offset) draws. Chunk-seeded, so the result does not
// depend on the thread count.
double collision_rate(double width, double distance, int64_t trials, uint64_t seed);
double collision_rate_serial(double width, double distance, int64_t trials, uint64_t seed);
// The 2-stable collision integral in closed form.
double collision_rate_closed_form(double width, double distance);

double default_width(const LatentTable& rows, uint64_t seed);

// Recall / cost sweep on clustered synthetic points, shared by the benchmark
// subcommand and the sublinearity tests.
struct SweepPoint {
  int n_rows;
  double recall_at_k;
  double mean_fraction_examined;
  double fallback_rate;
  double lsh_query_ms;
  double brute_query_ms;
};

// points_per_cluster > 0 grows the cluster count with n (new rows populate new
// regions); 0 keeps a fixed n_clusters at every size.
std::vector<SweepPoint> recall_sweep(const std::vector<int>& sizes, int dim,
                                     int n_queries, int n_clusters,
                                     int points_per_cluster, double cluster_sd,
                                     const LshParams& params, const QueryConfig& query,
                                     uint64_t data_seed);

}  // namespace lmn
