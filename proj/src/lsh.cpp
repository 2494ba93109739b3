#include "lmn/lsh.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"
#include "json.hpp"

namespace lmn {

int64_t hash_value(const HashFunction& h, const Eigen::VectorXd& z) {
  if (h.w.size() != z.size())
    throw std::invalid_argument("hash function dimension does not match vector");
  return static_cast<int64_t>(std::floor((h.w.dot(z) + h.offset) / h.width));
}

const char* neighbor_mode_name(NeighborMode mode) {
  return mode == NeighborMode::unrestricted ? "unrestricted" : "action_stratified";
}

NeighborMode neighbor_mode_from_name(const std::string& name) {
  if (name == "unrestricted") return NeighborMode::unrestricted;
  if (name == "action_stratified") return NeighborMode::action_stratified;
  throw ConfigError("unknown neighbor mode: " + name);
}

namespace {

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.row < b.row;
}

int resolved_cap(const QueryConfig& cfg, int tables) {
  int cap = cfg.candidate_cap > 0 ? cfg.candidate_cap : 10 * cfg.k * tables;
  return std::max(cap, cfg.k);
}

}  // namespace

double default_width(const LatentTable& rows, uint64_t seed) {
  const int n = rows.size();
  if (n < 2) return 1.0;
  Rng rng(hash_combine(seed, 0xd157));
  const int samples = std::min(2000, n * (n - 1) / 2);
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    int i = static_cast<int>(rng.integer(static_cast<uint64_t>(n)));
    int j = static_cast<int>(rng.integer(static_cast<uint64_t>(n - 1)));
    if (j >= i) ++j;
    dists.push_back((rows.z.col(i) - rows.z.col(j)).norm());
  }
  size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<long>(mid), dists.end());
  double median = dists[mid];
  return median > 0 ? median / 4.0 : 1.0;
}

LshIndex LshIndex::build(LatentTable rows, const LshParams& params) {
  if (rows.size() == 0) throw std::invalid_argument("cannot build an LSH index on zero rows");
  if (params.tables < 1 || params.hashes_per_table < 1)
    throw ConfigError("lsh.tables and lsh.hashes must be >= 1");

  LshIndex index;
  index.rows_ = std::move(rows);
  index.params_ = params;
  index.width_ = params.width > 0 ? params.width : default_width(index.rows_, params.seed);

  const int dim = index.rows_.dim();
  Rng rng(hash_combine(params.seed, 0x4a54));
  index.functions_.resize(static_cast<size_t>(params.tables));
  for (auto& table_fns : index.functions_) {
    table_fns.resize(static_cast<size_t>(params.hashes_per_table));
    for (auto& fn : table_fns) {
      fn.w.resize(dim);
      for (int k = 0; k < dim; ++k) fn.w[k] = rng.normal();
      fn.width = index.width_;
      fn.offset = rng.uniform(0.0, index.width_);
    }
  }

  index.build_buckets();

  index.rows_by_action_.assign(static_cast<size_t>(index.rows_.action_count), {});
  for (int i = 0; i < index.rows_.size(); ++i) {
    int a = index.rows_.rows[static_cast<size_t>(i)].action;
    if (a < 0 || a >= index.rows_.action_count)
      throw std::invalid_argument("latent row action outside the action set");
    index.rows_by_action_[static_cast<size_t>(a)].push_back(i);
  }
  return index;
}

void LshIndex::build_buckets() {
  const int n = rows_.size();
  buckets_.assign(functions_.size(), {});
#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < static_cast<int>(functions_.size()); ++t) {
    auto& table = buckets_[static_cast<size_t>(t)];
    table.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      table[composite_key(t, rows_.z.col(i))].push_back(i);
  }
}

uint64_t LshIndex::composite_key(int table, const Eigen::VectorXd& z) const {
  uint64_t key = 0xcbf29ce484222325ULL;
  for (const auto& fn : functions_[static_cast<size_t>(table)])
    key = hash_combine(key, static_cast<uint64_t>(hash_value(fn, z)));
  return key;
}

int LshIndex::eligible_count(int action, NeighborMode mode) const {
  if (mode == NeighborMode::unrestricted) return rows_.size();
  if (action < 0 || action >= static_cast<int>(rows_by_action_.size())) return 0;
  return static_cast<int>(rows_by_action_[static_cast<size_t>(action)].size());
}

size_t LshIndex::stored_entries() const {
  size_t total = 0;
  for (const auto& table : buckets_)
    for (const auto& [key, bucket] : table) total += bucket.size();
  return total;
}

QueryResult LshIndex::scan_all(const Eigen::VectorXd& z, int action,
                               const QueryConfig& cfg) const {
  QueryResult result;
  result.fell_back = true;
  const std::vector<int32_t>* pool = nullptr;
  std::vector<int32_t> everything;
  if (cfg.mode == NeighborMode::action_stratified) {
    pool = &rows_by_action_[static_cast<size_t>(action)];
  } else {
    everything.resize(static_cast<size_t>(rows_.size()));
    for (int i = 0; i < rows_.size(); ++i) everything[static_cast<size_t>(i)] = i;
    pool = &everything;
  }
  result.candidates_examined = static_cast<int>(pool->size());
  result.neighbors.reserve(pool->size());
  for (int32_t i : *pool)
    result.neighbors.push_back({i, (rows_.z.col(i) - z).norm()});
  size_t keep = std::min<size_t>(static_cast<size_t>(cfg.k), result.neighbors.size());
  std::partial_sort(result.neighbors.begin(), result.neighbors.begin() + static_cast<long>(keep),
                    result.neighbors.end(), neighbor_less);
  result.neighbors.resize(keep);
  return result;
}

QueryResult LshIndex::query_knn(const Eigen::VectorXd& z, int action,
                                const QueryConfig& cfg) const {
  if (cfg.k < 1) throw ConfigError("query k must be >= 1");
  const int eligible = eligible_count(action, cfg.mode);
  if (cfg.k > eligible)
    throw std::runtime_error(
        "k=" + std::to_string(cfg.k) + " exceeds the " + std::to_string(eligible) +
        " eligible rows" +
        (cfg.mode == NeighborMode::action_stratified
             ? " in action stratum a=" + std::to_string(action)
             : ""));

  // Per-thread visited stamps; queries on a shared index stay thread-safe.
  thread_local std::vector<uint32_t> stamp;
  thread_local uint32_t stamp_counter = 0;
  if (stamp.size() < static_cast<size_t>(rows_.size()))
    stamp.assign(static_cast<size_t>(rows_.size()), 0);
  const uint32_t mark = ++stamp_counter;

  const int cap = resolved_cap(cfg, params_.tables);
  std::vector<int32_t> candidates;
  candidates.reserve(static_cast<size_t>(std::min(cap, rows_.size())));
  for (int t = 0; t < params_.tables && static_cast<int>(candidates.size()) < cap; ++t) {
    auto it = buckets_[static_cast<size_t>(t)].find(composite_key(t, z));
    if (it == buckets_[static_cast<size_t>(t)].end()) continue;
    for (int32_t row : it->second) {
      if (static_cast<int>(candidates.size()) >= cap) break;
      if (stamp[static_cast<size_t>(row)] == mark) continue;
      if (cfg.mode == NeighborMode::action_stratified &&
          rows_.rows[static_cast<size_t>(row)].action != action)
        continue;
      stamp[static_cast<size_t>(row)] = mark;
      candidates.push_back(row);
    }
  }

  if (static_cast<int>(candidates.size()) < cfg.k && cfg.fallback)
    return scan_all(z, action, cfg);

  QueryResult result;
  result.candidates_examined = static_cast<int>(candidates.size());
  result.neighbors.reserve(candidates.size());
  for (int32_t row : candidates)
    result.neighbors.push_back({row, (rows_.z.col(row) - z).norm()});
  std::sort(result.neighbors.begin(), result.neighbors.end(), neighbor_less);
  if (static_cast<int>(result.neighbors.size()) > cfg.k)
    result.neighbors.resize(static_cast<size_t>(cfg.k));
  return result;
}

// --- exact oracle ------------------------------------------------------------

std::vector<Neighbor> brute_force_knn_serial(const LatentTable& rows,
                                             const Eigen::VectorXd& z, int action,
                                             int k, NeighborMode mode) {
  std::vector<Neighbor> all;
  all.reserve(static_cast<size_t>(rows.size()));
  for (int i = 0; i < rows.size(); ++i) {
    if (mode == NeighborMode::action_stratified &&
        rows.rows[static_cast<size_t>(i)].action != action)
      continue;
    all.push_back({i, (rows.z.col(i) - z).norm()});
  }
  if (k > static_cast<int>(all.size()))
    throw std::runtime_error("k=" + std::to_string(k) + " exceeds the " +
                             std::to_string(all.size()) + " eligible rows" +
                             (mode == NeighborMode::action_stratified
                                  ? " in action stratum a=" + std::to_string(action)
                                  : ""));
  std::partial_sort(all.begin(), all.begin() + k, all.end(), neighbor_less);
  all.resize(static_cast<size_t>(k));
  return all;
}

std::vector<Neighbor> brute_force_knn(const LatentTable& rows, const Eigen::VectorXd& z,
                                      int action, int k, NeighborMode mode) {
  const int n = rows.size();
  std::vector<int32_t> pool;
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (mode == NeighborMode::action_stratified &&
        rows.rows[static_cast<size_t>(i)].action != action)
      continue;
    pool.push_back(i);
  }
  if (k > static_cast<int>(pool.size()))
    throw std::runtime_error("k=" + std::to_string(k) + " exceeds the " +
                             std::to_string(pool.size()) + " eligible rows" +
                             (mode == NeighborMode::action_stratified
                                  ? " in action stratum a=" + std::to_string(action)
                                  : ""));

  std::vector<Neighbor> all(pool.size());
#pragma omp parallel for schedule(static)
  for (long idx = 0; idx < static_cast<long>(pool.size()); ++idx) {
    int32_t i = pool[static_cast<size_t>(idx)];
    all[static_cast<size_t>(idx)] = {i, (rows.z.col(i) - z).norm()};
  }
  std::partial_sort(all.begin(), all.begin() + k, all.end(), neighbor_less);
  all.resize(static_cast<size_t>(k));
  return all;
}

// --- collision law ------------------------------------------------------------

namespace {

constexpr int64_t kCollisionChunk = 4096;

int64_t collision_chunk_hits(double width, double distance, int64_t count, Rng rng) {
  int64_t hits = 0;
  for (int64_t t = 0; t < count; ++t) {
    double projection = rng.normal() * distance;
    double offset = rng.uniform(0.0, width);
    // The first point sits at the origin: its hash is floor(offset/width) = 0.
    if (std::floor((projection + offset) / width) == 0.0) ++hits;
  }
  return hits;
}

}  // namespace

double collision_rate(double width, double distance, int64_t trials, uint64_t seed) {
  if (width <= 0) throw ConfigError("collision width must be positive");
  if (distance < 0 || trials < 1)
    throw ConfigError("collision distance must be >= 0 and trials >= 1");
  const int64_t chunks = (trials + kCollisionChunk - 1) / kCollisionChunk;
  int64_t hits = 0;
  Rng master(seed);
#pragma omp parallel for schedule(static) reduction(+ : hits)
  for (int64_t c = 0; c < chunks; ++c) {
    int64_t count = std::min<int64_t>(kCollisionChunk, trials - c * kCollisionChunk);
    hits += collision_chunk_hits(width, distance, count,
                                 master.derive(static_cast<uint64_t>(c)));
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

double collision_rate_serial(double width, double distance, int64_t trials, uint64_t seed) {
  if (width <= 0) throw ConfigError("collision width must be positive");
  if (distance < 0 || trials < 1)
    throw ConfigError("collision distance must be >= 0 and trials >= 1");
  const int64_t chunks = (trials + kCollisionChunk - 1) / kCollisionChunk;
  int64_t hits = 0;
  Rng master(seed);
  for (int64_t c = 0; c < chunks; ++c) {
    int64_t count = std::min<int64_t>(kCollisionChunk, trials - c * kCollisionChunk);
    hits += collision_chunk_hits(width, distance, count,
                                 master.derive(static_cast<uint64_t>(c)));
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

double collision_rate_closed_form(double width, double distance) {
  if (width <= 0) throw ConfigError("collision width must be positive");
  if (distance < 0) throw ConfigError("collision distance must be >= 0");
  if (distance == 0) return 1.0;
  const double ratio = width / distance;
  const double phi = 0.5 * std::erfc(-ratio / std::sqrt(2.0));
  return 2.0 * phi - 1.0 -
         (2.0 / (ratio * std::sqrt(2.0 * M_PI))) * (1.0 - std::exp(-0.5 * ratio * ratio));
}

// --- persistence ---------------------------------------------------------------

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("truncated index file");
  return value;
}

}  // namespace

void LshIndex::save(const std::string& path) const {
  nlohmann::json header;
  header["format"] = "latentmatch-lsh";
  header["version"] = 1;
  header["byte_order"] = "little-endian";
  header["tables"] = params_.tables;
  header["hashes_per_table"] = params_.hashes_per_table;
  header["width"] = width_;
  header["seed"] = params_.seed;
  header["rows"] = rows_.size();
  header["dim"] = rows_.dim();
  header["action_count"] = rows_.action_count;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index file: " + path);
  out << header.dump() << '\n';

  for (const auto& table_fns : functions_) {
    for (const auto& fn : table_fns) {
      out.write(reinterpret_cast<const char*>(fn.w.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(fn.w.size())));
      write_raw(out, fn.offset);
    }
  }

  // Buckets serialized in sorted key order so identical indexes produce
  // identical bytes.
  for (const auto& table : buckets_) {
    std::vector<uint64_t> keys;
    keys.reserve(table.size());
    for (const auto& [key, bucket] : table) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    write_raw(out, static_cast<uint64_t>(keys.size()));
    for (uint64_t key : keys) {
      const auto& bucket = table.at(key);
      write_raw(out, key);
      write_raw(out, static_cast<uint32_t>(bucket.size()));
      out.write(reinterpret_cast<const char*>(bucket.data()),
                static_cast<std::streamsize>(sizeof(int32_t) * bucket.size()));
    }
  }

  for (int i = 0; i < rows_.size(); ++i) {
    const LatentRow& row = rows_.rows[static_cast<size_t>(i)];
    write_raw(out, row.unit);
    write_raw(out, row.time);
    write_raw(out, static_cast<int32_t>(row.action));
    write_raw(out, row.outcome);
    out.write(reinterpret_cast<const char*>(rows_.z.col(i).data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(rows_.dim())));
  }
}

LshIndex LshIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read index file: " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("index file missing header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (header.value("format", "") != "latentmatch-lsh")
    throw std::runtime_error("not an LSH index file: " + path);

  LshIndex index;
  index.params_.tables = header.at("tables").get<int>();
  index.params_.hashes_per_table = header.at("hashes_per_table").get<int>();
  index.params_.seed = header.at("seed").get<uint64_t>();
  index.params_.width = header.at("width").get<double>();
  index.width_ = index.params_.width;
  const int rows = header.at("rows").get<int>();
  const int dim = header.at("dim").get<int>();

  index.functions_.resize(static_cast<size_t>(index.params_.tables));
  for (auto& table_fns : index.functions_) {
    table_fns.resize(static_cast<size_t>(index.params_.hashes_per_table));
    for (auto& fn : table_fns) {
      fn.w.resize(dim);
      in.read(reinterpret_cast<char*>(fn.w.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(dim)));
      fn.offset = read_raw<double>(in);
      fn.width = index.width_;
    }
  }

  index.buckets_.resize(static_cast<size_t>(index.params_.tables));
  for (auto& table : index.buckets_) {
    uint64_t n_buckets = read_raw<uint64_t>(in);
    table.reserve(n_buckets);
    for (uint64_t b = 0; b < n_buckets; ++b) {
      uint64_t key = read_raw<uint64_t>(in);
      uint32_t size = read_raw<uint32_t>(in);
      Bucket bucket(size);
      in.read(reinterpret_cast<char*>(bucket.data()),
              static_cast<std::streamsize>(sizeof(int32_t) * size));
      table.emplace(key, std::move(bucket));
    }
  }

  index.rows_.action_count = header.at("action_count").get<int>();
  index.rows_.rows.resize(static_cast<size_t>(rows));
  index.rows_.z.resize(dim, rows);
  for (int i = 0; i < rows; ++i) {
    LatentRow& row = index.rows_.rows[static_cast<size_t>(i)];
    row.unit = read_raw<UnitId>(in);
    row.time = read_raw<int32_t>(in);
    row.action = read_raw<int32_t>(in);
    row.outcome = read_raw<double>(in);
    in.read(reinterpret_cast<char*>(index.rows_.z.col(i).data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(dim)));
  }
  if (!in) throw std::runtime_error("truncated index file: " + path);

  index.rows_by_action_.assign(static_cast<size_t>(index.rows_.action_count), {});
  for (int i = 0; i < index.rows_.size(); ++i)
    index.rows_by_action_[static_cast<size_t>(index.rows_.rows[static_cast<size_t>(i)].action)]
        .push_back(i);
  return index;
}

// --- sweep harness --------------------------------------------------------------

std::vector<SweepPoint> recall_sweep(const std::vector<int>& sizes, int dim,
                                     int n_queries, int n_clusters,
                                     int points_per_cluster, double cluster_sd,
                                     const LshParams& params, const QueryConfig& query,
                                     uint64_t data_seed) {
  std::vector<SweepPoint> out;
  Rng master(data_seed);

  for (int n : sizes) {
    const int clusters =
        points_per_cluster > 0 ? std::max(n_clusters, n / points_per_cluster) : n_clusters;
    Eigen::MatrixXd centers(dim, clusters);
    {
      Rng center_rng = master.derive(0xce000000ULL + static_cast<uint64_t>(n));
      for (int c = 0; c < clusters; ++c)
        for (int k = 0; k < dim; ++k) centers(k, c) = center_rng.normal();
    }

    LatentTable rows;
    rows.action_count = 1;
    rows.rows.resize(static_cast<size_t>(n));
    rows.z.resize(dim, n);
    Rng row_rng = master.derive(0xda7a0000ULL + static_cast<uint64_t>(n));
    for (int i = 0; i < n; ++i) {
      int c = static_cast<int>(row_rng.integer(static_cast<uint64_t>(clusters)));
      for (int k = 0; k < dim; ++k)
        rows.z(k, i) = centers(k, c) + cluster_sd * row_rng.normal();
      rows.rows[static_cast<size_t>(i)] = {static_cast<UnitId>(i), 0, 0, 0.0};
    }

    LshIndex index = LshIndex::build(rows, params);

    Rng query_rng = master.derive(0x9e0000ULL + static_cast<uint64_t>(n));
    double recall_sum = 0, fraction_sum = 0, fallback_sum = 0;
    double lsh_ms = 0, brute_ms = 0;
    for (int q = 0; q < n_queries; ++q) {
      Eigen::VectorXd z(dim);
      int c = static_cast<int>(query_rng.integer(static_cast<uint64_t>(clusters)));
      for (int k = 0; k < dim; ++k) z[k] = centers(k, c) + cluster_sd * query_rng.normal();

      auto t0 = std::chrono::steady_clock::now();
      QueryResult approx = index.query_knn(z, 0, query);
      auto t1 = std::chrono::steady_clock::now();
      auto exact = brute_force_knn_serial(rows, z, 0, query.k, query.mode);
      auto t2 = std::chrono::steady_clock::now();
      lsh_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
      brute_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();

      std::vector<int32_t> truth;
      truth.reserve(exact.size());
      for (const auto& nb : exact) truth.push_back(nb.row);
      std::sort(truth.begin(), truth.end());
      int found = 0;
      for (const auto& nb : approx.neighbors)
        if (std::binary_search(truth.begin(), truth.end(), nb.row)) ++found;
      recall_sum += static_cast<double>(found) / query.k;
      fraction_sum += static_cast<double>(approx.candidates_examined) / n;
      fallback_sum += approx.fell_back ? 1.0 : 0.0;
    }
    out.push_back({n, recall_sum / n_queries, fraction_sum / n_queries,
                   fallback_sum / n_queries, lsh_ms / n_queries, brute_ms / n_queries});
  }
  return out;
}

}  // namespace lmn
