// Timing harness for the OpenMP kernels against their serial references.
// Each pair must agree exactly; the table reports wall time per call.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "lmn/encoder.hpp"
#include "lmn/lsh.hpp"
#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

lmn::LatentTable random_table(int n, int dim, uint64_t seed) {
  lmn::LatentTable table;
  table.action_count = 7;
  table.rows.resize(static_cast<size_t>(n));
  table.z.resize(dim, n);
  lmn::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) table.z(d, i) = rng.normal();
    table.rows[static_cast<size_t>(i)] = {i, 0, static_cast<int>(rng.integer(7)),
                                          rng.normal()};
  }
  return table;
}

void report(const char* kernel, double serial_ms, double parallel_ms, bool equal) {
  std::printf("%-24s serial %9.2f ms   omp %9.2f ms   speedup %5.2fx   match %s\n",
              kernel, serial_ms, parallel_ms,
              parallel_ms > 0 ? serial_ms / parallel_ms : 0.0, equal ? "yes" : "NO");
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", lmn::max_threads());

  {
    const int n = 50000, dim = 16, queries = 50, k = 10;
    lmn::LatentTable table = random_table(n, dim, 1);
    lmn::Rng rng(2);
    std::vector<Eigen::VectorXd> qs;
    for (int q = 0; q < queries; ++q) {
      Eigen::VectorXd z(dim);
      for (int d = 0; d < dim; ++d) z[d] = rng.normal();
      qs.push_back(z);
    }

    auto t0 = Clock::now();
    std::vector<std::vector<lmn::Neighbor>> serial;
    for (const auto& z : qs)
      serial.push_back(lmn::brute_force_knn_serial(table, z, 0, k, lmn::NeighborMode::unrestricted));
    double serial_ms = ms_since(t0);

    t0 = Clock::now();
    std::vector<std::vector<lmn::Neighbor>> parallel;
    for (const auto& z : qs)
      parallel.push_back(lmn::brute_force_knn(table, z, 0, k, lmn::NeighborMode::unrestricted));
    double parallel_ms = ms_since(t0);

    bool equal = true;
    for (int q = 0; q < queries && equal; ++q)
      for (int i = 0; i < k && equal; ++i)
        equal = serial[static_cast<size_t>(q)][static_cast<size_t>(i)].row ==
                parallel[static_cast<size_t>(q)][static_cast<size_t>(i)].row;
    report("brute_force_knn", serial_ms, parallel_ms, equal);
  }

  {
    const int64_t trials = 2'000'000;
    auto t0 = Clock::now();
    double serial = lmn::collision_rate_serial(1.0, 1.0, trials, 7);
    double serial_ms = ms_since(t0);
    t0 = Clock::now();
    double parallel = lmn::collision_rate(1.0, 1.0, trials, 7);
    double parallel_ms = ms_since(t0);
    report("collision_rate mc", serial_ms, parallel_ms, serial == parallel);
    std::printf("  estimate %.5f vs closed form %.5f\n", parallel,
                lmn::collision_rate_closed_form(1.0, 1.0));
  }

  {
    lmn::EncoderParams params = lmn::EncoderParams::init(64, 32, 8, 7, 3);
    lmn::EncoderBatch batch;
    lmn::Rng rng(4);
    const int b = 6;
    batch.embeddings.resize(64, b);
    batch.actions.resize(b);
    batch.outcomes.resize(b);
    batch.noise.resize(8, b);
    for (int i = 0; i < b; ++i) {
      for (int d = 0; d < 64; ++d) batch.embeddings(d, i) = rng.normal();
      batch.actions[i] = static_cast<int>(rng.integer(7));
      batch.outcomes[i] = rng.normal();
      for (int d = 0; d < 8; ++d) batch.noise(d, i) = rng.normal();
    }
    lmn::LossWeights weights;

    lmn::set_threads(1);
    auto t0 = Clock::now();
    double serial_err = lmn::grad_check(params, batch, weights);
    double serial_ms = ms_since(t0);
    lmn::set_threads(lmn::max_threads());
    t0 = Clock::now();
    double parallel_err = lmn::grad_check(params, batch, weights);
    double parallel_ms = ms_since(t0);
    report("grad_check fd sweep", serial_ms, parallel_ms, serial_err == parallel_err);
    std::printf("  max relative error %.3g\n", parallel_err);
  }

  {
    std::printf("\nLSH sweep on clustered rows (k=10):\n");
    lmn::LshParams params;
    lmn::QueryConfig query;
    query.candidate_cap = 5000;
    auto points = lmn::recall_sweep({1000, 10000, 100000}, 16, 20, 32, 100, 0.05, params,
                                    query, 11);
    std::printf("%10s %10s %20s %14s %12s %12s\n", "rows", "recall", "fraction_examined",
                "fallback_rate", "lsh_ms", "brute_ms");
    for (const auto& p : points)
      std::printf("%10d %10.3f %20.4f %14.2f %12.3f %12.3f\n", p.n_rows, p.recall_at_k,
                  p.mean_fraction_examined, p.fallback_rate, p.lsh_query_ms,
                  p.brute_query_ms);
  }
  return 0;
}
