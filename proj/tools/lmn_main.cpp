#include <clocale>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lmn/parallel.hpp"
#include "lmn/pipeline.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> set_pairs;
  // Named flags; only applied when the user passed them.
  CLI::Option* seed = nullptr;
  CLI::Option* outdir = nullptr;
  CLI::Option* run_id = nullptr;
  CLI::Option* threads = nullptr;
  CLI::Option* tables = nullptr;
  CLI::Option* hashes = nullptr;
  CLI::Option* width = nullptr;
  CLI::Option* k = nullptr;
  CLI::Option* mode = nullptr;
  std::string seed_v, outdir_v, run_id_v, threads_v, tables_v, hashes_v, width_v, k_v, mode_v;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "flat key=value config file");
  cmd->add_option("--set", opts.set_pairs, "override a config key, e.g. --set lsh.tables=16")
      ->take_all();
  opts.seed = cmd->add_option("--seed", opts.seed_v, "master seed");
  opts.outdir = cmd->add_option("--outdir", opts.outdir_v, "output directory");
  opts.run_id = cmd->add_option("--run-id", opts.run_id_v, "run identifier");
  opts.threads = cmd->add_option("--threads", opts.threads_v, "worker thread cap");
  opts.tables = cmd->add_option("--tables", opts.tables_v, "LSH tables T_L");
  opts.hashes = cmd->add_option("--hashes", opts.hashes_v, "hashes per table m");
  opts.width = cmd->add_option("--width", opts.width_v, "LSH bucket width r (0 = auto)");
  opts.k = cmd->add_option("--k", opts.k_v, "neighborhood size k");
  opts.mode = cmd->add_option("--mode", opts.mode_v,
                              "neighbor mode: unrestricted | action_stratified");
}

lmn::RunConfig build_config(const CommonOptions& opts) {
  lmn::RunConfig cfg = opts.config_path.empty()
                           ? lmn::RunConfig{}
                           : lmn::RunConfig::from_file(opts.config_path);
  for (const std::string& pair : opts.set_pairs) {
    auto eq = pair.find('=');
    if (eq == std::string::npos)
      throw lmn::ConfigError("--set expects key=value, got '" + pair + "'");
    cfg.apply(pair.substr(0, eq), pair.substr(eq + 1));
  }
  auto flag = [&](CLI::Option* opt, const char* key, const std::string& value) {
    if (opt && opt->count() > 0) cfg.apply(key, value);
  };
  flag(opts.seed, "seed", opts.seed_v);
  flag(opts.outdir, "outdir", opts.outdir_v);
  flag(opts.run_id, "run_id", opts.run_id_v);
  flag(opts.threads, "threads", opts.threads_v);
  flag(opts.tables, "lsh.tables", opts.tables_v);
  flag(opts.hashes, "lsh.hashes", opts.hashes_v);
  flag(opts.width, "lsh.width", opts.width_v);
  flag(opts.k, "lsh.k", opts.k_v);
  flag(opts.mode, "lsh.mode", opts.mode_v);
  return cfg;
}

void print_metrics(const std::map<std::string, lmn::MetricsReport>& metrics) {
  for (const auto& [method, report] : metrics) {
    std::cout << "  " << method << ": rmse=" << report.rmse_overall
              << " pehe=" << report.pehe << " policy_gap=" << report.policy_value_gap
              << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::setlocale(LC_NUMERIC, "C");
  CLI::App app{"latent-match: local counterfactual estimation over hashed latent histories"};
  app.require_subcommand(1);

  CommonOptions gen_opts, pipe_opts, abl_opts, bench_opts, check_opts;

  CLI::App* cmd_generate = app.add_subcommand("generate", "write a synthetic dataset and its oracle");
  add_common(cmd_generate, gen_opts);

  CLI::App* cmd_pipeline = app.add_subcommand("pipeline", "run the full estimation pipeline");
  add_common(cmd_pipeline, pipe_opts);

  CLI::App* cmd_ablate = app.add_subcommand("ablate", "concept-set and lookback ablations");
  add_common(cmd_ablate, abl_opts);
  std::vector<std::string> sets{"ALL", "HEART", "BREATHING", "ACTIVITY", "RECORDS"};
  std::vector<int> lookbacks{30, 180};
  cmd_ablate->add_option("--sets", sets, "concept sets to ablate")->delimiter(',');
  cmd_ablate->add_option("--lookbacks", lookbacks, "lookback windows in days")->delimiter(',');

  CLI::App* cmd_bench = app.add_subcommand("bench-lsh", "recall/latency sweep of the LSH index");
  add_common(cmd_bench, bench_opts);
  std::vector<int> sizes{1000, 10000, 100000};
  int bench_dim = 16, bench_queries = 20, bench_clusters = 32, bench_ppc = 100;
  double bench_sd = 0.05;
  cmd_bench->add_option("--sizes", sizes, "row counts to sweep")->delimiter(',');
  cmd_bench->add_option("--dim", bench_dim, "latent dimension");
  cmd_bench->add_option("--queries", bench_queries, "queries per size");
  cmd_bench->add_option("--clusters", bench_clusters, "clusters in the synthetic data");
  cmd_bench->add_option("--cluster-sd", bench_sd, "within-cluster standard deviation");
  cmd_bench->add_option("--points-per-cluster", bench_ppc, "cluster count scales as rows/this (0 = fixed)");

  CLI::App* cmd_check = app.add_subcommand("check", "verify invariants over run artifacts");
  add_common(cmd_check, check_opts);
  std::string check_dir;
  cmd_check->add_option("--run-dir", check_dir, "run directory (default <outdir>/<run_id>)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_generate->parsed()) {
      lmn::RunConfig cfg = build_config(gen_opts);
      lmn::GenerateResult res = lmn::run_generate(cfg);
      std::cout << "wrote " << res.dataset_file.string() << " (" << res.n_units
                << " units, " << res.n_records << " outcome records)\n";
      std::cout << "wrote " << res.oracle_file.string() << "\n";
    } else if (cmd_pipeline->parsed()) {
      lmn::RunConfig cfg = build_config(pipe_opts);
      lmn::PipelineResult res = lmn::run_pipeline(cfg);
      std::cout << "run dir: " << res.run_dir.string() << "\n";
      std::cout << "manifest sha256: " << res.manifest_sha256 << "\n";
      if (!res.metrics.empty()) print_metrics(res.metrics);
    } else if (cmd_ablate->parsed()) {
      lmn::RunConfig cfg = build_config(abl_opts);
      lmn::AblateResult res = lmn::run_ablate(cfg, sets, lookbacks);
      std::cout << "ablation outputs in " << res.out_dir.string() << " ("
                << res.runs.size() << " runs)\n";
      for (const auto& run : res.runs)
        std::cout << "  " << run.curves_file.filename().string() << "  "
                  << run.diffs_file.filename().string() << "\n";
    } else if (cmd_bench->parsed()) {
      lmn::RunConfig cfg = build_config(bench_opts);
      lmn::set_threads(cfg.threads);
      lmn::LshParams params = cfg.lsh;
      params.seed = cfg.seed;
      lmn::QueryConfig query{cfg.dr.k, cfg.dr.mode, cfg.dr.candidate_cap, cfg.dr.fallback};
      auto points = lmn::recall_sweep(sizes, bench_dim, bench_queries, bench_clusters, bench_ppc,
                                      bench_sd, params, query, cfg.seed);
      std::cout << "rows,recall@" << query.k
                << ",fraction_examined,fallback_rate,lsh_ms,brute_ms\n";
      for (const auto& p : points)
        std::cout << p.n_rows << ',' << p.recall_at_k << ',' << p.mean_fraction_examined
                  << ',' << p.fallback_rate << ',' << p.lsh_query_ms << ','
                  << p.brute_query_ms << "\n";
    } else if (cmd_check->parsed()) {
      lmn::RunConfig cfg = build_config(check_opts);
      std::filesystem::path dir = check_dir.empty()
                                      ? std::filesystem::path(cfg.outdir) / cfg.run_id
                                      : std::filesystem::path(check_dir);
      auto failures = lmn::check_run_dir(dir);
      if (failures.empty()) {
        std::cout << "check ok: " << dir.string() << "\n";
      } else {
        for (const auto& f : failures) std::cerr << "check failed: " << f << "\n";
        return 1;
      }
    }
  } catch (const lmn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lmn::PipelineError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
