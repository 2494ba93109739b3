#include "lmn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"
#include "lmn/sha256.hpp"
#include "json.hpp"

namespace lmn {

namespace fs = std::filesystem;

// --- configuration ------------------------------------------------------------

namespace {

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" +
                      value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + value + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "seed") seed = parse_u64(key, value);
  else if (key == "outdir") outdir = value;
  else if (key == "run_id") run_id = value;
  else if (key == "threads") threads = parse_int(key, value);
  else if (key == "split.train") train_frac = parse_double(key, value);
  else if (key == "split.validation") validation_frac = parse_double(key, value);
  else if (key == "split.test") test_frac = parse_double(key, value);
  else if (key == "dataset") dataset_path = value;
  else if (key == "oracle") oracle_path = value;
  else if (key == "dgp.n_units") dgp.n_units = parse_int(key, value);
  else if (key == "dgp.min_steps") dgp.min_steps = parse_int(key, value);
  else if (key == "dgp.max_steps") dgp.max_steps = parse_int(key, value);
  else if (key == "dgp.latent_dim") dgp.latent_dim = parse_int(key, value);
  else if (key == "dgp.ambient_dim") dgp.ambient_dim = parse_int(key, value);
  else if (key == "dgp.action_count") dgp.action_count = parse_int(key, value);
  else if (key == "dgp.confound_strength") dgp.confound_strength = parse_double(key, value);
  else if (key == "dgp.lipschitz_scale") dgp.lipschitz_scale = parse_double(key, value);
  else if (key == "dgp.outcome_noise_sd") dgp.outcome_noise_sd = parse_double(key, value);
  else if (key == "dgp.positivity_floor") dgp.positivity_floor = parse_double(key, value);
  else if (key == "dgp.lead_in_days") dgp.lead_in_days = parse_int(key, value);
  else if (key == "dgp.min_gap_days") dgp.min_gap_days = parse_int(key, value);
  else if (key == "dgp.max_gap_days") dgp.max_gap_days = parse_int(key, value);
  else if (key == "dgp.obs_noise_sd") dgp.obs_noise_sd = parse_double(key, value);
  else if (key == "dgp.memory_weeks") dgp.memory_weeks = parse_int(key, value);
  else if (key == "history.lookback") history_lookback = parse_int(key, value);
  else if (key == "history.concept_set") concept_set = value;
  else if (key == "stub.dim") stub_dim = parse_int(key, value);
  else if (key == "encoder.hidden") encoder_hidden = parse_int(key, value);
  else if (key == "encoder.latent") encoder_latent = parse_int(key, value);
  else if (key == "encoder.epochs") encoder_epochs = parse_int(key, value);
  else if (key == "encoder.batch") encoder_batch = parse_int(key, value);
  else if (key == "encoder.disc_steps") encoder_disc_steps = parse_int(key, value);
  else if (key == "encoder.lr") encoder_lr = parse_double(key, value);
  else if (key == "encoder.disc_lr") encoder_disc_lr = parse_double(key, value);
  else if (key == "encoder.lambda") loss_weights.lambda = parse_double(key, value);
  else if (key == "encoder.beta") loss_weights.beta = parse_double(key, value);
  else if (key == "encoder.alpha") loss_weights.alpha = parse_double(key, value);
  else if (key == "lsh.tables") lsh.tables = parse_int(key, value);
  else if (key == "lsh.hashes") lsh.hashes_per_table = parse_int(key, value);
  else if (key == "lsh.width") lsh.width = parse_double(key, value);
  else if (key == "lsh.k") dr.k = parse_int(key, value);
  else if (key == "lsh.mode") dr.mode = neighbor_mode_from_name(value);
  else if (key == "lsh.cap") dr.candidate_cap = parse_int(key, value);
  else if (key == "lsh.fallback") dr.fallback = parse_bool(key, value);
  else if (key == "estimator.clip") dr.clip_floor = parse_double(key, value);
  else if (key == "estimator.ridge") dr.ridge = parse_double(key, value);
  else if (key == "estimator.prop_iterations") propensity_iterations = parse_int(key, value);
  else if (key == "estimator.prop_rate") propensity_rate = parse_double(key, value);
  else if (key == "eval.phenotypes") phenotype_clusters = parse_int(key, value);
  else if (key == "pipeline.write_dataset") write_dataset = parse_bool(key, value);
  else if (key == "pipeline.dump_history") dump_history = parse_bool(key, value);
  else if (key == "pipeline.baselines") run_baselines = parse_bool(key, value);
  else throw ConfigError("unknown config key: " + key);
}

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos)
    throw ConfigError("run_id must be a non-empty name without '/'");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (!(train_frac > 0) || !(validation_frac > 0) || !(test_frac > 0))
    throw ConfigError("split fractions (split.train/validation/test) must be positive");
  if (std::abs(train_frac + validation_frac + test_frac - 1.0) > 1e-9)
    throw ConfigError("split fractions (split.train/validation/test) must sum to 1");
  dgp.validate();
  if (history_lookback < 1) throw ConfigError("history.lookback must be >= 1");
  if (stub_dim < 8) throw ConfigError("stub.dim must be >= 8");
  if (encoder_hidden < 1 || encoder_latent < 1)
    throw ConfigError("encoder dims must be >= 1");
  if (encoder_epochs < 0) throw ConfigError("encoder.epochs must be >= 0");
  if (encoder_batch < 1) throw ConfigError("encoder.batch must be >= 1");
  if (loss_weights.lambda < 0 || loss_weights.beta < 0 || loss_weights.alpha < 0)
    throw ConfigError("loss weights (encoder.lambda/beta/alpha) must be >= 0");
  if (lsh.tables < 1 || lsh.hashes_per_table < 1)
    throw ConfigError("lsh.tables and lsh.hashes must be >= 1");
  if (dr.k < 1) throw ConfigError("lsh.k must be >= 1");
  if (!(dr.clip_floor > 0) || dr.clip_floor >= 0.5)
    throw ConfigError("estimator.clip must lie in (0, 0.5)");
  if (!(dr.ridge > 0)) throw ConfigError("estimator.ridge must be positive");
  if (propensity_iterations < 1) throw ConfigError("estimator.prop_iterations must be >= 1");
  if (!(propensity_rate > 0)) throw ConfigError("estimator.prop_rate must be positive");
  if (phenotype_clusters < 1) throw ConfigError("eval.phenotypes must be >= 1");
  resolve_concept_set();
}

ConceptSet RunConfig::resolve_concept_set() const {
  if (concept_set.rfind("custom:", 0) == 0) {
    ConceptSet set;
    set.name = "CUSTOM";
    std::string rest = concept_set.substr(7);
    std::istringstream ss(rest);
    std::string prefix;
    while (std::getline(ss, prefix, ';'))
      if (!prefix.empty()) set.prefixes.push_back(prefix);
    if (set.prefixes.empty())
      throw ConfigError("custom concept set needs at least one prefix");
    return set;
  }
  try {
    return ConceptSet::builtin(concept_set);
  } catch (const LookupError& e) {
    throw ConfigError(std::string(e.what()) +
                      " (history.concept_set accepts ALL, HEART, BREATHING, "
                      "ACTIVITY, RECORDS or custom:<prefix>[;<prefix>...])");
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  RunConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + t + "'");
    cfg.apply(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::with_overrides(
    const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& kv) {
  RunConfig cfg = base;
  for (const auto& [key, value] : kv) cfg.apply(key, value);
  return cfg;
}

// --- shared pipeline pieces -----------------------------------------------------

namespace {

// The generator stream folds the master seed with the dgp-local seed so either
// knob reseeds the data.
DgpConfig effective_dgp(const RunConfig& config) {
  DgpConfig dgp = config.dgp;
  dgp.seed = hash_combine(config.seed, config.dgp.seed);
  return dgp;
}

template <typename F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;  // configuration problems keep their type (CLI exit code 2)
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

}  // namespace

// Two passes: training rows first to fix per-slot standardization statistics,
// then every kept row is embedded with those statistics. The encoder input is
// additionally centered on the training mean and scaled to unit mean squared
// norm; without this the hashed space is dominated by constant structure
// (fixed tokens, window counts) and the bottleneck wastes its capacity there.
FeatureBundle compute_feature_bundle(const Dataset& ds, const SplitAssignment& split,
                                     const HistoryConfig& hist_cfg,
                                     const FeatureLayout& layout, const StubEmbedding& stub,
                                     AuditLog& audit, const fs::path* dump_dir) {
  const auto& outcomes = ds.outcomes();
  std::vector<int> slot(outcomes.size(), -1);  // column in its role matrix
  std::vector<SplitRole> role(outcomes.size(), SplitRole::train);
  std::vector<long> train_rows;
  int n_train = 0, n_test = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    role[i] = split.of(outcomes[i].unit);
    if (role[i] == SplitRole::train) {
      slot[i] = n_train++;
      train_rows.push_back(static_cast<long>(i));
    } else if (role[i] == SplitRole::test) {
      slot[i] = n_test++;
    }
  }

  // Pass 1: per-slot mean/sd over the training rows. Fixed-size chunks merged
  // in order keep the result independent of the thread count.
  const int n_slots = layout.size();
  Eigen::VectorXd slot_mean = Eigen::VectorXd::Zero(n_slots);
  Eigen::VectorXd slot_scale = Eigen::VectorXd::Ones(n_slots);
  {
    constexpr long kChunk = 256;
    const long chunks = (static_cast<long>(train_rows.size()) + kChunk - 1) / kChunk;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_slots, chunks);
    Eigen::MatrixXd sq_sums = Eigen::MatrixXd::Zero(n_slots, chunks);
#pragma omp parallel for schedule(dynamic, 1)
    for (long c = 0; c < chunks; ++c) {
      long lo = c * kChunk;
      long hi = std::min<long>(lo + kChunk, static_cast<long>(train_rows.size()));
      for (long r = lo; r < hi; ++r) {
        const OutcomeRecord& rec = outcomes[static_cast<size_t>(train_rows[static_cast<size_t>(r)])];
        Eigen::VectorXd fv = feature_vector(
            build_history(ds, rec.unit, rec.time, hist_cfg), layout);
        sums.col(c) += fv;
        sq_sums.col(c) += fv.cwiseProduct(fv);
      }
    }
    Eigen::VectorXd total = sums.rowwise().sum();
    Eigen::VectorXd total_sq = sq_sums.rowwise().sum();
    const double n = static_cast<double>(train_rows.size());
    slot_mean = total / n;
    for (int s = 0; s < n_slots; ++s) {
      double var = total_sq[s] / n - slot_mean[s] * slot_mean[s];
      slot_scale[s] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }

  FeatureBundle fset;
  fset.train_meta.resize(static_cast<size_t>(n_train));
  fset.test_meta.resize(static_cast<size_t>(n_test));
  fset.train_embed.resize(stub.dim, n_train);
  fset.test_embed.resize(stub.dim, n_test);
  fset.train_text.resize(stub.dim, n_train);
  fset.test_text.resize(stub.dim, n_test);

  std::atomic<long> leaks{0};
  std::atomic<long> built{0};

#pragma omp parallel for schedule(dynamic, 32)
  for (long i = 0; i < static_cast<long>(outcomes.size()); ++i) {
    if (slot[static_cast<size_t>(i)] < 0) continue;  // validation rows are unused
    const OutcomeRecord& rec = outcomes[static_cast<size_t>(i)];
    HistorySummary summary = build_history(ds, rec.unit, rec.time, hist_cfg);
    built.fetch_add(1, std::memory_order_relaxed);
    if (summary.max_contributing_time > rec.time)
      leaks.fetch_add(1, std::memory_order_relaxed);
    Eigen::VectorXd fv = feature_vector(summary, layout);
    fv = (fv - slot_mean).cwiseQuotient(slot_scale);
    std::string text = serialize_history_text(summary, ds);
    Eigen::VectorXd embed = stub_embed(text, fv, stub);
    Eigen::VectorXd textfeat = hashed_text_features(text, stub);

    int col = slot[static_cast<size_t>(i)];
    LatentRow meta{rec.unit, rec.time, rec.action, rec.outcome};
    if (role[static_cast<size_t>(i)] == SplitRole::train) {
      fset.train_meta[static_cast<size_t>(col)] = meta;
      fset.train_embed.col(col) = embed;
      fset.train_text.col(col) = textfeat;
    } else {
      fset.test_meta[static_cast<size_t>(col)] = meta;
      fset.test_embed.col(col) = embed;
      fset.test_text.col(col) = textfeat;
    }

    if (dump_dir) {
      std::string name = std::to_string(rec.unit) + "_" + std::to_string(rec.time) +
                         ".hist.txt";
#pragma omp critical(history_dump)
      {
        std::ofstream out(*dump_dir / name, std::ios::binary);
        out << text;
      }
    }
  }

  // Center on the training mean and normalize the average squared norm.
  Eigen::VectorXd embed_mean = fset.train_embed.rowwise().mean();
  fset.train_embed.colwise() -= embed_mean;
  fset.test_embed.colwise() -= embed_mean;
  double rms = std::sqrt(fset.train_embed.squaredNorm() /
                         std::max(1, static_cast<int>(fset.train_embed.cols())));
  if (rms > 1e-12) {
    fset.train_embed /= rms;
    fset.test_embed /= rms;
  }

  audit.history_leak_violations += leaks.load();
  audit.histories_built += built.load();
  for (size_t i = 0; i < outcomes.size(); ++i)
    if (slot[i] >= 0) audit.note_outcome_read(Stage::prepare, role[i]);
  return fset;
}

namespace {

// Outcome/action extraction for fitting, tagged in the audit.
std::vector<double> fit_outcomes(const std::vector<LatentRow>& meta,
                                 const SplitAssignment& split, AuditLog& audit) {
  std::vector<double> out;
  out.reserve(meta.size());
  for (const LatentRow& row : meta) {
    audit.note_outcome_read(Stage::fit, split.of(row.unit));
    out.push_back(row.outcome);
  }
  return out;
}

std::vector<int> actions_of(const std::vector<LatentRow>& meta) {
  std::vector<int> out;
  out.reserve(meta.size());
  for (const LatentRow& row : meta) out.push_back(row.action);
  return out;
}

nlohmann::json metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["rmse_overall"] = report.rmse_overall;
  j["pehe"] = report.pehe;
  j["policy_value_gap"] = report.policy_value_gap;
  j["n_records"] = report.n_records;
  j["rmse_per_action"] = std::vector<double>(
      report.rmse_per_action.data(),
      report.rmse_per_action.data() + report.rmse_per_action.size());
  j["bias_per_action"] = std::vector<double>(
      report.bias_per_action.data(),
      report.bias_per_action.data() + report.bias_per_action.size());
  return j;
}

void write_manifest(const fs::path& run_dir, const std::string& run_id,
                    const std::vector<fs::path>& files, const fs::path& manifest_path,
                    std::string* manifest_hash) {
  nlohmann::json j;
  j["run_id"] = run_id;
  nlohmann::json file_map;
  for (const fs::path& f : files) {
    if (!fs::exists(f)) continue;
    file_map[fs::relative(f, run_dir).generic_string()] = Sha256::hex_digest_file(f.string());
  }
  j["files"] = file_map;
  std::string body = j.dump(2) + "\n";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + manifest_path.string());
  out << body;
  if (manifest_hash) *manifest_hash = Sha256::hex_digest(body);
}

}  // namespace

// --- commands --------------------------------------------------------------------

GenerateResult run_generate(const RunConfig& config) {
  config.validate();
  set_threads(config.threads);
  fs::path run_dir = fs::path(config.outdir) / config.run_id;
  fs::create_directories(run_dir);

  auto [ds, oracle] = generate(effective_dgp(config));
  auto violations = validate_dataset(ds);
  if (!violations.empty())
    throw PipelineError("generate", "generated dataset violates invariants (" +
                                        violations.front().rule + ")");

  GenerateResult result;
  result.dataset_file = run_dir / "dataset.jsonl";
  result.oracle_file = run_dir / "oracle.csv";
  save_dataset_jsonl(ds, result.dataset_file.string());
  save_oracle_csv(oracle, result.oracle_file.string());
  result.n_units = ds.unit_count();
  result.n_records = static_cast<int>(ds.outcomes().size());
  return result;
}

PipelineResult run_pipeline(const RunConfig& config, AuditLog* audit,
                            const Dataset* shared_dataset,
                            const OracleTable* shared_oracle) {
  config.validate();
  set_threads(config.threads);
  fs::path run_dir = fs::path(config.outdir) / config.run_id;
  fs::create_directories(run_dir);

  PipelineResult result;
  result.run_dir = run_dir;
  AuditLog local_audit;
  AuditLog& log = audit ? *audit : local_audit;
  std::vector<fs::path> outputs;

  // -- data --
  Dataset generated_ds;
  OracleTable generated_oracle;
  const Dataset* ds = nullptr;
  const OracleTable* oracle = nullptr;
  stage("generate", [&] {
    if (shared_dataset) {
      ds = shared_dataset;
      oracle = shared_oracle;
    } else if (!config.dataset_path.empty()) {
      generated_ds = load_dataset_jsonl(config.dataset_path, config.dgp.action_count);
      ds = &generated_ds;
      if (!config.oracle_path.empty()) {
        generated_oracle = load_oracle_csv(config.oracle_path);
        oracle = &generated_oracle;
      }
    } else {
      std::tie(generated_ds, generated_oracle) = generate(effective_dgp(config));
      ds = &generated_ds;
      oracle = &generated_oracle;
    }
    auto violations = validate_dataset(*ds);
    if (!violations.empty()) {
      std::string msg = "dataset violates invariants:";
      for (size_t i = 0; i < violations.size() && i < 3; ++i)
        msg += " [unit " + std::to_string(violations[i].unit) + " t=" +
               std::to_string(violations[i].time) + ": " + violations[i].rule + "]";
      throw std::runtime_error(msg);
    }
    if (config.write_dataset) {
      save_dataset_jsonl(*ds, (run_dir / "dataset.jsonl").string());
      outputs.push_back(run_dir / "dataset.jsonl");
      if (oracle) {
        save_oracle_csv(*oracle, (run_dir / "oracle.csv").string());
        outputs.push_back(run_dir / "oracle.csv");
      }
    }
  });

  for (const auto& rec : ds->outcomes())
    result.max_outcome_time = std::max(result.max_outcome_time, rec.time);

  // -- split --
  SplitAssignment split = stage("split", [&] {
    SplitAssignment s = split_units(*ds, config.train_frac, config.validation_frac,
                                    config.test_frac, config.seed);
    save_split_csv(s, (run_dir / "split.csv").string());
    outputs.push_back(run_dir / "split.csv");
    return s;
  });

  // -- histories and embeddings --
  StubEmbedding stub{config.stub_dim, hash_combine(config.seed, 0x57ab)};
  HistoryConfig hist_cfg = HistoryConfig::for_lookback(config.history_lookback);
  hist_cfg.whitelist = config.resolve_concept_set();
  FeatureLayout layout(*ds, hist_cfg);
  FeatureBundle fset = stage("features", [&] {
    if (config.history_lookback > result.max_outcome_time)
      throw ConfigError("history.lookback " + std::to_string(config.history_lookback) +
                        " exceeds the data horizon (max outcome day " +
                        std::to_string(result.max_outcome_time) + ")");
    layout.save_manifest_csv(*ds, (run_dir / "layout.csv").string());
    outputs.push_back(run_dir / "layout.csv");
    std::optional<fs::path> dump_dir;
    if (config.dump_history) {
      dump_dir = run_dir / "hist";
      fs::create_directories(*dump_dir);
    }
    return compute_feature_bundle(*ds, split, hist_cfg, layout, stub, log,
                                  dump_dir ? &*dump_dir : nullptr);
  });
  if (fset.train_meta.empty() || fset.test_meta.empty())
    throw PipelineError("features", "a split has zero outcome records");

  // -- encoder --
  EncoderParams params = stage("train-encoder", [&] {
    EncoderParams init = EncoderParams::init(config.stub_dim, config.encoder_hidden,
                                             config.encoder_latent, ds->action_count(),
                                             hash_combine(config.seed, 0xe7c));
    TrainConfig tcfg;
    tcfg.learning_rate = config.encoder_lr;
    tcfg.disc_learning_rate = config.encoder_disc_lr;
    tcfg.epochs = config.encoder_epochs;
    tcfg.batch_size = config.encoder_batch;
    tcfg.disc_steps = config.encoder_disc_steps;
    tcfg.seed = hash_combine(config.seed, 0x7a1);
    // Standardized outcomes keep the outcome-head gradients on the same scale
    // as the reconstruction term; the head itself is not used downstream.
    std::vector<double> train_y = fit_outcomes(fset.train_meta, split, log);
    double y_mean = 0;
    for (double y : train_y) y_mean += y;
    y_mean /= static_cast<double>(train_y.size());
    double y_var = 0;
    for (double y : train_y) y_var += (y - y_mean) * (y - y_mean);
    double y_sd = std::sqrt(y_var / static_cast<double>(train_y.size()));
    if (y_sd > 1e-12)
      for (double& y : train_y) y = (y - y_mean) / y_sd;
    TrainResult trained = train(fset.train_embed, actions_of(fset.train_meta), train_y,
                                init, tcfg, config.loss_weights);
    save_checkpoint(trained.params, (run_dir / "checkpoint.bin").string());
    save_loss_trace_csv(trained.trace, (run_dir / "loss_trace.csv").string());
    outputs.push_back(run_dir / "checkpoint.bin");
    outputs.push_back(run_dir / "loss_trace.csv");
    return trained.params;
  });

  // -- latents and index --
  LatentTable train_latents = stage("embed", [&] {
    return embed_rows(params, fset.train_embed, fset.train_meta, ds->action_count());
  });
  LatentTable test_latents =
      embed_rows(params, fset.test_embed, fset.test_meta, ds->action_count());

  LshIndex index = stage("index", [&] {
    LshParams lsh_params = config.lsh;
    lsh_params.seed = hash_combine(config.seed, 0x15a);
    LshIndex idx = LshIndex::build(train_latents, lsh_params);
    idx.save((run_dir / "index.bin").string());
    outputs.push_back(run_dir / "index.bin");
    return idx;
  });

  PropensityModel propensity = stage("fit-propensity", [&] {
    return fit_propensity(train_latents.z, actions_of(fset.train_meta),
                          ds->action_count(), config.dr.clip_floor,
                          config.propensity_iterations, config.propensity_rate,
                          config.seed);
  });

  // -- estimates --
  result.theta_lmn = stage("estimate", [&] {
    ThetaTable table = estimate_all(test_latents, index, propensity, config.dr);
    save_theta_csv(table, (run_dir / "theta_lmn.csv").string());
    outputs.push_back(run_dir / "theta_lmn.csv");
    return table;
  });

  ThetaTable theta_or, theta_laipw;
  IpwResult ipw;
  if (config.run_baselines) {
    stage("baselines", [&] {
      std::vector<double> train_y = fit_outcomes(fset.train_meta, split, log);
      Eigen::Map<const Eigen::VectorXd> train_y_vec(train_y.data(),
                                                    static_cast<long>(train_y.size()));
      theta_or = baseline_or(fset.train_text, actions_of(fset.train_meta), train_y_vec,
                             fset.test_text, fset.test_meta, ds->action_count(),
                             config.dr.ridge);
      save_theta_csv(theta_or, (run_dir / "theta_or.csv").string());

      LatentTable train_text_table;
      train_text_table.rows = fset.train_meta;
      train_text_table.z = fset.train_text;
      train_text_table.action_count = ds->action_count();
      (void)fit_outcomes(fset.train_meta, split, log);  // IPW reweights training outcomes

      PropensityModel text_prop = fit_propensity(
          fset.train_text, actions_of(fset.train_meta), ds->action_count(),
          config.dr.clip_floor, config.propensity_iterations, config.propensity_rate,
          config.seed);
      Eigen::MatrixXd prop_matrix(ds->action_count(), train_text_table.size());
      for (int i = 0; i < train_text_table.size(); ++i)
        prop_matrix.col(i) = text_prop.predict(fset.train_text.col(i));
      ipw = baseline_ipw(train_text_table, prop_matrix, fset.test_meta,
                         config.dr.clip_floor);
      save_theta_csv(ipw.table, (run_dir / "theta_ipw.csv").string());

      LatentTable test_text_table;
      test_text_table.rows = fset.test_meta;
      test_text_table.z = fset.test_text;
      test_text_table.action_count = ds->action_count();
      (void)fit_outcomes(fset.train_meta, split, log);
      theta_laipw = baseline_local_aipw(train_text_table, test_text_table, config.dr.k,
                                        config.dr, config.propensity_iterations,
                                        config.propensity_rate);
      save_theta_csv(theta_laipw, (run_dir / "theta_laipw.csv").string());

      outputs.push_back(run_dir / "theta_or.csv");
      outputs.push_back(run_dir / "theta_ipw.csv");
      outputs.push_back(run_dir / "theta_laipw.csv");
    });
  }

  // -- evaluation --
  stage("eval", [&] {
    if (oracle) {
      result.metrics["lmn"] = score(result.theta_lmn, *oracle);
      if (config.run_baselines) {
        result.metrics["or"] = score(theta_or, *oracle);
        result.metrics["ipw"] = score(ipw.table, *oracle);
        result.metrics["laipw"] = score(theta_laipw, *oracle);
      }
      nlohmann::json j;
      for (const auto& [method, report] : result.metrics)
        j[method] = metrics_to_json(report);
      std::ofstream out(run_dir / "metrics.json", std::ios::binary);
      out << j.dump(2) << '\n';
      outputs.push_back(run_dir / "metrics.json");
    }

    result.phenotypes =
        assign_phenotypes(test_latents, config.phenotype_clusters,
                          hash_combine(config.seed, 0xbe0));
    result.curves_lmn = effect_curves(result.theta_lmn, nullptr, ds->action_count());
    auto pheno_curves =
        effect_curves(result.theta_lmn, &result.phenotypes, ds->action_count());
    result.curves_lmn.insert(result.curves_lmn.end(), pheno_curves.begin(),
                             pheno_curves.end());
    save_curves_csv(result.curves_lmn, (run_dir / "curves_lmn.csv").string());
    save_curves_svg(result.curves_lmn, (run_dir / "curves_lmn.svg").string());
    outputs.push_back(run_dir / "curves_lmn.csv");
    outputs.push_back(run_dir / "curves_lmn.svg");
  });

  stage("manifest", [&] {
    write_manifest(run_dir, config.run_id, outputs, run_dir / "manifest.json",
                   &result.manifest_sha256);
  });
  result.audit = log;
  return result;
}

// --- ablation ----------------------------------------------------------------------

namespace {

std::vector<EffectCurve> curves_with_grouping(const ThetaTable& theta,
                                              const PhenotypeAssignment& phenotypes,
                                              int action_count) {
  std::vector<EffectCurve> curves = effect_curves(theta, nullptr, action_count);
  auto grouped = effect_curves(theta, &phenotypes, action_count);
  curves.insert(curves.end(), grouped.begin(), grouped.end());
  return curves;
}

}  // namespace

AblateResult run_ablate(const RunConfig& config, const std::vector<std::string>& sets,
                        const std::vector<int>& lookbacks) {
  config.validate();
  if (sets.empty() || lookbacks.empty())
    throw ConfigError("ablate needs at least one concept set and one lookback");
  for (const std::string& set : sets) {
    RunConfig probe = config;
    probe.concept_set = set;
    probe.resolve_concept_set();  // throws ConfigError for undefined sets
  }

  AblateResult result;
  result.out_dir = fs::path(config.outdir) / config.run_id;
  fs::create_directories(result.out_dir);

  // One shared dataset for every sub-run.
  Dataset ds;
  OracleTable oracle;
  const Dataset* ds_ptr = nullptr;
  const OracleTable* oracle_ptr = nullptr;
  if (!config.dataset_path.empty()) {
    ds = load_dataset_jsonl(config.dataset_path, config.dgp.action_count);
    ds_ptr = &ds;
    if (!config.oracle_path.empty()) {
      oracle = load_oracle_csv(config.oracle_path);
      oracle_ptr = &oracle;
    }
  } else {
    std::tie(ds, oracle) = generate(effective_dgp(config));
    ds_ptr = &ds;
    oracle_ptr = &oracle;
  }

  std::vector<fs::path> outputs;
  for (int lookback : lookbacks) {
    RunConfig base_cfg = config;
    base_cfg.outdir = result.out_dir.string();
    base_cfg.run_id = "base_L" + std::to_string(lookback);
    base_cfg.history_lookback = lookback;
    base_cfg.concept_set = "ALL";
    base_cfg.write_dataset = false;
    base_cfg.run_baselines = false;
    PipelineResult base = run_pipeline(base_cfg, nullptr, ds_ptr, oracle_ptr);
    auto base_curves =
        curves_with_grouping(base.theta_lmn, base.phenotypes, base.theta_lmn.action_count);

    for (const std::string& set : sets) {
      RunConfig sub_cfg = base_cfg;
      sub_cfg.run_id = "set_" + set + "_L" + std::to_string(lookback);
      sub_cfg.concept_set = set;
      PipelineResult sub = run_pipeline(sub_cfg, nullptr, ds_ptr, oracle_ptr);

      AblationRun run;
      run.set_name = set;
      run.lookback = lookback;
      run.curves = curves_with_grouping(sub.theta_lmn, base.phenotypes,
                                        sub.theta_lmn.action_count);
      run.diffs = curve_differences(run.curves, base_curves);
      run.curves_file =
          result.out_dir / ("curves_" + set + "_L" + std::to_string(lookback) + ".csv");
      run.diffs_file =
          result.out_dir / ("diff_" + set + "_L" + std::to_string(lookback) + ".csv");
      save_curves_csv(run.curves, run.curves_file.string());
      save_differences_csv(run.diffs, run.diffs_file.string());
      outputs.push_back(run.curves_file);
      outputs.push_back(run.diffs_file);
      result.runs.push_back(std::move(run));
    }
  }

  // Lookback stability per set: per-action deviation between the first and
  // last lookback of the overall group.
  if (lookbacks.size() >= 2) {
    for (const std::string& set : sets) {
      const AblationRun* first = nullptr;
      const AblationRun* last = nullptr;
      for (const auto& run : result.runs) {
        if (run.set_name != set) continue;
        if (run.lookback == lookbacks.front()) first = &run;
        if (run.lookback == lookbacks.back()) last = &run;
      }
      if (!first || !last) continue;
      const EffectCurve* a = nullptr;
      const EffectCurve* b = nullptr;
      for (const auto& c : first->curves)
        if (c.group == "all") a = &c;
      for (const auto& c : last->curves)
        if (c.group == "all") b = &c;
      if (!a || !b) continue;
      fs::path dev_file = result.out_dir / ("lookback_dev_" + set + ".csv");
      std::ofstream out(dev_file, std::ios::binary);
      out << "action,abs_deviation\n";
      double max_dev = 0;
      for (int act = 0; act < a->mean_theta.size(); ++act) {
        double dev = std::abs(a->mean_theta[act] - b->mean_theta[act]);
        max_dev = std::max(max_dev, dev);
        out << act << ',' << format_g(dev) << '\n';
      }
      out << "max," << format_g(max_dev) << '\n';
      outputs.push_back(dev_file);
    }
  }

  write_manifest(result.out_dir, config.run_id, outputs,
                 result.out_dir / "ablate_manifest.json", nullptr);
  return result;
}

LookbackReport run_lookback_sensitivity(const RunConfig& config,
                                        const std::vector<int>& lookbacks) {
  if (lookbacks.size() < 2)
    throw ConfigError("lookback sensitivity needs at least two lookbacks");
  config.validate();

  Dataset ds;
  OracleTable oracle;
  if (!config.dataset_path.empty()) {
    ds = load_dataset_jsonl(config.dataset_path, config.dgp.action_count);
  } else {
    std::tie(ds, oracle) = generate(effective_dgp(config));
  }

  LookbackReport report;
  report.lookbacks = lookbacks;
  for (int lookback : lookbacks) {
    RunConfig cfg = config;
    cfg.run_id = config.run_id + "_lb" + std::to_string(lookback);
    cfg.history_lookback = lookback;
    cfg.write_dataset = false;
    cfg.run_baselines = false;
    PipelineResult res = run_pipeline(cfg, nullptr, &ds,
                                      config.dataset_path.empty() ? &oracle : nullptr);
    for (const EffectCurve& c : res.curves_lmn)
      if (c.group == "all") report.overall_curves.push_back(c);
  }

  const EffectCurve& first = report.overall_curves.front();
  const EffectCurve& last = report.overall_curves.back();
  report.abs_deviation = (first.mean_theta - last.mean_theta).cwiseAbs();
  report.max_deviation = report.abs_deviation.maxCoeff();
  return report;
}

// --- artifact checks ------------------------------------------------------------------

std::vector<std::string> check_run_dir(const fs::path& run_dir) {
  std::vector<std::string> failures;
  auto fail = [&](const std::string& msg) { failures.push_back(msg); };

  fs::path manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    fail("manifest.json missing");
    return failures;
  }
  nlohmann::json manifest;
  try {
    std::ifstream in(manifest_path);
    in >> manifest;
  } catch (const std::exception& e) {
    fail(std::string("manifest unreadable: ") + e.what());
    return failures;
  }

  for (const auto& [rel, digest] : manifest.at("files").items()) {
    fs::path f = run_dir / rel;
    if (!fs::exists(f)) {
      fail("file listed in manifest is missing: " + rel);
      continue;
    }
    if (Sha256::hex_digest_file(f.string()) != digest.get<std::string>())
      fail("hash mismatch for " + rel);
  }

  if (fs::exists(run_dir / "dataset.jsonl")) {
    try {
      Dataset ds = load_dataset_jsonl((run_dir / "dataset.jsonl").string());
      auto violations = validate_dataset(ds);
      if (!violations.empty())
        fail("dataset invariant violations: " + std::to_string(violations.size()) +
             " (first: " + violations.front().rule + ")");
    } catch (const std::exception& e) {
      fail(std::string("dataset unreadable: ") + e.what());
    }
  }

  if (fs::exists(run_dir / "oracle.csv")) {
    try {
      OracleTable oracle = load_oracle_csv((run_dir / "oracle.csv").string());
      PositivityReport pos = check_positivity(oracle, 0.0);
      if (!(pos.min_propensity > 0)) fail("oracle propensities are not positive");
      for (const auto& rec : oracle.records()) {
        double total = rec.propensity.sum();
        if (std::abs(total - 1.0) > 1e-9) {
          fail("oracle propensities do not sum to 1 (unit " + std::to_string(rec.unit) + ")");
          break;
        }
      }
    } catch (const std::exception& e) {
      fail(std::string("oracle unreadable: ") + e.what());
    }
  }

  for (const char* name : {"theta_lmn.csv", "theta_or.csv", "theta_ipw.csv", "theta_laipw.csv"}) {
    fs::path f = run_dir / name;
    if (!fs::exists(f)) continue;
    try {
      ThetaTable table = load_theta_csv(f.string());
      for (const Estimate& e : table.rows) {
        if (std::abs(e.theta - (e.q_term + e.correction)) > 1e-12) {
          fail(std::string(name) + ": decomposition identity broken at unit " +
               std::to_string(e.unit));
          break;
        }
      }
    } catch (const std::exception& e) {
      fail(std::string(name) + " unreadable: " + e.what());
    }
  }
  return failures;
}

}  // namespace lmn
