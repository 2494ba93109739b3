#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmn/domain.hpp"
#include "lmn/encoder.hpp"
#include "lmn/estimator.hpp"
#include "lmn/eval.hpp"
#include "lmn/history.hpp"
#include "lmn/lsh.hpp"
#include "lmn/synthgen.hpp"

namespace lmn {

// Flat key=value run configuration; flags override file entries, which
// override defaults.
struct RunConfig {
  uint64_t seed = 0;
  std::string outdir = "out";
  std::string run_id = "run";
  int threads = 1;

  double train_frac = 0.7;
  double validation_frac = 0.1;
  double test_frac = 0.2;

  DgpConfig dgp;
  std::string dataset_path;  // empty: generate from dgp
  std::string oracle_path;

  int history_lookback = 180;
  std::string concept_set = "ALL";  // builtin name or "custom:<prefix>[;<prefix>...]"

  int stub_dim = 256;
  int encoder_hidden = 64;
  int encoder_latent = 16;
  int encoder_epochs = 30;
  int encoder_batch = 128;
  int encoder_disc_steps = 1;
  double encoder_lr = 0.2;
  double encoder_disc_lr = 0.2;
  LossWeights loss_weights;

  LshParams lsh;
  DrConfig dr;
  int propensity_iterations = 200;
  double propensity_rate = 0.5;

  int phenotype_clusters = 3;
  bool write_dataset = true;
  bool dump_history = false;
  bool run_baselines = true;

  void apply(const std::string& key, const std::string& value);  // unknown key -> ConfigError
  void validate() const;
  ConceptSet resolve_concept_set() const;

  static RunConfig from_file(const std::string& path);
  static RunConfig with_overrides(const RunConfig& base,
                                  const std::vector<std::pair<std::string, std::string>>& kv);
};

// Stage-tagged failure; the CLI reports the stage and exits non-zero.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage " + stage + " failed: " + what), stage(stage) {}
  std::string stage;
};

enum class Stage { prepare, fit, estimate, evaluate };

// Counts every outcome-value read by (stage, split role), plus leakage
// violations flagged by the instrumented history builder. A clean run fits
// only on training outcomes and never leaks future observations.
struct AuditLog {
  std::array<std::array<long, 3>, 4> outcome_reads{};
  long history_leak_violations = 0;
  long histories_built = 0;

  void note_outcome_read(Stage stage, SplitRole role) {
    ++outcome_reads[static_cast<size_t>(stage)][static_cast<size_t>(role)];
  }
  long reads(Stage stage, SplitRole role) const {
    return outcome_reads[static_cast<size_t>(stage)][static_cast<size_t>(role)];
  }
  long fit_reads(SplitRole role) const { return reads(Stage::fit, role); }
};

// Histories -> standardized feature slots -> hashed embeddings, split by role.
// Slot statistics, the embedding center and its scale come from the training
// rows only.
struct FeatureBundle {
  std::vector<LatentRow> train_meta, test_meta;
  Eigen::MatrixXd train_embed, test_embed;  // encoder inputs
  Eigen::MatrixXd train_text, test_text;    // hashed token features (baselines)
};

FeatureBundle compute_feature_bundle(const Dataset& dataset, const SplitAssignment& split,
                                     const HistoryConfig& hist_cfg,
                                     const FeatureLayout& layout, const StubEmbedding& stub,
                                     AuditLog& audit,
                                     const std::filesystem::path* dump_dir = nullptr);

struct GenerateResult {
  std::filesystem::path dataset_file;
  std::filesystem::path oracle_file;
  int n_units = 0;
  int n_records = 0;
};

GenerateResult run_generate(const RunConfig& config);

struct PipelineResult {
  std::filesystem::path run_dir;
  std::map<std::string, MetricsReport> metrics;  // lmn, or, ipw, laipw
  ThetaTable theta_lmn;
  PhenotypeAssignment phenotypes;
  std::vector<EffectCurve> curves_lmn;  // "all" plus phenotype groups
  AuditLog audit;
  int max_outcome_time = 0;
  std::string manifest_sha256;
};

// Full run: (generate|load) -> split -> histories/embeddings -> encoder ->
// index -> propensity -> DR estimates -> baselines -> metrics/curves ->
// manifest. Pass shared data to skip regeneration (ablation reruns).
PipelineResult run_pipeline(const RunConfig& config, AuditLog* audit = nullptr,
                            const Dataset* shared_dataset = nullptr,
                            const OracleTable* shared_oracle = nullptr);

struct AblationRun {
  std::string set_name;
  int lookback = 0;
  std::vector<EffectCurve> curves;       // grouped by the baseline run's phenotypes
  std::vector<DifferenceCurve> diffs;    // vs the ALL run at the same lookback
  std::filesystem::path curves_file;
  std::filesystem::path diffs_file;
};

struct AblateResult {
  std::filesystem::path out_dir;
  std::vector<AblationRun> runs;
};

// Cross product of concept sets and lookbacks; every set (including ALL) is
// rerun with shared seeds and differenced against the baseline ALL run.
AblateResult run_ablate(const RunConfig& config, const std::vector<std::string>& sets,
                        const std::vector<int>& lookbacks);

struct LookbackReport {
  std::vector<int> lookbacks;
  std::vector<EffectCurve> overall_curves;  // one per lookback, group "all"
  Eigen::VectorXd abs_deviation;            // per action, adjacent lookback pair
  double max_deviation = 0.0;
};

LookbackReport run_lookback_sensitivity(const RunConfig& config,
                                        const std::vector<int>& lookbacks);

// Consistency checks over a finished run directory; returns human-readable
// failures (empty means the artifacts are coherent).
std::vector<std::string> check_run_dir(const std::filesystem::path& run_dir);

}  // namespace lmn
