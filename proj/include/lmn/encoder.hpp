#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lmn/common.hpp"
#include "lmn/domain.hpp"

namespace lmn {

// Deterministic stand-in for a text encoder: signed feature hashing of the
// serialized history tokens plus the numeric feature slots, L2-normalized.
struct StubEmbedding {
  int dim = 256;
  uint64_t seed = 0;
};

// Unnormalized bucket sums (token counts signed-hashed together with numeric
// slot values).
Eigen::VectorXd stub_embed_raw(const std::string& text, const Eigen::VectorXd& numeric,
                               const StubEmbedding& spec);
// L2-normalized embedding; the all-zero input stays the zero vector.
Eigen::VectorXd stub_embed(const std::string& text, const Eigen::VectorXd& numeric,
                           const StubEmbedding& spec);
// Token-count-only hashed features, for the text-space baselines.
Eigen::VectorXd hashed_text_features(const std::string& text, const StubEmbedding& spec);

struct LossWeights {
  double lambda = 1.0;  // outcome-likelihood weight
  double beta = 0.02;   // KL weight
  double alpha = 0.2;   // mutual-information penalty weight
};

struct TrainConfig {
  double learning_rate = 0.2;
  double disc_learning_rate = 0.2;
  int epochs = 30;
  int batch_size = 128;
  int disc_steps = 1;  // discriminator updates per main update
  uint64_t seed = 0;

  void validate() const;
};

// Two-layer perceptron encoder to (mu, log sigma^2), decoder, outcome head and
// adversarial action discriminator. Biases are stored as one-column matrices
// so every parameter block can be visited uniformly.
struct EncoderParams {
  int embed_dim = 256;
  int hidden_dim = 64;
  int latent_dim = 16;
  int action_count = 7;
  uint64_t init_seed = 0;

  Eigen::MatrixXd w_enc, b_enc;          // hidden x embed
  Eigen::MatrixXd w_mu, b_mu;            // latent x hidden
  Eigen::MatrixXd w_logvar, b_logvar;    // latent x hidden
  Eigen::MatrixXd w_dec_h, b_dec_h;      // hidden x latent
  Eigen::MatrixXd w_dec_o, b_dec_o;      // embed x hidden
  Eigen::MatrixXd w_out_h, b_out_h;      // hidden x (latent + actions)
  Eigen::MatrixXd w_out_o, b_out_o;      // 1 x hidden
  Eigen::MatrixXd w_dis_h, b_dis_h;      // hidden x latent
  Eigen::MatrixXd w_dis_o, b_dis_o;      // actions x hidden

  static EncoderParams init(int embed_dim, int hidden_dim, int latent_dim,
                            int action_count, uint64_t seed);
  static EncoderParams zeros_like(const EncoderParams& other);

  struct Block {
    const char* name;
    Eigen::MatrixXd* matrix;
    bool discriminator;  // updated by the adversary's own step, not the main step
  };
  std::vector<Block> blocks();
  std::vector<Block> blocks() const;  // matrices are still mutable views
  size_t parameter_count() const;
};

struct EncoderBatch {
  Eigen::MatrixXd embeddings;  // embed_dim x batch
  Eigen::VectorXi actions;     // batch
  Eigen::VectorXd outcomes;    // batch
  Eigen::MatrixXd noise;       // latent_dim x batch, one standard-normal draw per item

  int size() const { return static_cast<int>(embeddings.cols()); }
};

struct LossComponents {
  double total = 0, recon = 0, outcome = 0, kl = 0, mi = 0;
};

struct Encoded {
  Eigen::VectorXd mu, sigma, z;
};

// z = mu + sigma .* noise; inference mode (no noise) returns z = mu.
Encoded encode(const EncoderParams& params, const Eigen::VectorXd& embedding,
               const Eigen::VectorXd* noise = nullptr);
// Inference-mode posterior means for a whole matrix of embeddings.
Eigen::MatrixXd encode_batch_mean(const EncoderParams& params,
                                  const Eigen::MatrixXd& embeddings);

LossComponents loss(const EncoderParams& params, const EncoderBatch& batch,
                    const LossWeights& weights);
// Analytic gradients of the total loss for every parameter block.
LossComponents loss_and_grads(const EncoderParams& params, const EncoderBatch& batch,
                              const LossWeights& weights, EncoderParams& grads);

// Max relative error between analytic gradients and central finite differences
// over every parameter entry.
double grad_check(const EncoderParams& params, const EncoderBatch& batch,
                  const LossWeights& weights, double step = 1e-5);

struct EpochTrace {
  int epoch;
  LossComponents mean;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochTrace> trace;
};

class TrainDivergence : public TrainingError {
 public:
  TrainDivergence(const std::string& what, std::vector<EpochTrace> trace)
      : TrainingError(what), trace(std::move(trace)) {}
  std::vector<EpochTrace> trace;
};

// Alternating adversarial SGD; deterministic in the seed.
TrainResult train(const Eigen::MatrixXd& embeddings, const std::vector<int>& actions,
                  const std::vector<double>& outcomes, const EncoderParams& initial,
                  const TrainConfig& config, const LossWeights& weights);

void save_loss_trace_csv(const std::vector<EpochTrace>& trace, const std::string& path);

// --- latent table -----------------------------------------------------------

struct LatentRow {
  UnitId unit;
  int32_t time;
  int action;
  double outcome;
};

struct LatentTable {
  std::vector<LatentRow> rows;
  Eigen::MatrixXd z;  // latent_dim x rows
  int action_count = 0;

  int size() const { return static_cast<int>(rows.size()); }
  int dim() const { return static_cast<int>(z.rows()); }
};

// Inference-mode latents (z = posterior mean), one column per row.
LatentTable embed_rows(const EncoderParams& params, const Eigen::MatrixXd& embeddings,
                       std::vector<LatentRow> rows, int action_count);

// --- checkpoint -------------------------------------------------------------
// Single file: one JSON header line with shapes and the init seed, then the
// raw little-endian doubles of every block in declaration order.

void save_checkpoint(const EncoderParams& params, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace lmn
