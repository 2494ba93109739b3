#include "lmn/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lmn/parallel.hpp"
#include "lmn/rng.hpp"
#include "json.hpp"

namespace lmn {

// --- feature hashing --------------------------------------------------------

namespace {

inline bool token_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
}

constexpr uint64_t kSlotSalt = 0x510f'5a17'0000'0000ULL;

}  // namespace

Eigen::VectorXd stub_embed_raw(const std::string& text, const Eigen::VectorXd& numeric,
                               const StubEmbedding& spec) {
  if (spec.dim < 1) throw ConfigError("stub embedding dim must be >= 1");
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(spec.dim);
  const uint64_t dim = static_cast<uint64_t>(spec.dim);

  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !token_char(text[i])) ++i;
    size_t j = i;
    while (j < text.size() && token_char(text[j])) ++j;
    if (j > i) {
      uint64_t h = hash_bytes({text.data() + i, j - i}, spec.seed);
      double sign = (h >> 63) ? 1.0 : -1.0;
      raw[static_cast<int>(h % dim)] += sign;
    }
    i = j;
  }

  for (int s = 0; s < numeric.size(); ++s) {
    uint64_t h = splitmix64(hash_combine(spec.seed ^ kSlotSalt, static_cast<uint64_t>(s)));
    double sign = (h >> 63) ? 1.0 : -1.0;
    raw[static_cast<int>(h % dim)] += sign * numeric[s];
  }
  return raw;
}

Eigen::VectorXd stub_embed(const std::string& text, const Eigen::VectorXd& numeric,
                           const StubEmbedding& spec) {
  Eigen::VectorXd raw = stub_embed_raw(text, numeric, spec);
  double norm = raw.norm();
  if (norm > 0) raw /= norm;
  return raw;
}

Eigen::VectorXd hashed_text_features(const std::string& text, const StubEmbedding& spec) {
  return stub_embed(text, Eigen::VectorXd(), spec);
}

// --- parameters ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(disc_learning_rate > 0))
    throw ConfigError("encoder learning rates must be positive");
  if (epochs < 0) throw ConfigError("encoder.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("encoder.batch_size must be >= 1");
  if (disc_steps < 0) throw ConfigError("encoder.disc_steps must be >= 0");
}

EncoderParams EncoderParams::init(int embed_dim, int hidden_dim, int latent_dim,
                                  int action_count, uint64_t seed) {
  if (embed_dim < 1 || hidden_dim < 1 || latent_dim < 1 || action_count < 2)
    throw ConfigError("encoder dims must be positive (and action_count >= 2)");
  EncoderParams p;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  p.latent_dim = latent_dim;
  p.action_count = action_count;
  p.init_seed = seed;

  p.w_enc.resize(hidden_dim, embed_dim);
  p.b_enc = Eigen::MatrixXd::Zero(hidden_dim, 1);
  p.w_mu.resize(latent_dim, hidden_dim);
  p.b_mu = Eigen::MatrixXd::Zero(latent_dim, 1);
  p.w_logvar.resize(latent_dim, hidden_dim);
  p.b_logvar = Eigen::MatrixXd::Zero(latent_dim, 1);
  p.w_dec_h.resize(hidden_dim, latent_dim);
  p.b_dec_h = Eigen::MatrixXd::Zero(hidden_dim, 1);
  p.w_dec_o.resize(embed_dim, hidden_dim);
  p.b_dec_o = Eigen::MatrixXd::Zero(embed_dim, 1);
  p.w_out_h.resize(hidden_dim, latent_dim + action_count);
  p.b_out_h = Eigen::MatrixXd::Zero(hidden_dim, 1);
  p.w_out_o.resize(1, hidden_dim);
  p.b_out_o = Eigen::MatrixXd::Zero(1, 1);
  p.w_dis_h.resize(hidden_dim, latent_dim);
  p.b_dis_h = Eigen::MatrixXd::Zero(hidden_dim, 1);
  p.w_dis_o.resize(action_count, hidden_dim);
  p.b_dis_o = Eigen::MatrixXd::Zero(action_count, 1);

  Rng rng(hash_combine(seed, 0xe2c0de));
  for (auto& block : p.blocks()) {
    if (block.matrix->cols() == 1) continue;  // biases start at zero
    double bound = std::sqrt(6.0 / double(block.matrix->rows() + block.matrix->cols()));
    for (long c = 0; c < block.matrix->cols(); ++c)
      for (long r = 0; r < block.matrix->rows(); ++r)
        (*block.matrix)(r, c) = rng.uniform(-bound, bound);
  }
  return p;
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams p = other;
  for (auto& block : p.blocks()) block.matrix->setZero();
  return p;
}

std::vector<EncoderParams::Block> EncoderParams::blocks() {
  return {
      {"w_enc", &w_enc, false},     {"b_enc", &b_enc, false},
      {"w_mu", &w_mu, false},       {"b_mu", &b_mu, false},
      {"w_logvar", &w_logvar, false}, {"b_logvar", &b_logvar, false},
      {"w_dec_h", &w_dec_h, false}, {"b_dec_h", &b_dec_h, false},
      {"w_dec_o", &w_dec_o, false}, {"b_dec_o", &b_dec_o, false},
      {"w_out_h", &w_out_h, false}, {"b_out_h", &b_out_h, false},
      {"w_out_o", &w_out_o, false}, {"b_out_o", &b_out_o, false},
      {"w_dis_h", &w_dis_h, true},  {"b_dis_h", &b_dis_h, true},
      {"w_dis_o", &w_dis_o, true},  {"b_dis_o", &b_dis_o, true},
  };
}

std::vector<EncoderParams::Block> EncoderParams::blocks() const {
  return const_cast<EncoderParams*>(this)->blocks();
}

size_t EncoderParams::parameter_count() const {
  size_t n = 0;
  for (const auto& block : blocks()) n += static_cast<size_t>(block.matrix->size());
  return n;
}

// --- forward / backward -------------------------------------------------------

namespace {

inline Eigen::MatrixXd affine(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& b) {
  return (w * x).colwise() + Eigen::VectorXd(b.col(0));
}

struct Forward {
  Eigen::MatrixXd h1, mu, logvar, sigma, z;
  Eigen::MatrixXd dec_h, recon_err;     // tanh hidden, (xhat - x)
  Eigen::MatrixXd one_hot, out_in, out_h;
  Eigen::RowVectorXd out_err;           // yhat - y
  Eigen::MatrixXd dis_h, dis_p;         // tanh hidden, softmax probabilities
  LossComponents comps;
};

void check_batch(const EncoderParams& p, const EncoderBatch& batch) {
  if (batch.embeddings.rows() != p.embed_dim)
    throw std::invalid_argument("batch embedding dim does not match encoder");
  const int b = batch.size();
  if (batch.actions.size() != b || batch.outcomes.size() != b)
    throw std::invalid_argument("batch actions/outcomes length mismatch");
  if (batch.noise.rows() != p.latent_dim || batch.noise.cols() != b)
    throw std::invalid_argument("batch noise must be latent_dim x batch");
  for (int i = 0; i < b; ++i)
    if (batch.actions[i] < 0 || batch.actions[i] >= p.action_count)
      throw std::invalid_argument("batch action outside encoder action set");
}

Forward run_forward(const EncoderParams& p, const EncoderBatch& batch,
                    const LossWeights& w) {
  check_batch(p, batch);
  const int b = batch.size();
  Forward f;

  f.h1 = affine(p.w_enc, batch.embeddings, p.b_enc).array().tanh();
  f.mu = affine(p.w_mu, f.h1, p.b_mu);
  f.logvar = affine(p.w_logvar, f.h1, p.b_logvar);
  f.sigma = (0.5 * f.logvar).array().exp();
  f.z = f.mu + f.sigma.cwiseProduct(batch.noise);

  f.dec_h = affine(p.w_dec_h, f.z, p.b_dec_h).array().tanh();
  f.recon_err = affine(p.w_dec_o, f.dec_h, p.b_dec_o) - batch.embeddings;
  f.comps.recon = f.recon_err.squaredNorm() / b;

  f.one_hot = Eigen::MatrixXd::Zero(p.action_count, b);
  for (int i = 0; i < b; ++i) f.one_hot(batch.actions[i], i) = 1.0;
  f.out_in.resize(p.latent_dim + p.action_count, b);
  f.out_in.topRows(p.latent_dim) = f.z;
  f.out_in.bottomRows(p.action_count) = f.one_hot;
  f.out_h = affine(p.w_out_h, f.out_in, p.b_out_h).array().tanh();
  f.out_err = (p.w_out_o * f.out_h).row(0);
  f.out_err += Eigen::RowVectorXd::Constant(b, p.b_out_o(0, 0));
  f.out_err -= batch.outcomes.transpose();
  f.comps.outcome = f.out_err.squaredNorm() / b;

  f.comps.kl = 0.5 *
               (f.mu.array().square() + f.sigma.array().square() - 1.0 -
                f.logvar.array())
                   .sum() /
               b;

  f.dis_h = affine(p.w_dis_h, f.z, p.b_dis_h).array().tanh();
  Eigen::MatrixXd logits = affine(p.w_dis_o, f.dis_h, p.b_dis_o);
  Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
  Eigen::MatrixXd shifted = logits.rowwise() - col_max;
  f.dis_p = shifted.array().exp();
  Eigen::RowVectorXd col_sum = f.dis_p.colwise().sum();
  f.dis_p.array().rowwise() /= col_sum.array();

  double ce = 0.0;
  for (int i = 0; i < b; ++i)
    ce -= shifted(batch.actions[i], i) - std::log(col_sum[i]);
  ce /= b;
  f.comps.mi = -ce;

  f.comps.total = f.comps.recon + w.lambda * f.comps.outcome + w.beta * f.comps.kl +
                  w.alpha * f.comps.mi;
  return f;
}

const char* first_nonfinite(const LossComponents& c) {
  if (!std::isfinite(c.recon)) return "recon";
  if (!std::isfinite(c.outcome)) return "outcome";
  if (!std::isfinite(c.kl)) return "kl";
  if (!std::isfinite(c.mi)) return "mi";
  if (!std::isfinite(c.total)) return "total";
  return nullptr;
}

}  // namespace

Encoded encode(const EncoderParams& params, const Eigen::VectorXd& embedding,
               const Eigen::VectorXd* noise) {
  if (embedding.size() != params.embed_dim)
    throw std::invalid_argument("embedding dim does not match encoder");
  if (noise && noise->size() != params.latent_dim)
    throw std::invalid_argument("noise dim does not match latent dim");
  Encoded e;
  Eigen::VectorXd h1 =
      (params.w_enc * embedding + params.b_enc.col(0)).array().tanh();
  e.mu = params.w_mu * h1 + params.b_mu.col(0);
  Eigen::VectorXd logvar = params.w_logvar * h1 + params.b_logvar.col(0);
  e.sigma = (0.5 * logvar).array().exp();
  e.z = noise ? Eigen::VectorXd(e.mu + e.sigma.cwiseProduct(*noise)) : e.mu;
  return e;
}

Eigen::MatrixXd encode_batch_mean(const EncoderParams& params,
                                  const Eigen::MatrixXd& embeddings) {
  if (embeddings.rows() != params.embed_dim)
    throw std::invalid_argument("embedding dim does not match encoder");
  Eigen::MatrixXd h1 = affine(params.w_enc, embeddings, params.b_enc).array().tanh();
  return affine(params.w_mu, h1, params.b_mu);
}

LossComponents loss(const EncoderParams& params, const EncoderBatch& batch,
                    const LossWeights& weights) {
  return run_forward(params, batch, weights).comps;
}

LossComponents loss_and_grads(const EncoderParams& params, const EncoderBatch& batch,
                              const LossWeights& weights, EncoderParams& grads) {
  const Forward f = run_forward(params, batch, weights);
  const int b = batch.size();
  const int d = params.latent_dim;

  // Reconstruction path.
  Eigen::MatrixXd d_xhat = (2.0 / b) * f.recon_err;
  grads.w_dec_o = d_xhat * f.dec_h.transpose();
  grads.b_dec_o.col(0) = d_xhat.rowwise().sum();
  Eigen::MatrixXd d_dec_h = params.w_dec_o.transpose() * d_xhat;
  d_dec_h.array() *= 1.0 - f.dec_h.array().square();
  grads.w_dec_h = d_dec_h * f.z.transpose();
  grads.b_dec_h.col(0) = d_dec_h.rowwise().sum();
  Eigen::MatrixXd d_z = params.w_dec_h.transpose() * d_dec_h;

  // Outcome head.
  Eigen::RowVectorXd d_yhat = (2.0 * weights.lambda / b) * f.out_err;
  grads.w_out_o = d_yhat * f.out_h.transpose();
  grads.b_out_o(0, 0) = d_yhat.sum();
  Eigen::MatrixXd d_out_h = params.w_out_o.transpose() * d_yhat;
  d_out_h.array() *= 1.0 - f.out_h.array().square();
  grads.w_out_h = d_out_h * f.out_in.transpose();
  grads.b_out_h.col(0) = d_out_h.rowwise().sum();
  d_z += (params.w_out_h.transpose() * d_out_h).topRows(d);

  // Mutual-information penalty: total carries alpha * (-cross_entropy), so the
  // encoder ascends the discriminator's loss while the analytic gradient stays
  // the plain gradient of the reported total.
  Eigen::MatrixXd d_logits = (-weights.alpha / b) * (f.dis_p - f.one_hot);
  grads.w_dis_o = d_logits * f.dis_h.transpose();
  grads.b_dis_o.col(0) = d_logits.rowwise().sum();
  Eigen::MatrixXd d_dis_h = params.w_dis_o.transpose() * d_logits;
  d_dis_h.array() *= 1.0 - f.dis_h.array().square();
  grads.w_dis_h = d_dis_h * f.z.transpose();
  grads.b_dis_h.col(0) = d_dis_h.rowwise().sum();
  d_z += params.w_dis_h.transpose() * d_dis_h;

  // Reparameterization plus the closed-form KL terms.
  Eigen::MatrixXd d_mu = d_z + (weights.beta / b) * f.mu;
  Eigen::MatrixXd d_sigma_from_z = d_z.cwiseProduct(batch.noise);
  Eigen::MatrixXd d_logvar =
      0.5 * f.sigma.cwiseProduct(d_sigma_from_z) +
      (0.5 * weights.beta / b) * (f.sigma.array().square() - 1.0).matrix();

  grads.w_mu = d_mu * f.h1.transpose();
  grads.b_mu.col(0) = d_mu.rowwise().sum();
  grads.w_logvar = d_logvar * f.h1.transpose();
  grads.b_logvar.col(0) = d_logvar.rowwise().sum();

  Eigen::MatrixXd d_h1 =
      params.w_mu.transpose() * d_mu + params.w_logvar.transpose() * d_logvar;
  d_h1.array() *= 1.0 - f.h1.array().square();
  grads.w_enc = d_h1 * batch.embeddings.transpose();
  grads.b_enc.col(0) = d_h1.rowwise().sum();

  return f.comps;
}

double grad_check(const EncoderParams& params, const EncoderBatch& batch,
                  const LossWeights& weights, double step) {
  EncoderParams analytic = EncoderParams::zeros_like(params);
  loss_and_grads(params, batch, weights, analytic);

  auto param_blocks = params.blocks();
  auto grad_blocks = analytic.blocks();
  std::vector<std::pair<size_t, size_t>> index;  // (block, offset)
  for (size_t bi = 0; bi < param_blocks.size(); ++bi)
    for (size_t off = 0; off < static_cast<size_t>(param_blocks[bi].matrix->size()); ++off)
      index.emplace_back(bi, off);

  std::vector<double> rel_err(index.size(), 0.0);
#pragma omp parallel
  {
    EncoderParams local = params;  // per-thread scratch copy
    auto local_blocks = local.blocks();
#pragma omp for schedule(static)
    for (long i = 0; i < static_cast<long>(index.size()); ++i) {
      auto [bi, off] = index[static_cast<size_t>(i)];
      double* slot = local_blocks[bi].matrix->data() + off;
      const double saved = *slot;
      *slot = saved + step;
      double up = loss(local, batch, weights).total;
      *slot = saved - step;
      double down = loss(local, batch, weights).total;
      *slot = saved;
      double fd = (up - down) / (2.0 * step);
      double ga = grad_blocks[bi].matrix->data()[off];
      rel_err[static_cast<size_t>(i)] =
          std::abs(ga - fd) / std::max({1.0, std::abs(ga), std::abs(fd)});
    }
  }
  return *std::max_element(rel_err.begin(), rel_err.end());
}

// --- training -----------------------------------------------------------------

namespace {

// Cross-entropy gradients of the discriminator alone, with z held fixed.
double discriminator_grads(const EncoderParams& p, const Eigen::MatrixXd& z,
                           const Eigen::VectorXi& actions, Eigen::MatrixXd& g_wh,
                           Eigen::MatrixXd& g_bh, Eigen::MatrixXd& g_wo,
                           Eigen::MatrixXd& g_bo) {
  const int b = static_cast<int>(z.cols());
  Eigen::MatrixXd h = affine(p.w_dis_h, z, p.b_dis_h).array().tanh();
  Eigen::MatrixXd logits = affine(p.w_dis_o, h, p.b_dis_o);
  Eigen::RowVectorXd col_max = logits.colwise().maxCoeff();
  Eigen::MatrixXd shifted = logits.rowwise() - col_max;
  Eigen::MatrixXd prob = shifted.array().exp();
  Eigen::RowVectorXd col_sum = prob.colwise().sum();
  prob.array().rowwise() /= col_sum.array();

  double ce = 0.0;
  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(p.action_count, b);
  for (int i = 0; i < b; ++i) {
    one_hot(actions[i], i) = 1.0;
    ce -= shifted(actions[i], i) - std::log(col_sum[i]);
  }
  ce /= b;

  Eigen::MatrixXd d_logits = (prob - one_hot) / b;
  g_wo = d_logits * h.transpose();
  g_bo.col(0) = d_logits.rowwise().sum();
  Eigen::MatrixXd d_h = p.w_dis_o.transpose() * d_logits;
  d_h.array() *= 1.0 - h.array().square();
  g_wh = d_h * z.transpose();
  g_bh.col(0) = d_h.rowwise().sum();
  return ce;
}

}  // namespace

TrainResult train(const Eigen::MatrixXd& embeddings, const std::vector<int>& actions,
                  const std::vector<double>& outcomes, const EncoderParams& initial,
                  const TrainConfig& config, const LossWeights& weights) {
  config.validate();
  const int n = static_cast<int>(embeddings.cols());
  if (static_cast<int>(actions.size()) != n || static_cast<int>(outcomes.size()) != n)
    throw std::invalid_argument("training rows/actions/outcomes size mismatch");
  if (n == 0) throw std::invalid_argument("cannot train on an empty table");

  TrainResult result;
  result.params = initial;
  EncoderParams& p = result.params;
  EncoderParams grads = EncoderParams::zeros_like(p);
  Rng rng(hash_combine(config.seed, 0x7ea1));

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  Eigen::MatrixXd g_wh(p.hidden_dim, p.latent_dim), g_bh(p.hidden_dim, 1);
  Eigen::MatrixXd g_wo(p.action_count, p.hidden_dim), g_bo(p.action_count, 1);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    LossComponents sums;
    int batches = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int b = std::min(config.batch_size, n - start);
      EncoderBatch batch;
      batch.embeddings.resize(p.embed_dim, b);
      batch.actions.resize(b);
      batch.outcomes.resize(b);
      batch.noise.resize(p.latent_dim, b);
      for (int i = 0; i < b; ++i) {
        int row = order[static_cast<size_t>(start + i)];
        batch.embeddings.col(i) = embeddings.col(row);
        batch.actions[i] = actions[static_cast<size_t>(row)];
        batch.outcomes[i] = outcomes[static_cast<size_t>(row)];
        for (int k = 0; k < p.latent_dim; ++k) batch.noise(k, i) = rng.normal();
      }

      // Detached latents for the adversary: recompute mu/sigma once, then let
      // the discriminator take its own step(s) on fixed z.
      if (config.disc_steps > 0) {
        Eigen::MatrixXd h1 = affine(p.w_enc, batch.embeddings, p.b_enc).array().tanh();
        Eigen::MatrixXd mu = affine(p.w_mu, h1, p.b_mu);
        Eigen::MatrixXd sigma =
            (0.5 * affine(p.w_logvar, h1, p.b_logvar)).array().exp();
        Eigen::MatrixXd z = mu + sigma.cwiseProduct(batch.noise);
        for (int s = 0; s < config.disc_steps; ++s) {
          discriminator_grads(p, z, batch.actions, g_wh, g_bh, g_wo, g_bo);
          p.w_dis_h -= config.disc_learning_rate * g_wh;
          p.b_dis_h -= config.disc_learning_rate * g_bh;
          p.w_dis_o -= config.disc_learning_rate * g_wo;
          p.b_dis_o -= config.disc_learning_rate * g_bo;
        }
      }

      LossComponents comps = loss_and_grads(p, batch, weights, grads);
      if (const char* name = first_nonfinite(comps))
        throw TrainDivergence("encoder training produced a non-finite '" +
                                  std::string(name) + "' component at epoch " +
                                  std::to_string(epoch),
                              result.trace);
      if (comps.total > 1e6)
        throw TrainDivergence("encoder training diverged (total loss " +
                                  format_g(comps.total, 6) + ") at epoch " +
                                  std::to_string(epoch),
                              result.trace);

      auto param_blocks = p.blocks();
      auto grad_blocks = grads.blocks();
      for (size_t i = 0; i < param_blocks.size(); ++i) {
        if (param_blocks[i].discriminator) continue;
        *param_blocks[i].matrix -= config.learning_rate * (*grad_blocks[i].matrix);
      }

      sums.total += comps.total;
      sums.recon += comps.recon;
      sums.outcome += comps.outcome;
      sums.kl += comps.kl;
      sums.mi += comps.mi;
      ++batches;
    }

    LossComponents mean{sums.total / batches, sums.recon / batches,
                        sums.outcome / batches, sums.kl / batches, sums.mi / batches};
    result.trace.push_back({epoch, mean});
  }
  return result;
}

void save_loss_trace_csv(const std::vector<EpochTrace>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write loss trace: " + path);
  out << "epoch,total,recon,outcome,kl,mi\n";
  for (const auto& row : trace) {
    out << row.epoch << ',' << format_g(row.mean.total) << ',' << format_g(row.mean.recon)
        << ',' << format_g(row.mean.outcome) << ',' << format_g(row.mean.kl) << ','
        << format_g(row.mean.mi) << '\n';
  }
}

LatentTable embed_rows(const EncoderParams& params, const Eigen::MatrixXd& embeddings,
                       std::vector<LatentRow> rows, int action_count) {
  if (embeddings.cols() != static_cast<long>(rows.size()))
    throw std::invalid_argument("embedding count does not match latent rows");
  LatentTable table;
  table.rows = std::move(rows);
  table.z = encode_batch_mean(params, embeddings);
  table.action_count = action_count;
  return table;
}

// --- checkpoint ----------------------------------------------------------------

void save_checkpoint(const EncoderParams& params, const std::string& path) {
  nlohmann::json header;
  header["format"] = "latentmatch-encoder";
  header["version"] = 1;
  header["byte_order"] = "little-endian";
  header["embed_dim"] = params.embed_dim;
  header["hidden_dim"] = params.hidden_dim;
  header["latent_dim"] = params.latent_dim;
  header["action_count"] = params.action_count;
  header["init_seed"] = params.init_seed;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& block : params.blocks())
    blocks.push_back({block.name, block.matrix->rows(), block.matrix->cols()});
  header["blocks"] = blocks;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << header.dump() << '\n';
  for (const auto& block : params.blocks())
    out.write(reinterpret_cast<const char*>(block.matrix->data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(block.matrix->size())));
}

EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("checkpoint missing header line: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (header.value("format", "") != "latentmatch-encoder")
    throw std::runtime_error("not an encoder checkpoint: " + path);

  EncoderParams params = EncoderParams::init(
      header.at("embed_dim").get<int>(), header.at("hidden_dim").get<int>(),
      header.at("latent_dim").get<int>(), header.at("action_count").get<int>(),
      header.at("init_seed").get<uint64_t>());
  auto blocks = params.blocks();
  const auto& meta = header.at("blocks");
  if (meta.size() != blocks.size())
    throw std::runtime_error("checkpoint block list mismatch: " + path);
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (meta[i][0].get<std::string>() != blocks[i].name ||
        meta[i][1].get<long>() != blocks[i].matrix->rows() ||
        meta[i][2].get<long>() != blocks[i].matrix->cols())
      throw std::runtime_error("checkpoint block shape mismatch at " +
                               std::string(blocks[i].name));
    in.read(reinterpret_cast<char*>(blocks[i].matrix->data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(blocks[i].matrix->size())));
    if (!in) throw std::runtime_error("checkpoint truncated at " + std::string(blocks[i].name));
  }
  return params;
}

}  // namespace lmn
