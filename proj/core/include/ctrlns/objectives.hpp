#pragma once

// Training objectives (reconstruction, sampled KL against the learned
// transition prior, transition fit, bank sparsity) and the training loop.

#include "ctrlns/datagen.hpp"
#include "ctrlns/metrics.hpp"
#include "ctrlns/model.hpp"
#include "ctrlns/nn.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctrlns::objectives {

using ad::Matrix;
using ad::Var;

struct LossWeights {
  double recon = 1.0;
  double kld = 1.0;
  double transition = 1.0;
};

/// Temperature decays exponentially from `start` to `end` over the first
/// `anneal_fraction` of all steps; hard selection begins at `hard_epoch`
/// (negative: as soon as annealing ends). The residual gate's temperature
/// follows the same curve between its own endpoints.
struct GumbelSchedule {
  double start = 1.0;
  double end = 0.1;
  double anneal_fraction = 0.5;
  int hard_epoch = -1;
  double residual_start = 3.0;
  double residual_end = 0.01;

  double temperature(long step, long total_steps) const;
  double residual_temperature(long step, long total_steps) const;
  bool hard(int epoch, long step, long total_steps) const;
};

struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 64;
  int epochs = 100;
  double sparsity_coeff = 1e-4;
  double weight_decay = 0.0;
  GumbelSchedule gumbel;
  LossWeights weights;
  std::uint64_t seed = 0;
  int kl_samples = 1;
  bool stop_gradient_sparse = false;  // detach z inside the transition term
  int eval_every = 1;                 // epochs between metric snapshots; 0 disables

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  double recon = 0.0;
  double kld = 0.0;
  double transition = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
  LossWeights weights;
  double sparsity_coeff = 0.0;

  /// w_recon * recon + w_kld * kld + w_trans * transition + lambda * sparsity.
  double weighted_sum() const;
};

/// Time-major batch of B sequences of length T.
struct Batch {
  Matrix x;           // (T * B) x obs_dim
  int batch = 0;
  int seq_len = 0;
  Matrix z_true;      // (T * B) x latent_dim, for evaluation only
  std::vector<int> u_true;  // T * B labels
};

Batch make_batch(const datagen::Dataset& ds, std::span<const long> samples);

/// Random draws used by one loss evaluation; fixing them makes the loss a
/// deterministic function of the parameters.
struct LossNoise {
  std::vector<Matrix> posterior;  // kl_samples draws, each (T * B) x n
  Matrix gumbel;                  // ((T - 1) * B) x U_hat
};

LossNoise draw_noise(const model::CtrlnsModel& m, const Batch& b, int kl_samples, Rng& rng);

struct LossTerms {
  Var recon;
  Var kld;
  Var transition;
  Var sparsity;
  Var total;
  Var gate_u;  // ((T - 1) * B) x U_hat
  LossWeights weights;
  double sparsity_coeff = 0.0;
  LossBreakdown values() const;
};

/// Mean squared error over every element.
Var loss_recon(const Var& x, const Var& x_hat);
/// Mean over rows of log_q - log_p.
Var loss_kld(const Var& log_q, const Var& log_p);
/// Mean squared error between gated bank prediction and z_curr.
Var loss_transition(const model::CtrlnsModel& m, const Var& u, const Var& z_prev, const Var& z_curr);

struct LossOptions {
  double temperature = 1.0;
  double residual_temperature = 1.0;
  bool hard = false;
  LossWeights weights;
  double sparsity_coeff = 1e-4;
  bool stop_gradient_sparse = false;
};

LossTerms compute_losses(const model::CtrlnsModel& m, const Batch& b, const LossNoise& noise, const LossOptions& opt);

/// -(recon + kld) with unit weights.
double elbo(const LossTerms& t);

struct Evaluation {
  metrics::MccResult mcc;
  metrics::MccResult mcc_other;
  metrics::DomainAccResult acc;
};

/// Latents from the posterior mean, domains from the noiseless gate argmax
/// on steps 2..T. Pools all listed samples.
Evaluation evaluate(const model::CtrlnsModel& m, const datagen::Dataset& ds, std::span<const long> samples,
                    metrics::CorrMode mode = metrics::CorrMode::spearman);

struct TrainState {
  int epoch = 0;      // completed epochs
  long step = 0;      // completed optimizer steps
  std::string rng_state;
  std::optional<model::OptimizerState> optimizer;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double temperature = 0.0;
  bool hard = false;
  std::optional<metrics::EpochMetrics> metrics;
};

struct TrainCallbacks {
  /// Called after each epoch with the state needed to resume from it.
  std::function<void(const EpochRecord&, const TrainState&, const nn::AdamW&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  TrainState state;
};

/// Joint minimization of the weighted objective with AdamW. Deterministic in
/// (cfg, dataset, model init, resume state). Throws NumericError (with the
/// step index) if the loss becomes non-finite.
TrainResult train(model::CtrlnsModel& m, const datagen::Dataset& ds, std::span<const long> train_samples,
                  std::span<const long> eval_samples, const TrainConfig& cfg, const TrainCallbacks& cb = {},
                  const std::optional<TrainState>& resume = std::nullopt);

}  // namespace ctrlns::objectives
