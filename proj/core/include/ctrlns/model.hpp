#pragma once

// Sequential VAE with gated transition bank and inverse-dynamics prior.
//
// Sequence batches are laid out time-major: row t * B + b holds step t of
// sequence b, so the "previous" and "current" halves of every transition
// are contiguous row blocks.

#include "ctrlns/autodiff.hpp"
#include "ctrlns/nn.hpp"
#include "ctrlns/rng.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ctrlns::model {

using ad::Matrix;
using ad::Var;

/// raw: gate net on [x_prev, x_curr]; encoded: gate net on the posterior
/// means; residual: no gate net, logits are the negated bank residuals on the
/// posterior means, -|mu_curr - m_k(mu_prev)|^2 / (2 T).
enum class GateInput { raw, encoded, residual };

std::string to_string(GateInput g);
GateInput parse_gate_input(const std::string& s);

struct ModelConfig {
  int latent_dim = 8;
  int obs_dim = 8;
  int n_domains_est = 5;
  std::vector<int> encoder_hidden{64, 64};
  std::vector<int> decoder_hidden{64, 64};
  std::vector<int> transition_hidden{32};
  std::vector<int> prior_hidden{32};
  std::vector<int> gate_hidden{64};
  double gumbel_temperature = 1.0;
  bool gumbel_hard = false;
  double sparsity_coeff = 1e-4;
  GateInput gate_input = GateInput::raw;
  double log_floor = 1e-8;  // floor on |d eps / d z| before the log
  double leaky_slope = 0.2;
  /// First-step prior: fixed N(0, I) pins the latent scale; learned fits a
  /// diagonal Gaussian.
  bool learn_initial_prior = false;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct PosteriorSample {
  Var mean;     // rows x n
  Var log_var;  // rows x n
  Var sample;   // rows x n
  Var log_q;    // rows x 1
};

struct GateSample {
  Var u;       // rows x U_hat; one-hot in hard mode
  Var soft;    // rows x U_hat relaxed sample
  Var logits;  // rows x U_hat
};

class CtrlnsModel {
 public:
  explicit CtrlnsModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  /// Reparameterized diagonal-Gaussian posterior. `noise` (rows x n) is the
  /// standard-normal draw; zero noise returns the mean.
  PosteriorSample encode(const Var& x, const Matrix& noise) const;
  PosteriorSample encode(const Var& x, Rng& rng) const;
  Var decode(const Var& z) const;

  /// Gate logits from consecutive observations (rows aligned). The residual
  /// temperature only affects GateInput::residual, whose logits carry no
  /// gradient.
  Var gate_logits(const Var& x_prev, const Var& x_curr, double residual_temperature = 1.0) const;

  /// Gumbel-Softmax relaxation of `logits` with the given Gumbel draws. Hard
  /// mode returns the one-hot argmax with straight-through gradients.
  static GateSample gumbel_gate(const Var& logits, double temperature, bool hard, const Matrix& gumbel_noise);
  GateSample gate(const Var& x_prev, const Var& x_curr, double temperature, bool hard, Rng& rng,
                  double residual_temperature = 1.0) const;

  /// Sum over bank members of u_k * m_k(z_prev).
  Var transition_predict(const Var& u, const Var& z_prev) const;
  /// Output of a single bank member.
  Var bank_member(int k, const Var& z_prev) const;

  /// Per-row log p(z_curr | z_prev, u) through the inverse dynamics: the sum
  /// over i of log N(eps_i; 0, 1) + log|d eps_i / d z_curr_i|.
  Var prior_log_density(const Var& z_curr, const Var& z_prev, const Var& u) const;
  /// Per-row estimated noise eps_i and d eps_i / d z_curr_i (rows x n each).
  std::pair<Var, Var> inverse_dynamics(const Var& z_curr, const Var& z_prev, const Var& u) const;
  /// Diagonal Gaussian density for the first step (fixed or learned), per row.
  Var initial_log_density(const Var& z) const;

  /// Sum of squared input-layer weights over all bank members.
  Var bank_sparsity() const;

  /// Relabels domains: new member k is old member perm[k]. Gate outputs and
  /// the inverse nets' domain inputs are permuted consistently.
  void permute_domains(const std::vector<int>& perm);

  const std::vector<nn::Mlp>& bank() const { return bank_; }
  const std::vector<nn::Mlp>& inverse_nets() const { return inverse_; }
  const nn::Mlp& encoder() const { return encoder_; }
  const nn::Mlp& decoder() const { return decoder_; }
  /// Empty (no layers) in residual gate mode.
  const nn::Mlp& gate_net() const { return gate_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  nn::Mlp gate_;
  std::vector<nn::Mlp> bank_;
  std::vector<nn::Mlp> inverse_;
  Var init_mean_;
  Var init_log_std_;
};

/// Row-block views of a time-major batch with `batch` sequences.
Var previous_steps(const Var& seq, Eigen::Index batch);
Var current_steps(const Var& seq, Eigen::Index batch);

/// Per-row diagonal-Gaussian log-density of `x` under N(mean, exp(log_var)).
Var gaussian_log_density(const Var& x, const Var& mean, const Var& log_var);

/// Groups bank members whose estimated Jacobian supports coincide; entry k
/// is the merged label of member k (labels 0.., ordered by first use).
std::vector<int> merge_equivalent_members(const CtrlnsModel& m, const std::vector<Eigen::VectorXd>& eval_points,
                                          double threshold);

// Checkpoints: a versioned container holding the model config, every named
// parameter in float64, and optional optimizer moments plus arbitrary
// training metadata.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct OptimizerState {
  long step = 0;
  std::vector<Matrix> first_moments;
  std::vector<Matrix> second_moments;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Matrix>> params;
  std::optional<OptimizerState> optimizer;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& path, const CtrlnsModel& m, const nn::AdamW* opt,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint parameters into `m` (names and shapes must match).
void load_params(CtrlnsModel& m, const Checkpoint& ck);

}  // namespace ctrlns::model
