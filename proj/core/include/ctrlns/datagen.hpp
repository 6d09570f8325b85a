#pragma once

// Synthetic nonstationary sequences: domain labels from a pool that mixes two
// Markov chains with i.i.d. uniform draws, latent dynamics switched by the
// label, and an invertible leaky-ReLU mixing into observations.
//
// Support convention used throughout: mask(i, j) = 1 means z_{t-1,i} is a
// parent of z_{t,j}.

#include "ctrlns/jet.hpp"
#include "ctrlns/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctrlns::datagen {

using Mask = Eigen::MatrixXi;

enum class Provenance { markov_a, markov_b, uniform, custom };
std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);

enum class VariabilityMode { distinct_masks, identical_masks };

struct GenConfig {
  int n_domains = 5;
  int latent_dim = 8;
  int obs_dim = 8;
  int seq_len = 15;
  int n_sequences = 1000;          // domain-label sequences
  int batch_per_domain_seq = 32;   // latent sequences drawn per label sequence
  std::uint64_t seed = 0;
  double noise_scale = 0.1;
  // Per-domain, per-dimension noise gains exp(noise_modulation * U(-1, 1));
  // zero gives one shared isotropic scale.
  double noise_modulation = 1.0;
  int mixing_depth = 3;
  double leaky_slope = 0.2;

  // Fraction of label sequences drawn from chain A, chain B, uniform.
  std::array<double, 3> provenance_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  // Optional fixed transition matrices (U x U, rows sum to 1); random if empty.
  std::vector<std::vector<double>> markov_a;
  std::vector<std::vector<double>> markov_b;

  int transition_hidden = 16;
  int transition_layers = 1;       // hidden layers per output network
  double mask_density = 0.3;       // off-diagonal edge probability
  bool lossy = true;               // saturating clamp on parent inputs
  double condition_bound = 100.0;
  int mixing_retry_budget = 1000;

  long total_samples() const { return static_cast<long>(n_sequences) * batch_per_domain_seq; }
  /// Throws InvalidConfig naming the offending field.
  void validate() const;
};

struct DomainSequence {
  std::vector<int> labels;  // values in 1..U
  Provenance provenance = Provenance::custom;
};

/// Scalar network producing one latent coordinate from its (clamped, masked)
/// parents. Hidden layers use tanh; zero hidden layers gives an affine map.
struct OutputNet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  template <typename S>
  S eval(std::span<const S> input) const;
};

/// One regime's transition m_u: z_{t,j} = net_j(clamp(z_{t-1}) restricted to
/// parents of j) + noise_scale * gain_j * eps_j.
struct DomainTransition {
  Mask mask;
  std::vector<OutputNet> outputs;
  Eigen::MatrixXd clamp_lo;  // per edge (i, j)
  Eigen::MatrixXd clamp_hi;
  bool lossy = true;
  Eigen::VectorXd noise_gain;  // per output; empty means all ones

  int dim() const { return static_cast<int>(mask.rows()); }
  double noise_std(int j, double base) const { return noise_gain.size() == 0 ? base : base * noise_gain(j); }

  /// Noise-free part of the transition, on doubles or jets.
  template <typename S>
  std::vector<S> mean(std::span<const S> z_prev) const;

  /// Affine transition z_t = A^T z_{t-1} + b (+ noise), A(i,j) the weight of
  /// edge i -> j; the mask is the nonzero pattern of A.
  static DomainTransition affine(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);
};

struct GroundTruthSystem {
  std::vector<DomainTransition> transitions;
  std::vector<Eigen::MatrixXd> mixing;  // applied in order, leaky after each
  double leaky_slope = 0.2;
  double noise_scale = 0.1;
  double condition_bound = 100.0;
  int latent_dim = 0;
  int obs_dim = 0;

  int n_domains() const { return static_cast<int>(transitions.size()); }
  std::vector<Mask> support_masks() const;
  /// FNV-1a digest over every parameter, as 16 hex digits.
  std::string fingerprint() const;
};

struct MixingReport {
  bool ok = false;
  std::vector<double> condition_numbers;
  std::vector<double> min_singular_values;
};

struct Dataset {
  long n_samples = 0;
  int seq_len = 0;
  int obs_dim = 0;
  int latent_dim = 0;
  std::vector<float> observations;     // [n_samples x T x obs_dim]
  std::vector<float> latents;          // [n_samples x T x latent_dim]
  std::vector<std::int32_t> domains;   // [n_samples x T], values 1..U
  std::vector<std::int32_t> provenance;  // [n_samples], Provenance as int
  GenConfig gen_config;
  std::string system_fingerprint;

  float obs(long s, int t, int d) const { return observations[(s * seq_len + t) * obs_dim + d]; }
  float latent(long s, int t, int d) const { return latents[(s * seq_len + t) * latent_dim + d]; }
  int domain(long s, int t) const { return domains[s * seq_len + t]; }
  /// Throws FormatError if array sizes disagree with the recorded shape.
  void check_shapes() const;
};

struct Generated {
  Dataset dataset;
  GroundTruthSystem system;
  std::vector<DomainSequence> domain_sequences;
};

/// Row-stochastic matrix with rows drawn as softmax(concentration * N(0,1)).
Eigen::MatrixXd random_markov_matrix(int n_states, Rng& rng, double concentration = 2.0);
/// Chain of `length` labels (1-based) started at `start` (1-based).
std::vector<int> sample_markov_chain(const Eigen::MatrixXd& transition, int start, int length, Rng& rng);

/// Label sequences pooled from two random Markov chains and i.i.d. uniform
/// draws, in proportions `cfg.provenance_mix`.
std::vector<DomainSequence> sample_domain_sequences(const GenConfig& cfg, Rng& rng);

/// Random support masks: self-edges always present, every source keeps at
/// least one other child, and (distinct mode) masks pairwise differ.
std::vector<Mask> random_masks(const GenConfig& cfg, Rng& rng, VariabilityMode mode);

GroundTruthSystem build_ground_truth(const GenConfig& cfg, Rng& rng, VariabilityMode mode,
                                     const std::optional<std::vector<Mask>>& masks = std::nullopt);

/// z_0 ~ N(0, I); z_t = m_{u_t}(z_{t-1}) + noise. Returns T x n.
/// Throws NumericError carrying the step index on non-finite values.
Eigen::MatrixXd generate_latents(const GroundTruthSystem& sys, std::span<const int> labels, Rng& rng);
/// Same, from a given initial state.
Eigen::MatrixXd generate_latents(const GroundTruthSystem& sys, std::span<const int> labels, const Eigen::VectorXd& z0,
                                 Rng& rng);

/// Applies g row by row to a T x n latent trajectory.
Eigen::MatrixXd apply_mixing(const GroundTruthSystem& sys, const Eigen::MatrixXd& latents);

MixingReport verify_mixing_invertible(const GroundTruthSystem& sys);

/// Full pipeline; reproducible from cfg alone.
Generated generate_dataset(const GenConfig& cfg, VariabilityMode mode = VariabilityMode::distinct_masks);

struct LoadedDataset {
  Dataset dataset;
  std::vector<std::string> warnings;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

// JSON forms. Parsing a GenConfig rejects unknown keys and validates.
void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);
nlohmann::json system_to_json(const GroundTruthSystem& sys);
GroundTruthSystem system_from_json(const nlohmann::json& j);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
/// Throws FormatError on version mismatch or corruption; a fingerprint that
/// no longer matches the stored provenance digest yields a warning.
LoadedDataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename S>
S OutputNet::eval(std::span<const S> input) const {
  std::vector<S> h(input.begin(), input.end());
  const S zero = input.empty() ? S{} : input.front() * 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& w = weights[l];
    std::vector<S> next;
    next.reserve(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      S acc = zero + biases[l](r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (w(r, c) != 0.0) acc += h[static_cast<std::size_t>(c)] * w(r, c);
      }
      if (l + 1 < weights.size()) {
        using std::tanh;
        acc = tanh(acc);
      }
      next.push_back(std::move(acc));
    }
    h = std::move(next);
  }
  return h.front();
}

template <typename S>
std::vector<S> DomainTransition::mean(std::span<const S> z_prev) const {
  const int n = dim();
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<S> in(static_cast<std::size_t>(n), z_prev.front() * 0.0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (mask(i, j) == 0) {
        in[k] = z_prev[k] * 0.0;
      } else if (lossy) {
        in[k] = clamp(z_prev[k], clamp_lo(i, j), clamp_hi(i, j));
      } else {
        in[k] = z_prev[k];
      }
    }
    out.push_back(outputs[static_cast<std::size_t>(j)].eval(std::span<const S>(in)));
  }
  return out;
}

}  // namespace ctrlns::datagen
