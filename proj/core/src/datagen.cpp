#include "ctrlns/datagen.hpp"

#include "ctrlns/container.hpp"
#include "ctrlns/error.hpp"
#include "ctrlns/jet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace ctrlns::datagen {

namespace {

constexpr std::string_view kDatasetMagic = "CTRLNSDS";

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw InvalidConfig("GenConfig." + field + ": " + why);
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, int n, const std::string& field) {
  require(static_cast<int>(rows.size()) == n, field, "expected " + std::to_string(n) + " rows");
  Eigen::MatrixXd m(n, n);
  for (int r = 0; r < n; ++r) {
    require(static_cast<int>(rows[static_cast<std::size_t>(r)].size()) == n, field, "row length must equal n_domains");
    double s = 0.0;
    for (int c = 0; c < n; ++c) {
      const double v = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      require(v >= 0.0 && std::isfinite(v), field, "entries must be finite and nonnegative");
      m(r, c) = v;
      s += v;
    }
    require(std::abs(s - 1.0) < 1e-9, field, "rows must sum to 1");
  }
  return m;
}

// Draw from a categorical distribution given by a probability row.
int categorical(const Eigen::RowVectorXd& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    acc += p(k);
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = p.size() - 1; k >= 0; --k) {
    if (p(k) > 0.0) return static_cast<int>(k);
  }
  return 0;
}

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

// Evaluates one output net on doubles without per-call allocation beyond
// Eigen temporaries.
double eval_output(const OutputNet& net, const Eigen::VectorXd& in) {
  Eigen::VectorXd h = in;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Eigen::VectorXd pre = net.weights[l] * h + net.biases[l];
    if (l + 1 < net.weights.size()) pre = pre.array().tanh();
    h = std::move(pre);
  }
  return h(0);
}

Eigen::VectorXd transition_mean(const DomainTransition& tr, const Eigen::VectorXd& z) {
  const int n = tr.dim();
  Eigen::VectorXd out(n);
  Eigen::VectorXd in(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (tr.mask(i, j) == 0) {
        in(i) = 0.0;
      } else if (tr.lossy) {
        in(i) = std::clamp(z(i), tr.clamp_lo(i, j), tr.clamp_hi(i, j));
      } else {
        in(i) = z(i);
      }
    }
    out(j) = eval_output(tr.outputs[static_cast<std::size_t>(j)], in);
  }
  return out;
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal() * scale;
  return m;
}

double condition_number(const Eigen::MatrixXd& w, double* smin = nullptr) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const auto& s = svd.singularValues();
  const double lo = s(s.size() - 1);
  if (smin) *smin = lo;
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / lo;
}

// One output network: inputs are all n coordinates, with columns of
// non-parents zeroed so the support is exactly the mask column.
OutputNet random_output_net(const Mask& mask, int j, int hidden, int layers, Rng& rng) {
  const int n = static_cast<int>(mask.rows());
  OutputNet net;
  int fan_in = n;
  int n_parents = 0;
  for (int i = 0; i < n; ++i) n_parents += mask(i, j) != 0;
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd w(hidden, fan_in);
    const double scale = l == 0 ? 1.5 / std::sqrt(std::max(n_parents, 1)) : 1.5 / std::sqrt(fan_in);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.normal() * scale;
    if (l == 0) {
      for (int i = 0; i < n; ++i) {
        if (mask(i, j) == 0) w.col(i).setZero();
      }
    }
    Eigen::VectorXd b(hidden);
    for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = rng.normal() * 0.3;
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
    fan_in = hidden;
  }
  Eigen::MatrixXd w(1, fan_in);
  const double scale = layers == 0 ? 0.8 / std::sqrt(std::max(n_parents, 1)) : 1.2 / std::sqrt(fan_in);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.normal() * scale;
  if (layers == 0) {
    for (int i = 0; i < n; ++i) {
      if (mask(i, j) == 0) w(0, i) = 0.0;
    }
  }
  net.weights.push_back(std::move(w));
  net.biases.push_back(Eigen::VectorXd::Constant(1, rng.normal() * 0.1));
  return net;
}

// Per-edge clamp windows. For source i, children are visited in a random
// order and get ascending lower and upper bounds, so each child is flat on a
// region where at least one sibling still responds (weak diversity).
void assign_clamps(DomainTransition& tr, Rng& rng) {
  const int n = tr.dim();
  tr.clamp_lo = Eigen::MatrixXd::Zero(n, n);
  tr.clamp_hi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> children;
    for (int j = 0; j < n; ++j) {
      if (tr.mask(i, j) != 0) children.push_back(j);
    }
    for (std::size_t k = children.size(); k > 1; --k) {
      std::swap(children[k - 1], children[rng.below(k)]);
    }
    const double m = static_cast<double>(children.size());
    for (std::size_t k = 0; k < children.size(); ++k) {
      const double frac = m > 1 ? static_cast<double>(k) / (m - 1.0) : 0.5;
      const int j = children[k];
      tr.clamp_lo(i, j) = -2.2 + frac * 1.0 + rng.uniform(-0.05, 0.05);
      tr.clamp_hi(i, j) = 1.2 + frac * 1.0 + rng.uniform(-0.05, 0.05);
    }
  }
}

template <typename T>
void hash_value(std::uint64_t& h, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  h = io::fnv1a(std::span<const std::uint8_t>(p, sizeof(T)), h);
}

void hash_matrix(std::uint64_t& h, const Eigen::MatrixXd& m) {
  hash_value(h, m.rows());
  hash_value(h, m.cols());
  const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
  h = io::fnv1a(std::span<const std::uint8_t>(p, static_cast<std::size_t>(m.size()) * sizeof(double)), h);
}

std::string provenance_digest(const std::string& fingerprint, const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto add = [&h](const auto& vec) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(vec.data());
    h = io::fnv1a(std::span<const std::uint8_t>(p, vec.size() * sizeof(vec[0])), h);
  };
  add(ds.observations);
  add(ds.latents);
  add(ds.domains);
  h = io::fnv1a(fingerprint, h);
  return io::hex64(h);
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::markov_a: return "markov_a";
    case Provenance::markov_b: return "markov_b";
    case Provenance::uniform: return "uniform";
    case Provenance::custom: return "custom";
  }
  return "custom";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "markov_a") return Provenance::markov_a;
  if (s == "markov_b") return Provenance::markov_b;
  if (s == "uniform") return Provenance::uniform;
  if (s == "custom") return Provenance::custom;
  throw InvalidConfig("unknown provenance tag: " + s);
}

void GenConfig::validate() const {
  require(n_domains >= 2, "n_domains", "must be >= 2");
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(obs_dim >= latent_dim, "obs_dim", "must be >= latent_dim");
  require(seq_len >= 2, "seq_len", "must be >= 2");
  require(n_sequences >= 1, "n_sequences", "must be >= 1");
  require(batch_per_domain_seq >= 1, "batch_per_domain_seq", "must be >= 1");
  require(noise_scale > 0.0 && std::isfinite(noise_scale), "noise_scale", "must be positive");
  require(noise_modulation >= 0.0 && noise_modulation <= 5.0, "noise_modulation", "must lie in [0, 5]");
  require(mixing_depth >= 0, "mixing_depth", "must be >= 0");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, "leaky_slope", "must lie in (0, 1)");
  double total = 0.0;
  for (double p : provenance_mix) {
    require(p >= 0.0 && std::isfinite(p), "provenance_mix", "entries must be nonnegative");
    total += p;
  }
  require(total > 0.0, "provenance_mix", "must not be all zero");
  if (!markov_a.empty()) to_matrix(markov_a, n_domains, "markov_a");
  if (!markov_b.empty()) to_matrix(markov_b, n_domains, "markov_b");
  require(transition_hidden >= 1, "transition_hidden", "must be >= 1");
  require(transition_layers >= 0, "transition_layers", "must be >= 0");
  require(mask_density >= 0.0 && mask_density <= 1.0, "mask_density", "must lie in [0, 1]");
  require(condition_bound > 1.0, "condition_bound", "must exceed 1");
  require(mixing_retry_budget >= 1, "mixing_retry_budget", "must be >= 1");
}

DomainTransition DomainTransition::affine(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  const auto n = a.rows();
  if (a.cols() != n || b.size() != n) throw std::invalid_argument("DomainTransition::affine: shape mismatch");
  DomainTransition tr;
  tr.lossy = false;
  tr.mask = (a.array() != 0.0).cast<int>();
  tr.clamp_lo = Eigen::MatrixXd::Constant(n, n, -std::numeric_limits<double>::infinity());
  tr.clamp_hi = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 0; j < n; ++j) {
    OutputNet net;
    net.weights.push_back(a.col(j).transpose());
    net.biases.push_back(Eigen::VectorXd::Constant(1, b(j)));
    tr.outputs.push_back(std::move(net));
  }
  return tr;
}

std::vector<Mask> GroundTruthSystem::support_masks() const {
  std::vector<Mask> out;
  out.reserve(transitions.size());
  for (const auto& t : transitions) out.push_back(t.mask);
  return out;
}

std::string GroundTruthSystem::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  hash_value(h, latent_dim);
  hash_value(h, obs_dim);
  hash_value(h, leaky_slope);
  hash_value(h, noise_scale);
  for (const auto& tr : transitions) {
    hash_matrix(h, tr.mask.cast<double>());
    hash_value(h, tr.lossy);
    if (tr.noise_gain.size() > 0) hash_matrix(h, tr.noise_gain);
    if (tr.lossy) {
      hash_matrix(h, tr.clamp_lo);
      hash_matrix(h, tr.clamp_hi);
    }
    for (const auto& net : tr.outputs) {
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        hash_matrix(h, net.weights[l]);
        hash_matrix(h, net.biases[l]);
      }
    }
  }
  for (const auto& w : mixing) hash_matrix(h, w);
  return io::hex64(h);
}

void Dataset::check_shapes() const {
  const auto steps = static_cast<std::size_t>(n_samples) * static_cast<std::size_t>(seq_len);
  if (observations.size() != steps * static_cast<std::size_t>(obs_dim) ||
      latents.size() != steps * static_cast<std::size_t>(latent_dim) || domains.size() != steps ||
      (!provenance.empty() && provenance.size() != static_cast<std::size_t>(n_samples))) {
    throw FormatError("dataset arrays disagree with recorded shape");
  }
  for (auto d : domains) {
    if (d < 1 || d > gen_config.n_domains) throw FormatError("domain label out of range");
  }
}

Eigen::MatrixXd random_markov_matrix(int n_states, Rng& rng, double concentration) {
  Eigen::MatrixXd p(n_states, n_states);
  for (int r = 0; r < n_states; ++r) {
    for (int c = 0; c < n_states; ++c) p(r, c) = std::exp(concentration * rng.normal());
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::vector<int> sample_markov_chain(const Eigen::MatrixXd& transition, int start, int length, Rng& rng) {
  const int u = static_cast<int>(transition.rows());
  if (start < 1 || start > u) throw std::invalid_argument("sample_markov_chain: start state out of range");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  int s = start - 1;
  for (int t = 0; t < length; ++t) {
    if (t > 0) s = categorical(transition.row(s), rng);
    out.push_back(s + 1);
  }
  return out;
}

std::vector<DomainSequence> sample_domain_sequences(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const int u = cfg.n_domains;
  const Eigen::MatrixXd a = cfg.markov_a.empty() ? random_markov_matrix(u, rng) : to_matrix(cfg.markov_a, u, "markov_a");
  const Eigen::MatrixXd b = cfg.markov_b.empty() ? random_markov_matrix(u, rng) : to_matrix(cfg.markov_b, u, "markov_b");
  const double total = cfg.provenance_mix[0] + cfg.provenance_mix[1] + cfg.provenance_mix[2];
  Eigen::RowVectorXd mix(3);
  for (int k = 0; k < 3; ++k) mix(k) = cfg.provenance_mix[static_cast<std::size_t>(k)] / total;

  // Deterministic allocation of provenance counts (largest remainder), then a
  // random interleaving, so small pools still contain every source.
  std::vector<int> counts(3);
  std::vector<std::pair<double, int>> rema;
  int assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = mix(k) * cfg.n_sequences;
    counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
    assigned += counts[static_cast<std::size_t>(k)];
    rema.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto x, auto y) { return x.first > y.first; });
  for (int k = 0; assigned < cfg.n_sequences; ++k, ++assigned) ++counts[static_cast<std::size_t>(rema[static_cast<std::size_t>(k % 3)].second)];

  std::vector<Provenance> tags;
  for (int k = 0; k < 3; ++k) tags.insert(tags.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(k)]), static_cast<Provenance>(k));
  for (std::size_t k = tags.size(); k > 1; --k) std::swap(tags[k - 1], tags[rng.below(k)]);

  std::vector<DomainSequence> out;
  out.reserve(tags.size());
  for (Provenance p : tags) {
    DomainSequence seq;
    seq.provenance = p;
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(u))) + 1;
    switch (p) {
      case Provenance::markov_a: seq.labels = sample_markov_chain(a, start, cfg.seq_len, rng); break;
      case Provenance::markov_b: seq.labels = sample_markov_chain(b, start, cfg.seq_len, rng); break;
      default:
        seq.labels.resize(static_cast<std::size_t>(cfg.seq_len));
        for (auto& l : seq.labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(u))) + 1;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<Mask> random_masks(const GenConfig& cfg, Rng& rng, VariabilityMode mode) {
  const int n = cfg.latent_dim;
  const int count = mode == VariabilityMode::identical_masks ? 1 : cfg.n_domains;
  auto draw = [&]() {
    Mask m = Mask::Identity(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && rng.uniform() < cfg.mask_density) m(i, j) = 1;
      }
      if (n > 1 && m.row(i).sum() < 2) {
        int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        if (j >= i) ++j;
        m(i, j) = 1;
      }
    }
    return m;
  };
  std::vector<Mask> masks;
  int attempts = 0;
  while (static_cast<int>(masks.size()) < count) {
    Mask m = draw();
    const bool dup = std::any_of(masks.begin(), masks.end(), [&](const Mask& o) { return o == m; });
    if (!dup) {
      masks.push_back(std::move(m));
    } else if (++attempts > 10000) {
      throw GenerationError("could not draw pairwise distinct support masks; increase latent_dim or mask_density");
    }
  }
  if (mode == VariabilityMode::identical_masks) masks.resize(static_cast<std::size_t>(cfg.n_domains), masks.front());
  return masks;
}

GroundTruthSystem build_ground_truth(const GenConfig& cfg, Rng& rng, VariabilityMode mode,
                                     const std::optional<std::vector<Mask>>& masks_in) {
  cfg.validate();
  const int n = cfg.latent_dim;
  std::vector<Mask> masks;
  if (masks_in) {
    masks = *masks_in;
    if (static_cast<int>(masks.size()) != cfg.n_domains) throw InvalidConfig("expected one support mask per domain");
    for (const auto& m : masks) {
      if (m.rows() != n || m.cols() != n) throw InvalidConfig("support mask shape must be latent_dim x latent_dim");
      if (((m.array() != 0) && (m.array() != 1)).any()) throw InvalidConfig("support masks must be binary");
    }
  } else {
    masks = random_masks(cfg, rng, mode);
  }

  GroundTruthSystem sys;
  sys.latent_dim = n;
  sys.obs_dim = cfg.obs_dim;
  sys.leaky_slope = cfg.leaky_slope;
  sys.noise_scale = cfg.noise_scale;
  sys.condition_bound = cfg.condition_bound;
  for (const auto& m : masks) {
    DomainTransition tr;
    tr.mask = m;
    tr.lossy = cfg.lossy;
    for (int j = 0; j < n; ++j) {
      tr.outputs.push_back(random_output_net(m, j, cfg.transition_hidden, cfg.transition_layers, rng));
    }
    assign_clamps(tr, rng);
    if (cfg.noise_modulation > 0.0) {
      tr.noise_gain.resize(n);
      for (int j = 0; j < n; ++j) tr.noise_gain(j) = std::exp(cfg.noise_modulation * (2.0 * rng.uniform() - 1.0));
    }
    sys.transitions.push_back(std::move(tr));
  }

  std::vector<double> last_conds;
  for (int layer = 0; layer < cfg.mixing_depth; ++layer) {
    const int rows = cfg.obs_dim;
    const int cols = layer == 0 ? n : cfg.obs_dim;
    bool ok = false;
    double best = std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < cfg.mixing_retry_budget; ++attempt) {
      Eigen::MatrixXd w = gaussian_matrix(rows, cols, rng);
      const double c = condition_number(w);
      best = std::min(best, c);
      if (c < cfg.condition_bound) {
        sys.mixing.push_back(std::move(w));
        last_conds.push_back(c);
        ok = true;
        break;
      }
    }
    if (!ok) {
      std::ostringstream os;
      os << "mixing layer " << layer << ": no draw with condition number below " << cfg.condition_bound << " in "
         << cfg.mixing_retry_budget << " attempts (best " << best << ")";
      throw GenerationError(os.str());
    }
  }
  return sys;
}

Eigen::MatrixXd generate_latents(const GroundTruthSystem& sys, std::span<const int> labels, Rng& rng) {
  const int n = sys.latent_dim;
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  return generate_latents(sys, labels, z, rng);
}

Eigen::MatrixXd generate_latents(const GroundTruthSystem& sys, std::span<const int> labels, const Eigen::VectorXd& z0,
                                 Rng& rng) {
  const int n = sys.latent_dim;
  if (z0.size() != n) throw std::invalid_argument("generate_latents: z0 has wrong dimension");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(labels.size()), n);
  Eigen::VectorXd z = z0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const int u = labels[t];
    if (u < 1 || u > sys.n_domains()) throw std::invalid_argument("generate_latents: label out of range");
    const DomainTransition& tr = sys.transitions[static_cast<std::size_t>(u - 1)];
    Eigen::VectorXd next = transition_mean(tr, z);
    for (int i = 0; i < n; ++i) next(i) += tr.noise_std(i, sys.noise_scale) * rng.normal();
    if (!next.allFinite()) throw NumericError("latent trajectory diverged", static_cast<std::ptrdiff_t>(t));
    out.row(static_cast<Eigen::Index>(t)) = next.transpose();
    z = std::move(next);
  }
  return out;
}

Eigen::MatrixXd apply_mixing(const GroundTruthSystem& sys, const Eigen::MatrixXd& latents) {
  if (latents.cols() != sys.latent_dim) throw std::invalid_argument("apply_mixing: latent dimension mismatch");
  if (sys.mixing.empty()) {
    if (sys.obs_dim != sys.latent_dim) throw std::invalid_argument("apply_mixing: identity mixing needs obs_dim == latent_dim");
    return latents;
  }
  Eigen::MatrixXd h = latents;
  for (const auto& w : sys.mixing) {
    h = (h * w.transpose()).unaryExpr([&](double v) { return leaky(v, sys.leaky_slope); });
  }
  return h;
}

MixingReport verify_mixing_invertible(const GroundTruthSystem& sys) {
  MixingReport r;
  r.ok = sys.leaky_slope > 0.0;
  for (std::size_t l = 0; l < sys.mixing.size(); ++l) {
    const auto& w = sys.mixing[l];
    double smin = 0.0;
    const double c = condition_number(w, &smin);
    r.condition_numbers.push_back(c);
    r.min_singular_values.push_back(smin);
    // Layers after the first must be square; the first may lift n -> obs_dim.
    const bool shape_ok = l == 0 ? w.rows() >= w.cols() : w.rows() == w.cols();
    if (!shape_ok || !(smin > 0.0) || !(c < sys.condition_bound)) r.ok = false;
  }
  return r;
}

Generated generate_dataset(const GenConfig& cfg, VariabilityMode mode) {
  cfg.validate();
  Rng seq_rng = Rng::stream(cfg.seed, 0);
  Rng sys_rng = Rng::stream(cfg.seed, 1);
  Generated g;
  g.domain_sequences = sample_domain_sequences(cfg, seq_rng);
  g.system = build_ground_truth(cfg, sys_rng, mode);

  Dataset& ds = g.dataset;
  ds.n_samples = cfg.total_samples();
  ds.seq_len = cfg.seq_len;
  ds.obs_dim = cfg.obs_dim;
  ds.latent_dim = cfg.latent_dim;
  ds.gen_config = cfg;
  ds.system_fingerprint = g.system.fingerprint();
  const auto steps = static_cast<std::size_t>(ds.n_samples) * static_cast<std::size_t>(cfg.seq_len);
  ds.observations.resize(steps * static_cast<std::size_t>(cfg.obs_dim));
  ds.latents.resize(steps * static_cast<std::size_t>(cfg.latent_dim));
  ds.domains.resize(steps);
  ds.provenance.resize(static_cast<std::size_t>(ds.n_samples));

  long s = 0;
  for (const auto& seq : g.domain_sequences) {
    for (int b = 0; b < cfg.batch_per_domain_seq; ++b, ++s) {
      Rng rng = Rng::stream(cfg.seed, 2 + static_cast<std::uint64_t>(s));
      Eigen::MatrixXd z;
      try {
        z = generate_latents(g.system, seq.labels, rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in sample " + std::to_string(s), e.step());
      }
      const Eigen::MatrixXd x = apply_mixing(g.system, z);
      for (int t = 0; t < cfg.seq_len; ++t) {
        const auto row = static_cast<std::size_t>(s) * static_cast<std::size_t>(cfg.seq_len) + static_cast<std::size_t>(t);
        for (int d = 0; d < cfg.latent_dim; ++d) ds.latents[row * static_cast<std::size_t>(cfg.latent_dim) + static_cast<std::size_t>(d)] = static_cast<float>(z(t, d));
        for (int d = 0; d < cfg.obs_dim; ++d) ds.observations[row * static_cast<std::size_t>(cfg.obs_dim) + static_cast<std::size_t>(d)] = static_cast<float>(x(t, d));
        ds.domains[row] = seq.labels[static_cast<std::size_t>(t)];
      }
      ds.provenance[static_cast<std::size_t>(s)] = static_cast<std::int32_t>(seq.provenance);
    }
  }
  return g;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.check_shapes();
  io::Container c;
  c.version = kDatasetFormatVersion;
  c.header["kind"] = "dataset";
  c.header["gen_config"] = ds.gen_config;
  c.header["system_fingerprint"] = ds.system_fingerprint;
  c.header["provenance_digest"] = provenance_digest(ds.system_fingerprint, ds);
  c.header["n_samples"] = ds.n_samples;
  c.header["seq_len"] = ds.seq_len;
  c.header["obs_dim"] = ds.obs_dim;
  c.header["latent_dim"] = ds.latent_dim;
  const std::int64_t n = ds.n_samples;
  const std::int64_t t = ds.seq_len;
  c.arrays.push_back(io::Array::from_f32("observations", {n, t, ds.obs_dim}, ds.observations));
  c.arrays.push_back(io::Array::from_f32("latents", {n, t, ds.latent_dim}, ds.latents));
  c.arrays.push_back(io::Array::from_i32("domains", {n, t}, ds.domains));
  if (!ds.provenance.empty()) c.arrays.push_back(io::Array::from_i32("provenance", {n}, ds.provenance));
  io::write_container(path, kDatasetMagic, c);
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, kDatasetMagic, kDatasetFormatVersion);
  LoadedDataset out;
  Dataset& ds = out.dataset;
  try {
    ds.gen_config = c.header.at("gen_config").get<GenConfig>();
    ds.system_fingerprint = c.header.at("system_fingerprint").get<std::string>();
    ds.n_samples = c.header.at("n_samples").get<long>();
    ds.seq_len = c.header.at("seq_len").get<int>();
    ds.obs_dim = c.header.at("obs_dim").get<int>();
    ds.latent_dim = c.header.at("latent_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
  ds.observations = c.array("observations").to_f32();
  ds.latents = c.array("latents").to_f32();
  ds.domains = c.array("domains").to_i32();
  if (c.has_array("provenance")) ds.provenance = c.array("provenance").to_i32();
  ds.check_shapes();
  const std::string recorded = c.header.value("provenance_digest", std::string{});
  if (recorded != provenance_digest(ds.system_fingerprint, ds)) {
    out.warnings.push_back("provenance mismatch: system fingerprint " + ds.system_fingerprint +
                           " does not match the digest recorded at generation time");
  }
  return out;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(i)).size()) != c) throw FormatError("ragged matrix");
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& v = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k));
      // Infinite clamp bounds are stored as null.
      m(i, k) = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  }
  return m;
}

}  // namespace

void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"n_domains", c.n_domains},
                     {"latent_dim", c.latent_dim},
                     {"obs_dim", c.obs_dim},
                     {"seq_len", c.seq_len},
                     {"n_sequences", c.n_sequences},
                     {"batch_per_domain_seq", c.batch_per_domain_seq},
                     {"seed", c.seed},
                     {"noise_scale", c.noise_scale},
                     {"noise_modulation", c.noise_modulation},
                     {"mixing_depth", c.mixing_depth},
                     {"leaky_slope", c.leaky_slope},
                     {"provenance_mix", c.provenance_mix},
                     {"markov_a", c.markov_a},
                     {"markov_b", c.markov_b},
                     {"transition_hidden", c.transition_hidden},
                     {"transition_layers", c.transition_layers},
                     {"mask_density", c.mask_density},
                     {"lossy", c.lossy},
                     {"condition_bound", c.condition_bound},
                     {"mixing_retry_budget", c.mixing_retry_budget}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  if (!j.is_object()) throw InvalidConfig("GenConfig: expected a JSON object");
  static const std::set<std::string> known{"n_domains",      "latent_dim",        "obs_dim",          "seq_len",
                                           "n_sequences",    "batch_per_domain_seq", "seed",           "noise_scale",      "noise_modulation",
                                           "mixing_depth",   "leaky_slope",       "provenance_mix",   "markov_a",
                                           "markov_b",       "transition_hidden", "transition_layers", "mask_density",
                                           "lossy",          "condition_bound",   "mixing_retry_budget"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("GenConfig: unknown key '" + key + "'");
  }
  auto get = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidConfig(std::string("GenConfig.") + key + ": wrong type");
    }
  };
  get("n_domains", c.n_domains);
  get("latent_dim", c.latent_dim);
  get("obs_dim", c.obs_dim);
  get("seq_len", c.seq_len);
  get("n_sequences", c.n_sequences);
  get("batch_per_domain_seq", c.batch_per_domain_seq);
  get("seed", c.seed);
  get("noise_scale", c.noise_scale);
  get("noise_modulation", c.noise_modulation);
  get("mixing_depth", c.mixing_depth);
  get("leaky_slope", c.leaky_slope);
  get("provenance_mix", c.provenance_mix);
  get("markov_a", c.markov_a);
  get("markov_b", c.markov_b);
  get("transition_hidden", c.transition_hidden);
  get("transition_layers", c.transition_layers);
  get("mask_density", c.mask_density);
  get("lossy", c.lossy);
  get("condition_bound", c.condition_bound);
  get("mixing_retry_budget", c.mixing_retry_budget);
  c.validate();
}

nlohmann::json system_to_json(const GroundTruthSystem& sys) {
  nlohmann::json j;
  j["latent_dim"] = sys.latent_dim;
  j["obs_dim"] = sys.obs_dim;
  j["leaky_slope"] = sys.leaky_slope;
  j["noise_scale"] = sys.noise_scale;
  j["condition_bound"] = sys.condition_bound;
  j["fingerprint"] = sys.fingerprint();
  nlohmann::json trs = nlohmann::json::array();
  for (const auto& tr : sys.transitions) {
    nlohmann::json t;
    t["mask"] = matrix_json(tr.mask.cast<double>());
    t["lossy"] = tr.lossy;
    if (tr.noise_gain.size() > 0) t["noise_gain"] = std::vector<double>(tr.noise_gain.begin(), tr.noise_gain.end());
    if (tr.lossy) {
      t["clamp_lo"] = matrix_json(tr.clamp_lo);
      t["clamp_hi"] = matrix_json(tr.clamp_hi);
    }
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& net : tr.outputs) {
      nlohmann::json layers = nlohmann::json::array();
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        layers.push_back({{"weight", matrix_json(net.weights[l])}, {"bias", matrix_json(net.biases[l])}});
      }
      outs.push_back(std::move(layers));
    }
    t["outputs"] = std::move(outs);
    trs.push_back(std::move(t));
  }
  j["transitions"] = std::move(trs);
  nlohmann::json mix = nlohmann::json::array();
  for (const auto& w : sys.mixing) mix.push_back(matrix_json(w));
  j["mixing"] = std::move(mix);
  return j;
}

GroundTruthSystem system_from_json(const nlohmann::json& j) {
  try {
    GroundTruthSystem sys;
    sys.latent_dim = j.at("latent_dim").get<int>();
    sys.obs_dim = j.at("obs_dim").get<int>();
    sys.leaky_slope = j.at("leaky_slope").get<double>();
    sys.noise_scale = j.at("noise_scale").get<double>();
    sys.condition_bound = j.at("condition_bound").get<double>();
    const auto n = static_cast<Eigen::Index>(sys.latent_dim);
    for (const auto& t : j.at("transitions")) {
      DomainTransition tr;
      tr.mask = json_matrix(t.at("mask")).cast<int>();
      tr.lossy = t.at("lossy").get<bool>();
      if (t.contains("noise_gain")) {
        const auto g = t.at("noise_gain").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(g.size()) != n) throw FormatError("system JSON: noise_gain length mismatch");
        tr.noise_gain = Eigen::Map<const Eigen::VectorXd>(g.data(), n);
      }
      if (tr.lossy) {
        tr.clamp_lo = json_matrix(t.at("clamp_lo"));
        tr.clamp_hi = json_matrix(t.at("clamp_hi"));
      } else {
        tr.clamp_lo = Eigen::MatrixXd::Constant(n, n, -std::numeric_limits<double>::infinity());
        tr.clamp_hi = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
      }
      for (const auto& layers : t.at("outputs")) {
        OutputNet net;
        for (const auto& layer : layers) {
          net.weights.push_back(json_matrix(layer.at("weight")));
          net.biases.push_back(json_matrix(layer.at("bias")).col(0));
        }
        tr.outputs.push_back(std::move(net));
      }
      if (tr.mask.rows() != n || tr.mask.cols() != n || static_cast<Eigen::Index>(tr.outputs.size()) != n) {
        throw FormatError("system JSON: transition shape mismatch");
      }
      sys.transitions.push_back(std::move(tr));
    }
    for (const auto& w : j.at("mixing")) sys.mixing.push_back(json_matrix(w));
    if (j.contains("fingerprint") && j.at("fingerprint").get<std::string>() != sys.fingerprint()) {
      throw FormatError("system JSON: fingerprint does not match parameters");
    }
    return sys;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("system JSON: ") + e.what());
  }
}

}  // namespace ctrlns::datagen
