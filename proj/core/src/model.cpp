#include "ctrlns/model.hpp"

#include "ctrlns/container.hpp"
#include "ctrlns/error.hpp"
#include "ctrlns/theory.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace ctrlns::model {

namespace {

constexpr std::string_view kCheckpointMagic = "CTRLNSCK";
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw InvalidConfig("ModelConfig." + field + ": " + why);
}

void permute_rows(Matrix& m, const std::vector<int>& perm) {
  const Matrix old = m;
  for (std::size_t k = 0; k < perm.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = old.row(perm[k]);
}

}  // namespace

std::string to_string(GateInput g) {
  switch (g) {
    case GateInput::raw:
      return "raw";
    case GateInput::encoded:
      return "encoded";
    case GateInput::residual:
      return "residual";
  }
  return "raw";
}

GateInput parse_gate_input(const std::string& s) {
  if (s == "raw") return GateInput::raw;
  if (s == "encoded") return GateInput::encoded;
  if (s == "residual") return GateInput::residual;
  throw InvalidConfig("ModelConfig.gate_input: expected 'raw', 'encoded' or 'residual'");
}

void ModelConfig::validate() const {
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(obs_dim >= 1, "obs_dim", "must be >= 1");
  require(n_domains_est >= 2, "n_domains_est", "must be >= 2");
  require(gumbel_temperature > 0.0, "gumbel_temperature", "must be positive");
  require(sparsity_coeff >= 0.0, "sparsity_coeff", "must be nonnegative");
  require(log_floor > 0.0, "log_floor", "must be positive");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, "leaky_slope", "must lie in (0, 1)");
  for (const auto* widths : {&encoder_hidden, &decoder_hidden, &transition_hidden, &prior_hidden, &gate_hidden}) {
    for (int w : *widths) require(w >= 1, "hidden widths", "must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"obs_dim", c.obs_dim},
                     {"n_domains_est", c.n_domains_est},
                     {"encoder_hidden", c.encoder_hidden},
                     {"decoder_hidden", c.decoder_hidden},
                     {"transition_hidden", c.transition_hidden},
                     {"prior_hidden", c.prior_hidden},
                     {"gate_hidden", c.gate_hidden},
                     {"gumbel_temperature", c.gumbel_temperature},
                     {"gumbel_hard", c.gumbel_hard},
                     {"sparsity_coeff", c.sparsity_coeff},
                     {"gate_input", to_string(c.gate_input)},
                     {"log_floor", c.log_floor},
                     {"leaky_slope", c.leaky_slope},
                     {"learn_initial_prior", c.learn_initial_prior},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw InvalidConfig("ModelConfig: expected a JSON object");
  static const std::set<std::string> known{"latent_dim",        "obs_dim",      "n_domains_est", "encoder_hidden",
                                           "decoder_hidden",    "transition_hidden", "prior_hidden", "gate_hidden",
                                           "gumbel_temperature", "gumbel_hard", "sparsity_coeff", "gate_input",
                                           "log_floor",         "leaky_slope",  "learn_initial_prior", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("ModelConfig: unknown key '" + key + "'");
  }
  auto get = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidConfig(std::string("ModelConfig.") + key + ": wrong type");
    }
  };
  get("latent_dim", c.latent_dim);
  get("obs_dim", c.obs_dim);
  get("n_domains_est", c.n_domains_est);
  get("encoder_hidden", c.encoder_hidden);
  get("decoder_hidden", c.decoder_hidden);
  get("transition_hidden", c.transition_hidden);
  get("prior_hidden", c.prior_hidden);
  get("gate_hidden", c.gate_hidden);
  get("gumbel_temperature", c.gumbel_temperature);
  get("gumbel_hard", c.gumbel_hard);
  get("sparsity_coeff", c.sparsity_coeff);
  if (j.contains("gate_input")) {
    if (!j.at("gate_input").is_string()) throw InvalidConfig("ModelConfig.gate_input: wrong type");
    c.gate_input = parse_gate_input(j.at("gate_input").get<std::string>());
  }
  get("log_floor", c.log_floor);
  get("leaky_slope", c.leaky_slope);
  get("learn_initial_prior", c.learn_initial_prior);
  get("seed", c.seed);
  c.validate();
}

CtrlnsModel::CtrlnsModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int n = cfg_.latent_dim;
  const int u = cfg_.n_domains_est;
  // Each component gets its own stream so changing one width leaves the
  // initialization of the others untouched.
  Rng enc_rng = Rng::stream(cfg_.seed, 100);
  Rng dec_rng = Rng::stream(cfg_.seed, 101);
  Rng gate_rng = Rng::stream(cfg_.seed, 102);
  encoder_ = nn::Mlp(store_, "encoder", cfg_.obs_dim, cfg_.encoder_hidden, 2 * n, enc_rng, cfg_.leaky_slope);
  decoder_ = nn::Mlp(store_, "decoder", n, cfg_.decoder_hidden, cfg_.obs_dim, dec_rng, cfg_.leaky_slope);
  if (cfg_.gate_input != GateInput::residual) {
    const int gate_in = cfg_.gate_input == GateInput::raw ? 2 * cfg_.obs_dim : 2 * n;
    gate_ = nn::Mlp(store_, "gate", gate_in, cfg_.gate_hidden, u, gate_rng, cfg_.leaky_slope);
  }
  for (int k = 0; k < u; ++k) {
    Rng r = Rng::stream(cfg_.seed, 200 + static_cast<std::uint64_t>(k));
    bank_.emplace_back(store_, "bank." + std::to_string(k), n, cfg_.transition_hidden, n, r, cfg_.leaky_slope);
  }
  for (int i = 0; i < n; ++i) {
    Rng r = Rng::stream(cfg_.seed, 300 + static_cast<std::uint64_t>(i));
    inverse_.emplace_back(store_, "inverse." + std::to_string(i), n + 1 + u, cfg_.prior_hidden, 1, r,
                          cfg_.leaky_slope);
  }
  if (cfg_.learn_initial_prior) {
    init_mean_ = store_.add("initial.mean", Matrix::Zero(1, n));
    init_log_std_ = store_.add("initial.log_std", Matrix::Zero(1, n));
  } else {
    init_mean_ = Var::constant(Matrix::Zero(1, n));
    init_log_std_ = Var::constant(Matrix::Zero(1, n));
  }
}

PosteriorSample CtrlnsModel::encode(const Var& x, const Matrix& noise) const {
  const Eigen::Index n = cfg_.latent_dim;
  if (x.cols() != cfg_.obs_dim) throw std::invalid_argument("encode: observation width mismatch");
  if (noise.rows() != x.rows() || noise.cols() != n) throw std::invalid_argument("encode: noise shape mismatch");
  const Var out = encoder_.forward(x);
  if (!out.value().allFinite()) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      if (!out.value().row(r).allFinite()) throw NumericError("encoder produced non-finite output", r);
    }
  }
  PosteriorSample ps;
  ps.mean = ad::cols(out, 0, n);
  ps.log_var = ad::cols(out, n, n);
  ps.sample = ps.mean + ad::hadamard(ad::exp(ps.log_var * 0.5), Var::constant(noise));
  ps.log_q = gaussian_log_density(ps.sample, ps.mean, ps.log_var);
  return ps;
}

PosteriorSample CtrlnsModel::encode(const Var& x, Rng& rng) const {
  Matrix noise(x.rows(), cfg_.latent_dim);
  for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = rng.normal();
  return encode(x, noise);
}

Var CtrlnsModel::decode(const Var& z) const {
  if (z.cols() != cfg_.latent_dim) throw std::invalid_argument("decode: latent width mismatch");
  return decoder_.forward(z);
}

Var CtrlnsModel::gate_logits(const Var& x_prev, const Var& x_curr, double residual_temperature) const {
  if (cfg_.gate_input == GateInput::raw) return gate_.forward(ad::hconcat({x_prev, x_curr}));
  const Eigen::Index n = cfg_.latent_dim;
  const Var a = ad::cols(encoder_.forward(x_prev), 0, n);
  const Var b = ad::cols(encoder_.forward(x_curr), 0, n);
  if (cfg_.gate_input == GateInput::encoded) return gate_.forward(ad::hconcat({a, b}));
  if (!(residual_temperature > 0.0)) throw std::invalid_argument("gate_logits: residual temperature must be positive");
  const Matrix prev = a.value();
  const Matrix curr = b.value();
  Matrix logits(prev.rows(), cfg_.n_domains_est);
  for (int k = 0; k < cfg_.n_domains_est; ++k) {
    const Matrix pred = bank_[static_cast<std::size_t>(k)].forward(Var::constant(prev)).value();
    logits.col(k) = (curr - pred).rowwise().squaredNorm() * (-0.5 / residual_temperature);
  }
  return Var::constant(logits);
}

GateSample CtrlnsModel::gumbel_gate(const Var& logits, double temperature, bool hard, const Matrix& gumbel_noise) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_gate: temperature must be positive");
  GateSample g;
  g.logits = logits;
  g.soft = ad::softmax_rows((logits + Var::constant(gumbel_noise)) * (1.0 / temperature));
  if (!hard) {
    g.u = g.soft;
    return g;
  }
  Matrix one_hot = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < one_hot.rows(); ++r) {
    Eigen::Index k = 0;
    g.soft.value().row(r).maxCoeff(&k);
    one_hot(r, k) = 1.0;
  }
  g.u = ad::straight_through(one_hot, g.soft);
  return g;
}

GateSample CtrlnsModel::gate(const Var& x_prev, const Var& x_curr, double temperature, bool hard, Rng& rng,
                             double residual_temperature) const {
  const Var logits = gate_logits(x_prev, x_curr, residual_temperature);
  Matrix g(logits.rows(), logits.cols());
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.gumbel();
  return gumbel_gate(logits, temperature, hard, g);
}

Var CtrlnsModel::bank_member(int k, const Var& z_prev) const { return bank_.at(static_cast<std::size_t>(k)).forward(z_prev); }

Var CtrlnsModel::transition_predict(const Var& u, const Var& z_prev) const {
  if (u.cols() != cfg_.n_domains_est || u.rows() != z_prev.rows()) {
    throw std::invalid_argument("transition_predict: gate/latent shape mismatch");
  }
  Var out;
  for (int k = 0; k < cfg_.n_domains_est; ++k) {
    const Var term = ad::mul_col(bank_member(k, z_prev), ad::cols(u, k, 1));
    out = k == 0 ? term : out + term;
  }
  return out;
}

std::pair<Var, Var> CtrlnsModel::inverse_dynamics(const Var& z_curr, const Var& z_prev, const Var& u) const {
  const Eigen::Index n = cfg_.latent_dim;
  std::vector<Var> eps;
  std::vector<Var> deriv;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Var in = ad::hconcat({z_prev, ad::cols(z_curr, i, 1), u});
    auto [e, d] = inverse_[static_cast<std::size_t>(i)].forward_with_tangent(in, n);
    eps.push_back(e);
    deriv.push_back(d);
  }
  return {ad::hconcat(eps), ad::hconcat(deriv)};
}

Var CtrlnsModel::prior_log_density(const Var& z_curr, const Var& z_prev, const Var& u) const {
  auto [eps, deriv] = inverse_dynamics(z_curr, z_prev, u);
  const Var log_noise = ad::row_sum(ad::square(eps) * -0.5) + (-kHalfLog2Pi * static_cast<double>(cfg_.latent_dim));
  return log_noise + ad::row_sum(ad::log_abs_floor(deriv, cfg_.log_floor));
}

Var CtrlnsModel::initial_log_density(const Var& z) const {
  const Eigen::Index r = z.rows();
  return gaussian_log_density(z, ad::repeat_rows(init_mean_, r), ad::repeat_rows(init_log_std_ * 2.0, r));
}

Var CtrlnsModel::bank_sparsity() const {
  Var total;
  for (std::size_t k = 0; k < bank_.size(); ++k) {
    const Var s = ad::sum(ad::square(bank_[k].layers().front().weight));
    total = k == 0 ? s : total + s;
  }
  return total;
}

void CtrlnsModel::permute_domains(const std::vector<int>& perm) {
  const int u = cfg_.n_domains_est;
  if (static_cast<int>(perm.size()) != u) throw std::invalid_argument("permute_domains: wrong length");
  std::vector<int> seen(static_cast<std::size_t>(u), 0);
  for (int p : perm) {
    if (p < 0 || p >= u || seen[static_cast<std::size_t>(p)]++) throw std::invalid_argument("permute_domains: not a permutation");
  }
  std::vector<std::vector<std::pair<Matrix, Matrix>>> old;
  for (const auto& m : bank_) {
    std::vector<std::pair<Matrix, Matrix>> layers;
    for (const auto& l : m.layers()) layers.emplace_back(l.weight.value(), l.bias.value());
    old.push_back(std::move(layers));
  }
  for (int k = 0; k < u; ++k) {
    auto& layers = bank_[static_cast<std::size_t>(k)].layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].weight.mutable_value() = old[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])][l].first;
      layers[l].bias.mutable_value() = old[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])][l].second;
    }
  }
  if (!gate_.layers().empty()) {
    auto& out = gate_.layers().back();
    permute_rows(out.weight.mutable_value(), perm);
    Matrix bias_t = out.bias.value().transpose();
    permute_rows(bias_t, perm);
    out.bias.mutable_value() = bias_t.transpose();
  }
  const Eigen::Index base = cfg_.latent_dim + 1;
  for (auto& net : inverse_) {
    Matrix& w = net.layers().front().weight.mutable_value();
    const Matrix old_w = w;
    for (int k = 0; k < u; ++k) w.col(base + k) = old_w.col(base + perm[static_cast<std::size_t>(k)]);
  }
}

Var previous_steps(const Var& seq, Eigen::Index batch) { return ad::rows(seq, 0, seq.rows() - batch); }
Var current_steps(const Var& seq, Eigen::Index batch) { return ad::rows(seq, batch, seq.rows() - batch); }

Var gaussian_log_density(const Var& x, const Var& mean, const Var& log_var) {
  const Var diff = x - mean;
  const Var quad = ad::hadamard(ad::square(diff), ad::exp(-log_var));
  return ad::row_sum((log_var + quad) * -0.5) + (-kHalfLog2Pi * static_cast<double>(x.cols()));
}

std::vector<int> merge_equivalent_members(const CtrlnsModel& m, const std::vector<Eigen::VectorXd>& eval_points,
                                          double threshold) {
  std::vector<Eigen::MatrixXi> supports;
  for (const auto& net : m.bank()) {
    const theory::JetMap f = [&net](const std::vector<Jet>& z) { return net.eval<Jet>(std::span<const Jet>(z)); };
    supports.push_back(theory::jacobian_support(f, eval_points, threshold).entries);
  }
  std::vector<int> label(supports.size());
  int next = 0;
  for (std::size_t k = 0; k < supports.size(); ++k) {
    label[k] = -1;
    for (std::size_t j = 0; j < k; ++j) {
      if (supports[j] == supports[k]) {
        label[k] = label[j];
        break;
      }
    }
    if (label[k] < 0) label[k] = next++;
  }
  return label;
}

void save_checkpoint(const std::filesystem::path& path, const CtrlnsModel& m, const nn::AdamW* opt,
                     const nlohmann::json& meta) {
  io::Container c;
  c.version = kCheckpointFormatVersion;
  c.header["kind"] = "checkpoint";
  c.header["model_config"] = m.config();
  c.header["dtype"] = "f64";
  c.header["meta"] = meta;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, v] : m.params().entries()) {
    names.push_back(name);
    const Matrix& val = v.value();
    c.arrays.push_back(io::Array::from_f64("param." + name, {val.rows(), val.cols()},
                                           std::span<const double>(val.data(), static_cast<std::size_t>(val.size()))));
  }
  c.header["params"] = names;
  if (opt) {
    c.header["optimizer_step"] = opt->steps();
    std::size_t k = 0;
    for (const auto& [name, _] : m.params().entries()) {
      const Matrix& mm = opt->first_moments()[k];
      const Matrix& vv = opt->second_moments()[k];
      c.arrays.push_back(io::Array::from_f64("adam_m." + name, {mm.rows(), mm.cols()},
                                             std::span<const double>(mm.data(), static_cast<std::size_t>(mm.size()))));
      c.arrays.push_back(io::Array::from_f64("adam_v." + name, {vv.rows(), vv.cols()},
                                             std::span<const double>(vv.data(), static_cast<std::size_t>(vv.size()))));
      ++k;
    }
  }
  io::write_container(path, kCheckpointMagic, c);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, kCheckpointMagic, kCheckpointFormatVersion);
  Checkpoint ck;
  auto to_matrix = [](const io::Array& a) {
    if (a.shape.size() != 2) throw FormatError("checkpoint array " + a.name + " is not 2-D");
    const std::vector<double> v = a.to_f64();
    return Matrix(Eigen::Map<const Matrix>(v.data(), a.shape[0], a.shape[1]));
  };
  try {
    ck.config = c.header.at("model_config").get<ModelConfig>();
    ck.meta = c.header.value("meta", nlohmann::json::object());
    const auto names = c.header.at("params").get<std::vector<std::string>>();
    for (const auto& name : names) ck.params.emplace_back(name, to_matrix(c.array("param." + name)));
    if (c.header.contains("optimizer_step")) {
      OptimizerState st;
      st.step = c.header.at("optimizer_step").get<long>();
      for (const auto& name : names) {
        st.first_moments.push_back(to_matrix(c.array("adam_m." + name)));
        st.second_moments.push_back(to_matrix(c.array("adam_v." + name)));
      }
      ck.optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  return ck;
}

void load_params(CtrlnsModel& m, const Checkpoint& ck) {
  const auto& entries = m.params().entries();
  if (entries.size() != ck.params.size()) throw FormatError("checkpoint parameter count does not match the model");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, v] = entries[k];
    const auto& [ck_name, value] = ck.params[k];
    if (name != ck_name || v.rows() != value.rows() || v.cols() != value.cols()) {
      throw FormatError("checkpoint parameter " + ck_name + " does not match model parameter " + name);
    }
    v.mutable_value() = value;
  }
}

}  // namespace ctrlns::model
