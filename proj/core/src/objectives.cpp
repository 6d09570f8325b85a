#include "ctrlns/objectives.hpp"

#include "ctrlns/error.hpp"

#include <cmath>
#include <numeric>
#include <set>

namespace ctrlns::objectives {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw InvalidConfig("TrainConfig." + field + ": " + why);
}

}  // namespace

namespace {

double anneal(double from, double to, double fraction, long step, long total_steps) {
  const double horizon = fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return to;
  const double frac = std::min(1.0, static_cast<double>(step) / horizon);
  return from * std::pow(to / from, frac);
}

}  // namespace

double GumbelSchedule::temperature(long step, long total_steps) const {
  return anneal(start, end, anneal_fraction, step, total_steps);
}

double GumbelSchedule::residual_temperature(long step, long total_steps) const {
  return anneal(residual_start, residual_end, anneal_fraction, step, total_steps);
}

bool GumbelSchedule::hard(int epoch, long step, long total_steps) const {
  if (hard_epoch >= 0) return epoch >= hard_epoch;
  return static_cast<double>(step) >= anneal_fraction * static_cast<double>(total_steps);
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate", "must be positive");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(epochs >= 0, "epochs", "must be >= 0");
  require(sparsity_coeff >= 0.0, "sparsity_coeff", "must be nonnegative");
  require(weight_decay >= 0.0, "weight_decay", "must be nonnegative");
  require(gumbel.start > 0.0 && gumbel.end > 0.0, "gumbel", "temperatures must be positive");
  require(gumbel.residual_start > 0.0 && gumbel.residual_end > 0.0, "gumbel", "residual temperatures must be positive");
  require(gumbel.anneal_fraction >= 0.0 && gumbel.anneal_fraction <= 1.0, "gumbel.anneal_fraction", "must lie in [0, 1]");
  require(weights.recon >= 0.0 && weights.kld >= 0.0 && weights.transition >= 0.0, "weights", "must be nonnegative");
  require(kl_samples >= 1, "kl_samples", "must be >= 1");
  require(eval_every >= 0, "eval_every", "must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"sparsity_coeff", c.sparsity_coeff},
                     {"weight_decay", c.weight_decay},
                     {"gumbel",
                      {{"start", c.gumbel.start},
                       {"end", c.gumbel.end},
                       {"anneal_fraction", c.gumbel.anneal_fraction},
                       {"hard_epoch", c.gumbel.hard_epoch},
                       {"residual_start", c.gumbel.residual_start},
                       {"residual_end", c.gumbel.residual_end}}},
                     {"weights", {{"recon", c.weights.recon}, {"kld", c.weights.kld}, {"transition", c.weights.transition}}},
                     {"seed", c.seed},
                     {"kl_samples", c.kl_samples},
                     {"stop_gradient_sparse", c.stop_gradient_sparse},
                     {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw InvalidConfig("TrainConfig: expected a JSON object");
  static const std::set<std::string> known{"learning_rate", "batch_size", "epochs",     "sparsity_coeff",
                                           "weight_decay",  "gumbel",     "weights",    "seed",
                                           "kl_samples",    "stop_gradient_sparse", "eval_every"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("TrainConfig: unknown key '" + key + "'");
  }
  auto get = [](const nlohmann::json& o, const char* key, auto& field, const std::string& where) {
    if (!o.contains(key)) return;
    try {
      o.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidConfig(where + key + ": wrong type");
    }
  };
  const std::string p = "TrainConfig.";
  get(j, "learning_rate", c.learning_rate, p);
  get(j, "batch_size", c.batch_size, p);
  get(j, "epochs", c.epochs, p);
  get(j, "sparsity_coeff", c.sparsity_coeff, p);
  get(j, "weight_decay", c.weight_decay, p);
  get(j, "seed", c.seed, p);
  get(j, "kl_samples", c.kl_samples, p);
  get(j, "stop_gradient_sparse", c.stop_gradient_sparse, p);
  get(j, "eval_every", c.eval_every, p);
  if (j.contains("gumbel")) {
    const auto& g = j.at("gumbel");
    for (const auto& [key, _] : g.items()) {
      static const std::set<std::string> gumbel_keys{"start",      "end",           "anneal_fraction",
                                                     "hard_epoch", "residual_start", "residual_end"};
      if (!gumbel_keys.count(key)) {
        throw InvalidConfig("TrainConfig.gumbel: unknown key '" + key + "'");
      }
    }
    get(g, "start", c.gumbel.start, p + "gumbel.");
    get(g, "end", c.gumbel.end, p + "gumbel.");
    get(g, "anneal_fraction", c.gumbel.anneal_fraction, p + "gumbel.");
    get(g, "hard_epoch", c.gumbel.hard_epoch, p + "gumbel.");
    get(g, "residual_start", c.gumbel.residual_start, p + "gumbel.");
    get(g, "residual_end", c.gumbel.residual_end, p + "gumbel.");
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    for (const auto& [key, _] : w.items()) {
      if (key != "recon" && key != "kld" && key != "transition") {
        throw InvalidConfig("TrainConfig.weights: unknown key '" + key + "'");
      }
    }
    get(w, "recon", c.weights.recon, p + "weights.");
    get(w, "kld", c.weights.kld, p + "weights.");
    get(w, "transition", c.weights.transition, p + "weights.");
  }
  c.validate();
}

double LossBreakdown::weighted_sum() const {
  return weights.recon * recon + weights.kld * kld + weights.transition * transition + sparsity_coeff * sparsity;
}

Batch make_batch(const datagen::Dataset& ds, std::span<const long> samples) {
  Batch b;
  b.batch = static_cast<int>(samples.size());
  b.seq_len = ds.seq_len;
  const Eigen::Index rows = static_cast<Eigen::Index>(b.batch) * ds.seq_len;
  b.x.resize(rows, ds.obs_dim);
  b.z_true.resize(rows, ds.latent_dim);
  b.u_true.resize(static_cast<std::size_t>(rows));
  for (int t = 0; t < ds.seq_len; ++t) {
    for (int k = 0; k < b.batch; ++k) {
      const long s = samples[static_cast<std::size_t>(k)];
      const Eigen::Index r = static_cast<Eigen::Index>(t) * b.batch + k;
      for (int d = 0; d < ds.obs_dim; ++d) b.x(r, d) = ds.obs(s, t, d);
      for (int d = 0; d < ds.latent_dim; ++d) b.z_true(r, d) = ds.latent(s, t, d);
      b.u_true[static_cast<std::size_t>(r)] = ds.domain(s, t);
    }
  }
  return b;
}

LossNoise draw_noise(const model::CtrlnsModel& m, const Batch& b, int kl_samples, Rng& rng) {
  LossNoise noise;
  const Eigen::Index rows = b.x.rows();
  for (int s = 0; s < kl_samples; ++s) {
    Matrix e(rows, m.config().latent_dim);
    for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = rng.normal();
    noise.posterior.push_back(std::move(e));
  }
  noise.gumbel.resize(rows - b.batch, m.config().n_domains_est);
  for (Eigen::Index k = 0; k < noise.gumbel.size(); ++k) noise.gumbel.data()[k] = rng.gumbel();
  return noise;
}

Var loss_recon(const Var& x, const Var& x_hat) { return ad::mean(ad::square(x_hat - x)); }

Var loss_kld(const Var& log_q, const Var& log_p) { return ad::mean(log_q - log_p); }

Var loss_transition(const model::CtrlnsModel& m, const Var& u, const Var& z_prev, const Var& z_curr) {
  return ad::mean(ad::square(m.transition_predict(u, z_prev) - z_curr));
}

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.recon = recon.scalar();
  b.kld = kld.scalar();
  b.transition = transition.scalar();
  b.sparsity = sparsity.scalar();
  b.total = total.scalar();
  b.weights = weights;
  b.sparsity_coeff = sparsity_coeff;
  return b;
}

LossTerms compute_losses(const model::CtrlnsModel& m, const Batch& b, const LossNoise& noise, const LossOptions& opt) {
  if (b.seq_len < 2) throw std::invalid_argument("compute_losses: sequences need at least two steps");
  const Eigen::Index bs = b.batch;
  const Var x = Var::constant(b.x);
  const Var x_prev = model::previous_steps(x, bs);
  const Var x_curr = model::current_steps(x, bs);
  const Var logits = m.gate_logits(x_prev, x_curr, opt.residual_temperature);
  const model::GateSample g = model::CtrlnsModel::gumbel_gate(logits, opt.temperature, opt.hard, noise.gumbel);

  LossTerms t;
  t.gate_u = g.u;
  t.weights = opt.weights;
  t.sparsity_coeff = opt.sparsity_coeff;
  const double inv_k = 1.0 / static_cast<double>(noise.posterior.size());
  Var first_sample;
  for (std::size_t s = 0; s < noise.posterior.size(); ++s) {
    const model::PosteriorSample ps = m.encode(x, noise.posterior[s]);
    if (s == 0) first_sample = ps.sample;
    const Var recon = loss_recon(x, m.decode(ps.sample));
    const Var z_prev = model::previous_steps(ps.sample, bs);
    const Var z_curr = model::current_steps(ps.sample, bs);
    const Var log_p_first = m.initial_log_density(ad::rows(ps.sample, 0, bs));
    const Var log_p_rest = m.prior_log_density(z_curr, z_prev, g.u);
    // Rows 0..B-1 are the first step; kld averages over all T * B rows.
    const Var kld = (ad::sum(ad::rows(ps.log_q, 0, bs) - log_p_first) +
                     ad::sum(ad::rows(ps.log_q, bs, ps.log_q.rows() - bs) - log_p_rest)) *
                    (1.0 / static_cast<double>(ps.log_q.rows()));
    t.recon = s == 0 ? recon * inv_k : t.recon + recon * inv_k;
    t.kld = s == 0 ? kld * inv_k : t.kld + kld * inv_k;
  }
  Var z = opt.stop_gradient_sparse ? ad::stop_gradient(first_sample) : first_sample;
  t.transition = loss_transition(m, g.u, model::previous_steps(z, bs), model::current_steps(z, bs));
  t.sparsity = m.bank_sparsity();
  t.total = t.recon * opt.weights.recon + t.kld * opt.weights.kld + t.transition * opt.weights.transition +
            t.sparsity * opt.sparsity_coeff;
  return t;
}

double elbo(const LossTerms& t) { return -(t.recon.scalar() + t.kld.scalar()); }

Evaluation evaluate(const model::CtrlnsModel& m, const datagen::Dataset& ds, std::span<const long> samples,
                    metrics::CorrMode mode) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const int u_true = ds.gen_config.n_domains;
  const int u_est = m.config().n_domains_est;
  const int labels = std::max(u_true, u_est);
  Matrix z_hat_all;
  Matrix z_all;
  std::vector<int> u_hat_all;
  std::vector<int> u_all;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto count = std::min(kChunk, samples.size() - start);
    const Batch b = make_batch(ds, samples.subspan(start, count));
    const Var x = Var::constant(b.x);
    const Matrix zero = Matrix::Zero(b.x.rows(), m.config().latent_dim);
    const Matrix z_hat = m.encode(x, zero).mean.value();
    const Matrix logits = m.gate_logits(model::previous_steps(x, b.batch), model::current_steps(x, b.batch)).value();
    const Eigen::Index old = z_hat_all.rows();
    z_hat_all.conservativeResize(old + z_hat.rows(), z_hat.cols());
    z_hat_all.bottomRows(z_hat.rows()) = z_hat;
    z_all.conservativeResize(old + b.z_true.rows(), b.z_true.cols());
    z_all.bottomRows(b.z_true.rows()) = b.z_true;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index k = 0;
      logits.row(r).maxCoeff(&k);
      u_hat_all.push_back(static_cast<int>(k) + 1);
      u_all.push_back(b.u_true[static_cast<std::size_t>(r + b.batch)]);
    }
  }
  Evaluation ev;
  ev.mcc = metrics::mcc(z_hat_all, z_all, mode);
  ev.mcc_other = metrics::mcc(z_hat_all, z_all,
                              mode == metrics::CorrMode::spearman ? metrics::CorrMode::pearson : metrics::CorrMode::spearman);
  ev.acc = metrics::domain_accuracy(u_hat_all, u_all, labels);
  return ev;
}

TrainResult train(model::CtrlnsModel& m, const datagen::Dataset& ds, std::span<const long> train_samples,
                  std::span<const long> eval_samples, const TrainConfig& cfg, const TrainCallbacks& cb,
                  const std::optional<TrainState>& resume) {
  cfg.validate();
  if (train_samples.empty() && cfg.epochs > 0) throw InvalidConfig("train: no training samples");
  nn::AdamW opt(m.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng rng = Rng::stream(cfg.seed, 7);
  TrainResult result;
  TrainState& st = result.state;
  if (resume) {
    st = *resume;
    if (!st.rng_state.empty()) rng.set_state(st.rng_state);
    if (st.optimizer) opt.restore(st.optimizer->step, st.optimizer->first_moments, st.optimizer->second_moments);
  }

  const long n_train = static_cast<long>(train_samples.size());
  const long per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = per_epoch * cfg.epochs;
  std::vector<long> order(train_samples.begin(), train_samples.end());

  LossOptions lo;
  lo.weights = cfg.weights;
  lo.sparsity_coeff = cfg.sparsity_coeff;
  lo.stop_gradient_sparse = cfg.stop_gradient_sparse;

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // Fresh shuffle each epoch from the training stream.
    std::copy(train_samples.begin(), train_samples.end(), order.begin());
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss.weights = cfg.weights;
    rec.loss.sparsity_coeff = cfg.sparsity_coeff;
    double seen = 0.0;
    for (long start = 0; start < n_train; start += cfg.batch_size) {
      const long count = std::min<long>(cfg.batch_size, n_train - start);
      const Batch b = make_batch(ds, std::span<const long>(order).subspan(static_cast<std::size_t>(start),
                                                                        static_cast<std::size_t>(count)));
      lo.temperature = cfg.gumbel.temperature(st.step, total_steps);
      lo.residual_temperature = cfg.gumbel.residual_temperature(st.step, total_steps);
      lo.hard = cfg.gumbel.hard(epoch, st.step, total_steps);
      const LossNoise noise = draw_noise(m, b, cfg.kl_samples, rng);
      const LossTerms terms = compute_losses(m, b, noise, lo);
      const LossBreakdown v = terms.values();
      if (!std::isfinite(v.total)) throw NumericError("training loss became non-finite", st.step);
      m.params().zero_grad();
      ad::backward(terms.total);
      opt.step();
      ++st.step;
      const double w = static_cast<double>(count);
      rec.loss.recon += w * v.recon;
      rec.loss.kld += w * v.kld;
      rec.loss.transition += w * v.transition;
      rec.loss.sparsity += w * v.sparsity;
      rec.loss.total += w * v.total;
      seen += w;
      rec.temperature = lo.temperature;
      rec.hard = lo.hard;
    }
    if (seen > 0.0) {
      rec.loss.recon /= seen;
      rec.loss.kld /= seen;
      rec.loss.transition /= seen;
      rec.loss.sparsity /= seen;
      rec.loss.total /= seen;
    }
    if (cfg.eval_every > 0 && !eval_samples.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const Evaluation ev = evaluate(m, ds, eval_samples);
      rec.metrics = metrics::EpochMetrics{epoch, ev.acc.accuracy, ev.mcc.value};
    }
    st.epoch = epoch;
    st.rng_state = rng.state();
    st.optimizer = model::OptimizerState{opt.steps(), opt.first_moments(), opt.second_moments()};
    result.history.push_back(rec);
    if (cb.on_epoch) cb.on_epoch(rec, st, opt);
  }
  st.rng_state = rng.state();
  st.optimizer = model::OptimizerState{opt.steps(), opt.first_moments(), opt.second_moments()};
  return result;
}

}  // namespace ctrlns::objectives
