#pragma once

// Model and data fixtures shared by the unit suites and the acceptance run.

#include "ctrlns/datagen.hpp"
#include "ctrlns/model.hpp"
#include "ctrlns/objectives.hpp"
#include "support/oracles.hpp"

#include <string>

namespace fixture {

/// z_t = A z_{t-1} + C u + diag(sigma) eps, encoded in the affine inverse
/// nets of a model with no prior hidden layers.
struct LinearGaussian {
  Eigen::MatrixXd a;      // n x n, row = output
  Eigen::MatrixXd c;      // n x U
  Eigen::VectorXd sigma;  // n
};

inline LinearGaussian random_linear_gaussian(int n, int u, ctrlns::Rng& rng) {
  LinearGaussian lg{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, u), Eigen::VectorXd(n)};
  for (Eigen::Index k = 0; k < lg.a.size(); ++k) lg.a.data()[k] = rng.uniform(-1, 1);
  for (Eigen::Index k = 0; k < lg.c.size(); ++k) lg.c.data()[k] = rng.uniform(-1, 1);
  for (int i = 0; i < n; ++i) lg.sigma(i) = rng.uniform(0.2, 1.5);
  return lg;
}

inline ctrlns::model::ModelConfig linear_prior_config(int n, int u) {
  ctrlns::model::ModelConfig mc;
  mc.latent_dim = n;
  mc.obs_dim = n;
  mc.n_domains_est = u;
  mc.prior_hidden = {};
  mc.encoder_hidden = {8};
  mc.decoder_hidden = {8};
  mc.transition_hidden = {4};
  mc.gate_hidden = {4};
  return mc;
}

/// Writes the inverse map eps_i = (z_i - A_i z_prev - C_i u) / sigma_i into
/// the inverse nets (input layout: z_prev, z_curr_i, u).
inline void install_linear_gaussian(ctrlns::model::CtrlnsModel& m, const LinearGaussian& lg) {
  const int n = static_cast<int>(lg.a.rows());
  const int u = static_cast<int>(lg.c.cols());
  for (int i = 0; i < n; ++i) {
    const std::string base = "inverse." + std::to_string(i) + ".l0";
    ctrlns::ad::Matrix w(1, n + 1 + u);
    w.block(0, 0, 1, n) = -lg.a.row(i) / lg.sigma(i);
    w(0, n) = 1.0 / lg.sigma(i);
    w.block(0, n + 1, 1, u) = -lg.c.row(i) / lg.sigma(i);
    m.params().get(base + ".weight").mutable_value() = w;
    m.params().get(base + ".bias").mutable_value().setZero();
  }
}

/// Largest |prior_log_density - closed form| over `points` random states.
inline double linear_gaussian_max_error(int n, int u, int points, std::uint64_t seed) {
  ctrlns::Rng rng(seed);
  const LinearGaussian lg = random_linear_gaussian(n, u, rng);
  ctrlns::model::CtrlnsModel m(linear_prior_config(n, u));
  install_linear_gaussian(m, lg);
  ctrlns::ad::Matrix z_prev(points, n), z_curr(points, n), uu = ctrlns::ad::Matrix::Zero(points, u);
  for (int r = 0; r < points; ++r) {
    for (int i = 0; i < n; ++i) {
      z_prev(r, i) = rng.normal() * 2.0;
      z_curr(r, i) = rng.normal() * 2.0;
    }
    // Soft one-hot mixtures exercise the linear dependence on u as well.
    double tot = 0.0;
    for (int k = 0; k < u; ++k) tot += uu(r, k) = rng.uniform();
    uu.row(r) /= tot;
  }
  using ctrlns::ad::Var;
  const auto got = m.prior_log_density(Var::constant(z_curr), Var::constant(z_prev), Var::constant(uu)).value();
  const Eigen::MatrixXd cov = lg.sigma.array().square().matrix().asDiagonal();
  double worst = 0.0;
  for (int r = 0; r < points; ++r) {
    const Eigen::VectorXd mean = lg.a * z_prev.row(r).transpose() + lg.c * uu.row(r).transpose();
    const double ref = oracle::mvn_log_density(z_curr.row(r).transpose(), mean, cov);
    worst = std::max(worst, std::abs(got(r, 0) - ref));
  }
  return worst;
}

/// Two-dimensional model and a short random batch for gradient checks.
struct GradToy {
  ctrlns::model::CtrlnsModel model;
  ctrlns::objectives::Batch batch;
  ctrlns::objectives::LossNoise noise;
  ctrlns::objectives::LossOptions options;
};

inline GradToy make_grad_toy(std::uint64_t seed) {
  ctrlns::model::ModelConfig mc;
  mc.latent_dim = 2;
  mc.obs_dim = 2;
  mc.n_domains_est = 2;
  mc.encoder_hidden = {6};
  mc.decoder_hidden = {6};
  mc.transition_hidden = {5};
  mc.prior_hidden = {5};
  mc.gate_hidden = {5};
  mc.learn_initial_prior = true;
  mc.seed = seed;
  GradToy t{ctrlns::model::CtrlnsModel(mc), {}, {}, {}};
  ctrlns::Rng rng(seed + 1);
  t.batch.batch = 3;
  t.batch.seq_len = 4;
  t.batch.x.resize(12, 2);
  for (Eigen::Index k = 0; k < t.batch.x.size(); ++k) t.batch.x.data()[k] = rng.normal();
  t.noise = ctrlns::objectives::draw_noise(t.model, t.batch, 2, rng);
  t.options.temperature = 0.7;
  t.options.hard = false;
  t.options.sparsity_coeff = 1e-4;
  return t;
}

enum class Term { recon, kld, transition, sparsity };

inline ctrlns::ad::Var pick(const ctrlns::objectives::LossTerms& t, Term term) {
  switch (term) {
    case Term::recon: return t.recon;
    case Term::kld: return t.kld;
    case Term::transition: return t.transition;
    default: return t.sparsity;
  }
}

/// Worst relative error between the analytic directional derivative of one
/// loss term and a central difference, over random unit directions.
inline double gradient_check(GradToy& toy, Term term, int directions, std::uint64_t seed, double h = 1e-5) {
  using namespace ctrlns;
  auto& store = toy.model.params();
  const Eigen::VectorXd x0 = store.flatten();
  store.zero_grad();
  ad::backward(pick(objectives::compute_losses(toy.model, toy.batch, toy.noise, toy.options), term));
  const Eigen::VectorXd grad = store.flat_grad();
  auto f = [&](const Eigen::VectorXd& x) {
    store.assign(x);
    return pick(objectives::compute_losses(toy.model, toy.batch, toy.noise, toy.options), term).scalar();
  };
  Rng rng(seed);
  double worst = 0.0;
  for (int d = 0; d < directions; ++d) {
    Eigen::VectorXd dir(x0.size());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = rng.normal();
    dir.normalize();
    const double fd = oracle::directional_fd(f, x0, dir, h);
    worst = std::max(worst, oracle::rel_err(grad.dot(dir), fd));
  }
  store.assign(x0);
  return worst;
}

}  // namespace fixture
