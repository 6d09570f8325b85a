#include "ctrlns/error.hpp"
#include "ctrlns/objectives.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace ctrlns;
using namespace ctrlns::objectives;

namespace {

datagen::Generated tiny_data(std::uint64_t seed = 2) {
  datagen::GenConfig g;
  g.n_domains = 2;
  g.latent_dim = 3;
  g.obs_dim = 3;
  g.seq_len = 4;
  g.n_sequences = 6;
  g.batch_per_domain_seq = 4;
  g.mixing_depth = 1;
  g.condition_bound = 10;
  g.seed = seed;
  return datagen::generate_dataset(g);
}

model::ModelConfig tiny_model(model::GateInput gate = model::GateInput::raw) {
  model::ModelConfig mc;
  mc.latent_dim = 3;
  mc.obs_dim = 3;
  mc.n_domains_est = 2;
  mc.encoder_hidden = {8};
  mc.decoder_hidden = {8};
  mc.transition_hidden = {4};
  mc.prior_hidden = {4};
  mc.gate_hidden = {4};
  mc.gate_input = gate;
  mc.seed = 1;
  return mc;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.eval_every = 1;
  tc.seed = 5;
  return tc;
}

std::vector<long> range(long lo, long hi) {
  std::vector<long> v;
  for (long k = lo; k < hi; ++k) v.push_back(k);
  return v;
}

}  // namespace

TEST(Schedule, AnnealsExponentiallyThenHolds) {
  GumbelSchedule s;
  s.start = 1.0;
  s.end = 0.01;
  s.anneal_fraction = 0.5;
  EXPECT_DOUBLE_EQ(s.temperature(0, 100), 1.0);
  EXPECT_NEAR(s.temperature(25, 100), 0.1, 1e-12);
  EXPECT_NEAR(s.temperature(50, 100), 0.01, 1e-12);
  EXPECT_NEAR(s.temperature(90, 100), 0.01, 1e-12);
  EXPECT_FALSE(s.hard(1, 49, 100));
  EXPECT_TRUE(s.hard(1, 50, 100));
  s.hard_epoch = 3;
  EXPECT_FALSE(s.hard(2, 99, 100));
  EXPECT_TRUE(s.hard(3, 0, 100));
  EXPECT_NEAR(s.residual_temperature(0, 10), s.residual_start, 1e-12);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig tc = tiny_train(3);
  tc.weights.recon = 50;
  nlohmann::json j = tc;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  j["gumbel"]["bogus"] = 1;
  EXPECT_THROW(j.get<TrainConfig>(), InvalidConfig);
  tc.learning_rate = 0;
  EXPECT_THROW(tc.validate(), InvalidConfig);
  tc = tiny_train(3);
  tc.gumbel.residual_end = 0;
  EXPECT_THROW(tc.validate(), InvalidConfig);
}

TEST(Losses, TermsMatchDirectFormulas) {
  Rng rng(1);
  ad::Matrix x(3, 2), y(3, 2);
  for (Eigen::Index k = 0; k < 6; ++k) {
    x.data()[k] = rng.normal();
    y.data()[k] = rng.normal();
  }
  EXPECT_NEAR(loss_recon(Var::constant(x), Var::constant(y)).scalar(), (x - y).squaredNorm() / 6.0, 1e-12);
  ad::Matrix lq(3, 1), lp(3, 1);
  lq << 1, 2, 3;
  lp << 0.5, 0.5, 4;
  EXPECT_NEAR(loss_kld(Var::constant(lq), Var::constant(lp)).scalar(), (0.5 + 1.5 - 1.0) / 3.0, 1e-12);
}

TEST(Losses, WeightedTotalMatchesBreakdown) {
  fixture::GradToy toy = fixture::make_grad_toy(3);
  toy.options.weights = {2.0, 0.5, 3.0};
  toy.options.sparsity_coeff = 0.01;
  const LossTerms t = compute_losses(toy.model, toy.batch, toy.noise, toy.options);
  const LossBreakdown b = t.values();
  EXPECT_NEAR(b.total, b.weighted_sum(), 1e-10);
  EXPECT_NEAR(b.total, 2.0 * b.recon + 0.5 * b.kld + 3.0 * b.transition + 0.01 * b.sparsity, 1e-10);
  EXPECT_NEAR(elbo(t), -(b.recon + b.kld), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  fixture::GradToy toy = fixture::make_grad_toy(4);
  for (auto term : {fixture::Term::recon, fixture::Term::kld, fixture::Term::transition, fixture::Term::sparsity}) {
    EXPECT_LT(fixture::gradient_check(toy, term, 10, 9), 1e-3) << static_cast<int>(term);
  }
}

TEST(Losses, StopGradientKeepsEncoderOutOfTransitionTerm) {
  fixture::GradToy toy = fixture::make_grad_toy(5);
  toy.options.stop_gradient_sparse = true;
  auto& store = toy.model.params();
  store.zero_grad();
  ad::backward(compute_losses(toy.model, toy.batch, toy.noise, toy.options).transition);
  EXPECT_EQ(store.get("encoder.l0.weight").grad().cwiseAbs().sum(), 0.0);
  EXPECT_GT(store.get("bank.0.l0.weight").grad().cwiseAbs().sum(), 0.0);
}

TEST(Batch, TimeMajorLayout) {
  const auto gen = tiny_data();
  const std::vector<long> samples{3, 7};
  const Batch b = make_batch(gen.dataset, samples);
  EXPECT_EQ(b.x.rows(), 8);
  for (int t = 0; t < 4; ++t) {
    for (int s = 0; s < 2; ++s) {
      EXPECT_FLOAT_EQ(static_cast<float>(b.x(t * 2 + s, 1)), gen.dataset.obs(samples[static_cast<std::size_t>(s)], t, 1));
      EXPECT_EQ(b.u_true[static_cast<std::size_t>(t * 2 + s)], gen.dataset.domain(samples[static_cast<std::size_t>(s)], t));
    }
  }
}

TEST(Train, DeterministicAndRecordsMetrics) {
  const auto gen = tiny_data();
  const auto tr = range(0, 16), ev = range(16, 24);
  model::CtrlnsModel a(tiny_model()), b(tiny_model());
  const TrainResult ra = train(a, gen.dataset, tr, ev, tiny_train(3));
  const TrainResult rb = train(b, gen.dataset, tr, ev, tiny_train(3));
  ASSERT_EQ(ra.history.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(ra.history[k].loss.total, rb.history[k].loss.total);
    ASSERT_TRUE(ra.history[k].metrics.has_value());
  }
  EXPECT_EQ(a.params().flatten(), b.params().flatten());
  EXPECT_EQ(ra.state.step, 6);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto gen = tiny_data();
  const auto tr = range(0, 16), ev = range(16, 24);
  model::CtrlnsModel full(tiny_model(model::GateInput::residual));
  TrainState saved;
  std::vector<std::pair<std::string, ad::Matrix>> params_at_2;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r, const TrainState& st, const nn::AdamW&) {
    if (r.epoch != 2) return;
    saved = st;
    for (const auto& [name, v] : full.params().entries()) params_at_2.emplace_back(name, v.value());
  };
  const TrainResult rf = train(full, gen.dataset, tr, ev, tiny_train(4), cb);

  model::CtrlnsModel resumed(tiny_model(model::GateInput::residual));
  for (const auto& [name, v] : params_at_2) resumed.params().get(name).mutable_value() = v;
  const TrainResult rr = train(resumed, gen.dataset, tr, ev, tiny_train(4), {}, saved);
  ASSERT_EQ(rr.history.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(rr.history[k].loss.total, rf.history[k + 2].loss.total, 1e-9);
  EXPECT_EQ(resumed.params().flatten(), full.params().flatten());
}

TEST(Train, ZeroEpochsGivesEmptyHistory) {
  const auto gen = tiny_data();
  model::CtrlnsModel m(tiny_model());
  const TrainResult r = train(m, gen.dataset, range(0, 8), range(8, 12), tiny_train(0));
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, NonFiniteLossRaisesNumericError) {
  auto gen = tiny_data();
  gen.dataset.observations[5] = std::numeric_limits<float>::quiet_NaN();
  model::CtrlnsModel m(tiny_model());
  EXPECT_THROW(train(m, gen.dataset, range(0, 16), range(16, 24), tiny_train(1)), NumericError);
}

TEST(Evaluate, PooledMetricsAreInRange) {
  const auto gen = tiny_data();
  model::CtrlnsModel m(tiny_model());
  const Evaluation e = evaluate(m, gen.dataset, range(0, 24));
  EXPECT_GE(e.acc.accuracy, 0.0);
  EXPECT_LE(e.acc.accuracy, 100.0);
  EXPECT_EQ(e.mcc.mode, metrics::CorrMode::spearman);
  EXPECT_EQ(e.mcc_other.mode, metrics::CorrMode::pearson);
  EXPECT_LE(e.mcc.value, 100.0);
}
