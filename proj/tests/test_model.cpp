#include "ctrlns/error.hpp"
#include "ctrlns/model.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ctrlns;
using namespace ctrlns::model;

namespace {

ModelConfig small_config(GateInput gate = GateInput::raw) {
  ModelConfig c;
  c.latent_dim = 3;
  c.obs_dim = 4;
  c.n_domains_est = 3;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  c.transition_hidden = {6};
  c.prior_hidden = {6};
  c.gate_hidden = {6};
  c.gate_input = gate;
  c.seed = 3;
  return c;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix one_hot(const std::vector<int>& labels, int u) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), u);
  for (std::size_t r = 0; r < labels.size(); ++r) m(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  return m;
}

}  // namespace

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<ModelConfig>()), j);
  j["gate_input"] = "telepathy";
  EXPECT_THROW(j.get<ModelConfig>(), InvalidConfig);
  c.n_domains_est = 1;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = small_config();
  c.encoder_hidden = {0};
  EXPECT_THROW(c.validate(), InvalidConfig);
  EXPECT_EQ(parse_gate_input("residual"), GateInput::residual);
  EXPECT_EQ(to_string(GateInput::encoded), "encoded");
}

TEST(Model, SameSeedSameParameters) {
  CtrlnsModel a(small_config());
  CtrlnsModel b(small_config());
  EXPECT_EQ(a.params().flatten(), b.params().flatten());
  ModelConfig other = small_config();
  other.seed = 4;
  EXPECT_NE(CtrlnsModel(other).params().flatten(), a.params().flatten());
}

TEST(Model, EncodeZeroNoiseGivesMean) {
  CtrlnsModel m(small_config());
  Rng rng(1);
  const Var x = Var::constant(random_matrix(5, 4, rng));
  const PosteriorSample s = m.encode(x, Matrix::Zero(5, 3));
  EXPECT_TRUE(s.sample.value().isApprox(s.mean.value()));
  EXPECT_EQ(s.log_q.rows(), 5);
  EXPECT_EQ(m.decode(s.sample).cols(), 4);
  // log q at the mean equals the Gaussian normalizer.
  const Matrix lv = s.log_var.value();
  for (Eigen::Index r = 0; r < 5; ++r) {
    const double expect = -0.5 * (lv.row(r).sum() + 3 * std::log(2 * std::numbers::pi));
    EXPECT_NEAR(s.log_q.value()(r, 0), expect, 1e-10);
  }
}

TEST(Model, TransitionPredictIsConvexCombination) {
  CtrlnsModel m(small_config());
  Rng rng(2);
  const Var z = Var::constant(random_matrix(4, 3, rng));
  Matrix u(4, 3);
  u << 0.2, 0.5, 0.3, 1, 0, 0, 0, 0, 1, 0.1, 0.1, 0.8;
  const Matrix got = m.transition_predict(Var::constant(u), z).value();
  Matrix expect = Matrix::Zero(4, 3);
  for (int k = 0; k < 3; ++k) expect += (m.bank_member(k, z).value().array().colwise() * u.col(k).array()).matrix();
  EXPECT_TRUE(got.isApprox(expect, 1e-12));
}

TEST(Model, GumbelHardIsOneHotWithStraightThroughGradient) {
  Rng rng(3);
  Var logits = Var::parameter(random_matrix(6, 4, rng));
  Matrix g(6, 4);
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.gumbel();
  const GateSample s = CtrlnsModel::gumbel_gate(logits, 0.5, true, g);
  for (Eigen::Index r = 0; r < 6; ++r) {
    EXPECT_DOUBLE_EQ(s.u.value().row(r).sum(), 1.0);
    EXPECT_DOUBLE_EQ(s.u.value().row(r).maxCoeff(), 1.0);
    Eigen::Index a = 0, b = 0;
    s.u.value().row(r).maxCoeff(&a);
    s.soft.value().row(r).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
  ad::backward(ad::sum(ad::hadamard(s.u, Var::constant(random_matrix(6, 4, rng)))));
  EXPECT_GT(logits.grad().cwiseAbs().sum(), 0.0);
  EXPECT_THROW(CtrlnsModel::gumbel_gate(logits, 0.0, false, g), std::invalid_argument);
}

TEST(Model, ResidualGateLogitsFollowBankResiduals) {
  CtrlnsModel m(small_config(GateInput::residual));
  EXPECT_TRUE(m.gate_net().layers().empty());
  Rng rng(4);
  const Matrix xp = random_matrix(5, 4, rng), xc = random_matrix(5, 4, rng);
  const double temp = 0.3;
  const Matrix logits = m.gate_logits(Var::constant(xp), Var::constant(xc), temp).value();
  const Matrix a = m.encode(Var::constant(xp), Matrix::Zero(5, 3)).mean.value();
  const Matrix b = m.encode(Var::constant(xc), Matrix::Zero(5, 3)).mean.value();
  for (int k = 0; k < 3; ++k) {
    const Matrix pred = m.bank_member(k, Var::constant(a)).value();
    for (Eigen::Index r = 0; r < 5; ++r)
      EXPECT_NEAR(logits(r, k), -0.5 / temp * (b.row(r) - pred.row(r)).squaredNorm(), 1e-12);
  }
  EXPECT_THROW(m.gate_logits(Var::constant(xp), Var::constant(xc), 0.0), std::invalid_argument);
}

TEST(Model, PriorMatchesLinearGaussianClosedForm) {
  EXPECT_LT(fixture::linear_gaussian_max_error(3, 2, 100, 5), 1e-9);
}

TEST(Model, PriorJacobianTermUsesDiagonalDerivative) {
  CtrlnsModel m(small_config());
  Rng rng(6);
  const Matrix zc = random_matrix(4, 3, rng), zp = random_matrix(4, 3, rng);
  const Matrix u = one_hot({0, 1, 2, 1}, 3);
  auto [eps, deriv] = m.inverse_dynamics(Var::constant(zc), Var::constant(zp), Var::constant(u));
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Matrix up = zc, dn = zc;
    up.col(i).array() += h;
    dn.col(i).array() -= h;
    const Matrix e_up = m.inverse_dynamics(Var::constant(up), Var::constant(zp), Var::constant(u)).first.value();
    const Matrix e_dn = m.inverse_dynamics(Var::constant(dn), Var::constant(zp), Var::constant(u)).first.value();
    for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(deriv.value()(r, i), (e_up(r, i) - e_dn(r, i)) / (2 * h), 1e-6);
  }
  (void)eps;
}

TEST(Model, PermuteDomainsRelabelsConsistently) {
  CtrlnsModel m(small_config());
  CtrlnsModel p(small_config());
  const std::vector<int> perm{2, 0, 1};
  p.permute_domains(perm);
  Rng rng(7);
  const Matrix zc = random_matrix(3, 3, rng), zp = random_matrix(3, 3, rng);
  const Matrix xp = random_matrix(3, 4, rng), xc = random_matrix(3, 4, rng);
  const Matrix lm = m.gate_logits(Var::constant(xp), Var::constant(xc)).value();
  const Matrix lp = p.gate_logits(Var::constant(xp), Var::constant(xc)).value();
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(p.bank_member(k, Var::constant(zp)).value().isApprox(m.bank_member(perm[k], Var::constant(zp)).value()));
    EXPECT_TRUE(lp.col(k).isApprox(lm.col(perm[k])));
    // New label k is old label perm[k] in the prior as well.
    const Matrix up = one_hot({k, k, k}, 3);
    const Matrix uo = one_hot({perm[k], perm[k], perm[k]}, 3);
    EXPECT_TRUE(p.prior_log_density(Var::constant(zc), Var::constant(zp), Var::constant(up))
                    .value()
                    .isApprox(m.prior_log_density(Var::constant(zc), Var::constant(zp), Var::constant(uo)).value()));
  }
  EXPECT_THROW(p.permute_domains({0, 0, 1}), std::invalid_argument);
}

TEST(Model, SparsityIsSumOfSquaredInputWeights) {
  CtrlnsModel m(small_config());
  double expect = 0.0;
  for (const auto& net : m.bank()) expect += net.layers().front().weight.value().squaredNorm();
  EXPECT_NEAR(m.bank_sparsity().scalar(), expect, 1e-12);
}

TEST(Model, MergeGroupsMembersWithEqualSupports) {
  CtrlnsModel m(small_config());
  // Member 1 copies member 0; member 2 loses its dependence on input 1.
  auto& store = m.params();
  for (const char* part : {".l0.weight", ".l0.bias", ".l1.weight", ".l1.bias"}) {
    store.get(std::string("bank.1") + part).mutable_value() = store.get(std::string("bank.0") + part).value();
  }
  store.get("bank.2.l0.weight").mutable_value().col(1).setZero();
  Rng rng(8);
  std::vector<Eigen::VectorXd> pts;
  for (int k = 0; k < 30; ++k) pts.push_back(random_matrix(3, 1, rng).col(0));
  EXPECT_EQ(merge_equivalent_members(m, pts, 1e-9), (std::vector<int>{0, 0, 1}));
}

TEST(Checkpoint, RoundTripRestoresParametersExactly) {
  CtrlnsModel m(small_config());
  nn::AdamW opt(m.params(), {});
  Rng rng(9);
  const Matrix x = random_matrix(4, 4, rng);
  m.params().zero_grad();
  ad::backward(ad::sum(ad::square(m.decode(m.encode(Var::constant(x), rng).sample))));
  opt.step();
  const auto path = std::filesystem::temp_directory_path() / "ctrlns_test_ckpt.bin";
  save_checkpoint(path, m, &opt, {{"epoch", 3}});
  const Checkpoint ck = read_checkpoint(path);
  EXPECT_EQ(ck.meta.at("epoch").get<int>(), 3);
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 1);
  CtrlnsModel fresh(ck.config);
  load_params(fresh, ck);
  EXPECT_EQ(fresh.params().flatten(), m.params().flatten());
  ModelConfig other = small_config();
  other.latent_dim = 2;
  CtrlnsModel wrong(other);
  EXPECT_ANY_THROW(load_params(wrong, ck));
  std::filesystem::remove(path);
}

TEST(Batches, TimeMajorViews) {
  Matrix seq(6, 1);
  seq << 0, 1, 2, 3, 4, 5;  // T = 3, B = 2
  const Var s = Var::constant(seq);
  EXPECT_EQ(previous_steps(s, 2).value(), seq.topRows(4));
  EXPECT_EQ(current_steps(s, 2).value(), seq.bottomRows(4));
}
