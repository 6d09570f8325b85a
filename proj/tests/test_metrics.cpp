#include "ctrlns/metrics.hpp"
#include "ctrlns/rng.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace ctrlns;
using namespace ctrlns::metrics;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Assignment, MatchesBruteForceOnRandomCosts) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = rng.uniform(-3, 3);
    const Assignment a = linear_sum_assignment(cost);
    double c = 0;
    for (int r = 0; r < n; ++r) c += cost(r, a.col_for_row[static_cast<std::size_t>(r)]);
    EXPECT_NEAR(c, a.cost, 1e-12);
    EXPECT_NEAR(a.cost, oracle::brute_force_min_cost(cost), 1e-12);
  }
}

TEST(Assignment, HandlesTiesAndIntegers) {
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(4, 4);
  const Assignment a = linear_sum_assignment(flat);
  std::vector<int> seen = a.col_for_row;
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(a.cost, 4.0);
}

TEST(Assignment, RejectsBadInput) {
  EXPECT_THROW(linear_sum_assignment(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(linear_sum_assignment(c), std::invalid_argument);
}

TEST(Ranks, AverageTies) {
  Eigen::VectorXd v(5);
  v << 3.0, 1.0, 3.0, 2.0, 3.0;
  const Eigen::VectorXd r = ranks(v);
  EXPECT_TRUE(r.isApprox(oracle::average_ranks(v)));
  EXPECT_DOUBLE_EQ(r(0), 4.0);
}

TEST(Correlation, MatchesIndependentPearsonAndSpearman) {
  Rng rng(12);
  const Eigen::MatrixXd a = gaussian(200, 3, rng);
  Eigen::MatrixXd b = gaussian(200, 2, rng);
  b.col(0) += a.col(1);
  b.col(1) = a.col(2).array().cube();
  const Eigen::MatrixXd p = abs_correlation(a, b, CorrMode::pearson);
  const Eigen::MatrixXd s = abs_correlation(a, b, CorrMode::spearman);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(p(i, j), std::abs(oracle::pearson(a.col(i), b.col(j))), 1e-12);
      EXPECT_NEAR(s(i, j), std::abs(oracle::spearman(a.col(i), b.col(j))), 1e-12);
    }
  }
  EXPECT_NEAR(s(2, 1), 1.0, 1e-12);
}

TEST(Mcc, IdentityGivesHundred) {
  Rng rng(13);
  const Eigen::MatrixXd z = gaussian(300, 4, rng);
  EXPECT_NEAR(mcc(z, z).value, 100.0, 1e-10);
  EXPECT_NEAR(mcc(z, z, CorrMode::pearson).value, 100.0, 1e-10);
}

TEST(Mcc, InvariantToPermutationScaleSignAndShift) {
  Rng rng(14);
  Eigen::MatrixXd z = gaussian(400, 4, rng);
  Eigen::MatrixXd z_hat = z + 0.5 * gaussian(400, 4, rng);
  const double base = mcc(z_hat, z, CorrMode::pearson).value;
  Eigen::MatrixXd moved(400, 4);
  const std::vector<int> perm{2, 0, 3, 1};
  for (int j = 0; j < 4; ++j) moved.col(perm[static_cast<std::size_t>(j)]) = -3.5 * z_hat.col(j).array() + 7.0;
  EXPECT_NEAR(mcc(moved, z, CorrMode::pearson).value, base, 1e-10);
  const MccResult r = mcc(moved, z, CorrMode::pearson);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(r.permutation[static_cast<std::size_t>(j)], perm[static_cast<std::size_t>(j)]);
}

TEST(Mcc, SpearmanInvariantToMonotoneMaps) {
  Rng rng(15);
  const Eigen::MatrixXd z = gaussian(300, 3, rng);
  Eigen::MatrixXd z_hat = z;
  z_hat.col(0) = z.col(0).array().exp();
  z_hat.col(1) = z.col(1).array().cube();
  EXPECT_NEAR(mcc(z_hat, z).value, 100.0, 1e-10);
  EXPECT_LT(mcc(z_hat, z, CorrMode::pearson).value, 100.0);
}

TEST(Mcc, ConstantColumnWarns) {
  Rng rng(16);
  const Eigen::MatrixXd z = gaussian(100, 2, rng);
  Eigen::MatrixXd z_hat = z;
  z_hat.col(1).setConstant(2.0);
  const MccResult r = mcc(z_hat, z);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_NEAR(r.value, 50.0, 1e-10);
}

TEST(DomainAccuracy, RelabelingIsFree) {
  const std::vector<int> u{1, 1, 2, 2, 3, 3, 3};
  const std::vector<int> u_hat{3, 3, 1, 1, 2, 2, 1};
  const DomainAccResult r = domain_accuracy(u_hat, u, 3);
  EXPECT_NEAR(r.accuracy, 100.0 * 6.0 / 7.0, 1e-12);
  EXPECT_EQ(r.sigma, (std::vector<int>{2, 3, 1}));
  EXPECT_EQ(r.confusion.sum(), 7);
  EXPECT_EQ(r.confusion.trace(), 6);
}

TEST(DomainAccuracy, RejectsOutOfRangeLabels) {
  const std::vector<int> u{1, 2};
  const std::vector<int> bad{1, 4};
  EXPECT_THROW(domain_accuracy(bad, u, 2), std::invalid_argument);
  EXPECT_THROW(domain_accuracy(std::vector<int>{1}, u, 2), std::invalid_argument);
}

TEST(PhaseReport, AccFirstAndRanges) {
  std::vector<EpochMetrics> h{{0, 40, 30}, {5, 92, 60}, {10, 95, 88}, {15, 97, 91}, {20, 98, 93}};
  const PhaseReport p = phase_report(h, 90, 90);
  EXPECT_EQ(p.acc_cross, 5);
  EXPECT_EQ(p.mcc_cross, 15);
  EXPECT_TRUE(p.acc_first);
  EXPECT_EQ(p.phase1.begin, 0);
  EXPECT_EQ(p.phase1.end, 4);
  EXPECT_EQ(p.phase2.begin, 5);
  EXPECT_EQ(p.phase2.end, 14);
  EXPECT_EQ(p.phase3.begin, 15);
  EXPECT_EQ(p.phase3.end, 20);
}

TEST(PhaseReport, TieIsNotAccFirst) {
  std::vector<EpochMetrics> h{{1, 50, 50}, {2, 95, 95}};
  EXPECT_FALSE(phase_report(h).acc_first);
  std::vector<EpochMetrics> never{{1, 95, 10}, {2, 96, 20}};
  const PhaseReport p = phase_report(never);
  EXPECT_TRUE(p.acc_first);
  EXPECT_FALSE(p.mcc_cross.has_value());
  EXPECT_FALSE(p.phase2.end.has_value());
  EXPECT_FALSE(phase_report({}).acc_first);
}

TEST(MetricsReport, JsonCarriesHeadlineFields) {
  Rng rng(17);
  const Eigen::MatrixXd z = gaussian(50, 2, rng);
  MetricsReport r;
  r.mcc = mcc(z, z);
  r.acc = domain_accuracy(std::vector<int>{1, 2}, std::vector<int>{1, 2}, 2);
  const nlohmann::json j = to_json(r);
  EXPECT_NEAR(j.at("mcc").get<double>(), 100.0, 1e-10);
  EXPECT_TRUE(j.contains("acc"));
}
