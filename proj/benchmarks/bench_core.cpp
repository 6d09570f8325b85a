#include "ctrlns/datagen.hpp"
#include "ctrlns/metrics.hpp"
#include "ctrlns/model.hpp"
#include "ctrlns/objectives.hpp"
#include "ctrlns/theory.hpp"

#include <benchmark/benchmark.h>

using namespace ctrlns;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m;
}

datagen::GenConfig desk_gen() {
  datagen::GenConfig g;
  g.n_domains = 3;
  g.latent_dim = 4;
  g.obs_dim = 4;
  g.n_sequences = 250;
  g.mixing_depth = 2;
  g.condition_bound = 10;
  g.seed = 1;
  return g;
}

model::ModelConfig desk_model() {
  model::ModelConfig mc;
  mc.latent_dim = 4;
  mc.obs_dim = 4;
  mc.n_domains_est = 3;
  mc.prior_hidden = {64, 64};
  mc.gate_input = model::GateInput::residual;
  mc.seed = 1;
  return mc;
}

}  // namespace

static void BM_Assignment(benchmark::State& state) {
  const auto n = state.range(0);
  const Eigen::MatrixXd cost = random_matrix(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::linear_sum_assignment(cost));
}
BENCHMARK(BM_Assignment)->Arg(4)->Arg(8)->Arg(32)->Arg(128);

static void BM_MccSpearman(benchmark::State& state) {
  const Eigen::MatrixXd z = random_matrix(state.range(0), 8, 2);
  const Eigen::MatrixXd zh = z + 0.5 * random_matrix(state.range(0), 8, 3);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::mcc(zh, z, metrics::CorrMode::spearman));
}
BENCHMARK(BM_MccSpearman)->Arg(1000)->Arg(20000);

static void BM_GenerateDeskDataset(benchmark::State& state) {
  const datagen::GenConfig g = desk_gen();
  for (auto _ : state) benchmark::DoNotOptimize(datagen::generate_dataset(g));
}
BENCHMARK(BM_GenerateDeskDataset)->Unit(benchmark::kMillisecond);

static void BM_LossForwardBackward(benchmark::State& state) {
  const auto gen = datagen::generate_dataset(desk_gen());
  model::CtrlnsModel m(desk_model());
  std::vector<long> samples(64);
  for (long k = 0; k < 64; ++k) samples[static_cast<std::size_t>(k)] = k;
  const objectives::Batch b = objectives::make_batch(gen.dataset, samples);
  Rng rng(4);
  const objectives::LossNoise noise = objectives::draw_noise(m, b, 1, rng);
  objectives::LossOptions opt;
  opt.weights.recon = 5000;
  for (auto _ : state) {
    m.params().zero_grad();
    const auto terms = objectives::compute_losses(m, b, noise, opt);
    ad::backward(terms.total);
  }
}
BENCHMARK(BM_LossForwardBackward)->Unit(benchmark::kMillisecond);

static void BM_JacobianSupport(benchmark::State& state) {
  datagen::GenConfig g = desk_gen();
  g.latent_dim = static_cast<int>(state.range(0));
  g.obs_dim = g.latent_dim;
  Rng rng(5);
  const auto sys = datagen::build_ground_truth(g, rng, datagen::VariabilityMode::distinct_masks);
  Rng prng(6);
  const auto pts = theory::stationary_points(sys, 100, prng);
  const auto f = theory::transition_jet_map(sys.transitions[0]);
  for (auto _ : state) benchmark::DoNotOptimize(theory::higher_order_support(f, 3, pts));
}
BENCHMARK(BM_JacobianSupport)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

static void BM_AssignmentOracle(benchmark::State& state) {
  theory::OracleInstance inst;
  const int cells = static_cast<int>(state.range(0));
  for (int c = 0; c < cells; ++c) {
    inst.cell_weights.push_back(1.0 + c);
    inst.true_assignment.push_back(c % 2);
  }
  Eigen::MatrixXi a = Eigen::MatrixXi::Identity(4, 4), b = a;
  a(0, 1) = 1;
  b(2, 3) = 1;
  inst.supports = {a, b};
  inst.n_labels = 3;
  for (auto _ : state) benchmark::DoNotOptimize(theory::assignment_oracle(inst));
}
BENCHMARK(BM_AssignmentOracle)->Arg(6)->Arg(10);

BENCHMARK_MAIN();
