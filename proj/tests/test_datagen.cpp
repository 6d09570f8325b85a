#include "ctrlns/container.hpp"
#include "ctrlns/datagen.hpp"
#include "ctrlns/error.hpp"
#include "ctrlns/theory.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ctrlns;
using namespace ctrlns::datagen;

namespace {

GenConfig small_config(std::uint64_t seed = 7) {
  GenConfig g;
  g.n_domains = 3;
  g.latent_dim = 4;
  g.obs_dim = 4;
  g.seq_len = 6;
  g.n_sequences = 12;
  g.batch_per_domain_seq = 4;
  g.seed = seed;
  g.mixing_depth = 2;
  g.condition_bound = 10.0;
  return g;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ctrlns_test_" + name);
}

}  // namespace

TEST(GenConfig, RejectsSingleDomain) {
  GenConfig g = small_config();
  g.n_domains = 1;
  EXPECT_THROW(g.validate(), InvalidConfig);
  g = small_config();
  g.obs_dim = 2;
  EXPECT_THROW(g.validate(), InvalidConfig);
  g = small_config();
  g.noise_scale = -1;
  EXPECT_THROW(generate_dataset(g), InvalidConfig);
}

TEST(GenConfig, JsonRoundTripAndUnknownKeys) {
  GenConfig g = small_config();
  g.markov_a = {{0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}};
  nlohmann::json j = g;
  const GenConfig back = j.get<GenConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  j["not_a_field"] = 1;
  EXPECT_THROW(j.get<GenConfig>(), InvalidConfig);
}

TEST(Markov, ChainStaysInRangeAndFollowsZeros) {
  Rng rng(1);
  Eigen::MatrixXd p(3, 3);
  p << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  const auto chain = sample_markov_chain(p, 2, 10, rng);
  ASSERT_EQ(chain.size(), 10u);
  for (std::size_t t = 1; t < chain.size(); ++t) EXPECT_EQ(chain[t], chain[t - 1] % 3 + 1);
  const Eigen::MatrixXd r = random_markov_matrix(4, rng);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-12);
  EXPECT_GE(r.minCoeff(), 0.0);
}

TEST(DomainSequences, ProvenanceCountsFollowMix) {
  GenConfig g = small_config();
  g.n_sequences = 10;
  Rng rng(2);
  const auto seqs = sample_domain_sequences(g, rng);
  ASSERT_EQ(seqs.size(), 10u);
  std::array<int, 3> counts{};
  for (const auto& s : seqs) {
    ++counts[static_cast<std::size_t>(s.provenance)];
    EXPECT_EQ(static_cast<int>(s.labels.size()), g.seq_len);
    for (int l : s.labels) {
      EXPECT_GE(l, 1);
      EXPECT_LE(l, 3);
    }
  }
  std::sort(counts.begin(), counts.end());
  EXPECT_EQ(counts, (std::array<int, 3>{3, 3, 4}));
}

TEST(Masks, DiagonalAndParentPresent) {
  GenConfig g = small_config();
  g.mask_density = 0.0;
  Rng rng(3);
  const auto masks = random_masks(g, rng, VariabilityMode::distinct_masks);
  ASSERT_EQ(masks.size(), 3u);
  for (std::size_t a = 0; a < masks.size(); ++a) {
    const Mask& m = masks[a];
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(m(i, i), 1);
      EXPECT_GE(m.row(i).sum(), 2);
    }
    for (std::size_t b = a + 1; b < masks.size(); ++b) EXPECT_NE(m, masks[b]);
  }
  const auto same = random_masks(g, rng, VariabilityMode::identical_masks);
  EXPECT_EQ(same[0], same[1]);
  EXPECT_EQ(same[1], same[2]);
}

TEST(Masks, ImpossibleDistinctnessRaises) {
  GenConfig g = small_config();
  g.latent_dim = 1;
  g.obs_dim = 1;
  Rng rng(4);
  EXPECT_THROW(random_masks(g, rng, VariabilityMode::distinct_masks), GenerationError);
}

TEST(GroundTruth, TransitionsRespectMasks) {
  GenConfig g = small_config();
  Rng rng(5);
  const GroundTruthSystem sys = build_ground_truth(g, rng, VariabilityMode::distinct_masks);
  Rng pts(6);
  std::vector<Eigen::VectorXd> points;
  for (int k = 0; k < 50; ++k) points.push_back(Eigen::VectorXd::Random(4) * 0.5);
  for (const auto& tr : sys.transitions) {
    const theory::SupportMatrix s = theory::jacobian_support(theory::transition_jet_map(tr), points);
    EXPECT_EQ(s.entries, tr.mask);
    ASSERT_EQ(tr.noise_gain.size(), 4);
    EXPECT_GT(tr.noise_gain.minCoeff(), std::exp(-1.0) - 1e-12);
  }
  EXPECT_TRUE(verify_mixing_invertible(sys).ok);
}

TEST(GroundTruth, NoModulationMeansSharedScale) {
  GenConfig g = small_config();
  g.noise_modulation = 0.0;
  Rng rng(7);
  const GroundTruthSystem sys = build_ground_truth(g, rng, VariabilityMode::distinct_masks);
  for (const auto& tr : sys.transitions) EXPECT_EQ(tr.noise_std(2, 0.1), 0.1);
}

TEST(GroundTruth, AffineTransitionMean) {
  Eigen::MatrixXd a(2, 2);
  a << 0.5, 1.0, 0.0, -2.0;
  Eigen::VectorXd b(2);
  b << 0.1, 0.2;
  const DomainTransition tr = DomainTransition::affine(a, b);
  const std::vector<double> z{1.0, 3.0};
  const auto m = tr.mean<double>(std::span<const double>(z));
  EXPECT_DOUBLE_EQ(m[0], 0.5 * 1.0 + 0.1);
  EXPECT_DOUBLE_EQ(m[1], 1.0 * 1.0 - 2.0 * 3.0 + 0.2);
}

TEST(Mixing, ConditionBoundHonoredOrRejected) {
  GenConfig g = small_config();
  Rng rng(8);
  const GroundTruthSystem sys = build_ground_truth(g, rng, VariabilityMode::distinct_masks);
  const MixingReport rep = verify_mixing_invertible(sys);
  for (double c : rep.condition_numbers) EXPECT_LE(c, 10.0);
  g.condition_bound = 1.0 + 1e-9;
  g.mixing_retry_budget = 3;
  Rng rng2(9);
  EXPECT_THROW(build_ground_truth(g, rng2, VariabilityMode::distinct_masks), GenerationError);
}

TEST(Dataset, ShapesAndDeterminism) {
  const GenConfig g = small_config();
  const Generated a = generate_dataset(g);
  const Generated b = generate_dataset(g);
  EXPECT_EQ(a.dataset.n_samples, g.total_samples());
  EXPECT_EQ(a.dataset.observations.size(), static_cast<std::size_t>(g.total_samples() * g.seq_len * g.obs_dim));
  EXPECT_EQ(a.system.fingerprint(), b.system.fingerprint());
  EXPECT_EQ(a.dataset.observations, b.dataset.observations);
  EXPECT_EQ(a.dataset.domains, b.dataset.domains);
  const Generated c = generate_dataset(small_config(8));
  EXPECT_NE(a.system.fingerprint(), c.system.fingerprint());
  a.dataset.check_shapes();
}

TEST(Dataset, SequencesShareLabelsWithinGroup) {
  const GenConfig g = small_config();
  const Generated gen = generate_dataset(g);
  const auto& ds = gen.dataset;
  for (int t = 0; t < g.seq_len; ++t) EXPECT_EQ(ds.domain(0, t), ds.domain(g.batch_per_domain_seq - 1, t));
}

TEST(Dataset, ObservationsAreMixedLatents) {
  const GenConfig g = small_config();
  const Generated gen = generate_dataset(g);
  const auto& ds = gen.dataset;
  Eigen::MatrixXd z(ds.seq_len, ds.latent_dim);
  for (int t = 0; t < ds.seq_len; ++t)
    for (int d = 0; d < ds.latent_dim; ++d) z(t, d) = ds.latent(3, t, d);
  const Eigen::MatrixXd x = apply_mixing(gen.system, z);
  for (int t = 0; t < ds.seq_len; ++t)
    for (int d = 0; d < ds.obs_dim; ++d) EXPECT_NEAR(x(t, d), ds.obs(3, t, d), 1e-5);
}

TEST(Dataset, ContainerRoundTripAndTamperWarning) {
  const Generated gen = generate_dataset(small_config());
  const auto path = temp_path("ds.bin");
  save_dataset(gen.dataset, path);
  LoadedDataset back = load_dataset(path);
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.dataset.observations, gen.dataset.observations);
  EXPECT_EQ(back.dataset.system_fingerprint, gen.dataset.system_fingerprint);

  // Edit the header the way a hand-patched file would look.
  io::Container c = io::read_container(path, "CTRLNSDS", kDatasetFormatVersion);
  c.header["system_fingerprint"] = "0000000000000000";
  io::write_container(path, "CTRLNSDS", c);
  back = load_dataset(path);
  ASSERT_FALSE(back.warnings.empty());
  EXPECT_NE(back.warnings[0].find("provenance mismatch"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Dataset, TruncatedFileIsFormatError) {
  const Generated gen = generate_dataset(small_config());
  const auto path = temp_path("trunc.bin");
  save_dataset(gen.dataset, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(load_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST(System, JsonRoundTripKeepsFingerprint) {
  const Generated gen = generate_dataset(small_config());
  const GroundTruthSystem back = system_from_json(system_to_json(gen.system));
  EXPECT_EQ(back.fingerprint(), gen.system.fingerprint());
}
