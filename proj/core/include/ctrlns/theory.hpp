#pragma once

// Support matrices of transition maps and numerical audits of the
// identifiability assumptions.
//
// Orientation: entry (i, j) of a support matrix refers to the partial
// derivative of output j with respect to input i, i.e. the edge
// z_{t-1,i} -> z_{t,j}.

#include "ctrlns/datagen.hpp"
#include "ctrlns/jet.hpp"
#include "ctrlns/rng.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ctrlns::theory {

/// R^n -> R^n map evaluated on jets, for exact directional derivatives.
using JetMap = std::function<std::vector<Jet>(const std::vector<Jet>&)>;
using RealMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SupportMatrix {
  Eigen::MatrixXi entries;
  int order = 1;
  double threshold = 1e-6;
  int n_eval_points = 0;
  /// Largest |d^k f_j / d z_i^k| seen per entry; NaN marks entries where a
  /// non-finite derivative was encountered.
  Eigen::MatrixXd max_abs;

  int dim() const { return static_cast<int>(entries.rows()); }
  bool operator==(const SupportMatrix& o) const { return entries == o.entries; }
  /// Entries whose derivative blew up (non-finite) at some point.
  int uncertain_count() const;
};

SupportMatrix make_support(const Eigen::MatrixXi& entries, int order = 1);
int complexity(const SupportMatrix& m);
int complexity(const Eigen::MatrixXi& m);
SupportMatrix binary_or(const SupportMatrix& a, const SupportMatrix& b);

/// Pure k-th partials d^k f_j / d z_i^k at `point`, as an n x n matrix
/// (row i = input, column j = output).
Eigen::MatrixXd pure_partials(const JetMap& f, const Eigen::VectorXd& point, int order);

SupportMatrix higher_order_support(const JetMap& f, int order, const std::vector<Eigen::VectorXd>& eval_points,
                                   double threshold = 1e-6);
inline SupportMatrix jacobian_support(const JetMap& f, const std::vector<Eigen::VectorXd>& eval_points,
                                      double threshold = 1e-6) {
  return higher_order_support(f, 1, eval_points, threshold);
}

/// Noise-free transition of one domain as a jet map and as a real map.
JetMap transition_jet_map(const datagen::DomainTransition& tr);
RealMap transition_real_map(const datagen::DomainTransition& tr);

/// States visited by the latent process (random domains, burn-in skipped).
std::vector<Eigen::VectorXd> stationary_points(const datagen::GroundTruthSystem& sys, int count, Rng& rng,
                                               int burn_in = 20);

// ---------------------------------------------------------------------------
// Mechanism variability

struct PairVerdict {
  int a = 0;
  int b = 0;
  bool pass = false;
  int min_order = 0;  // smallest distinguishing order, 0 when none
};

/// supports[u][k-1] is domain u's order-k support. A pair passes at the
/// first order where the supports differ.
std::vector<PairVerdict> mechanism_variability_check(const std::vector<std::vector<SupportMatrix>>& supports);

// ---------------------------------------------------------------------------
// Weakly diverse lossy transitions

enum class Verdict { pass, fail, inconclusive };
std::string to_string(Verdict v);

struct LossyCheckConfig {
  int samples_per_source = 600;  // stratified draws along each source axis
  double range = 3.5;            // z_i sampled over [-range, range]
  double radius = 0.05;          // ball radius for the flatness test
  int ball_points = 6;
  double threshold = 1e-6;
  /// An edge fails (rather than being inconclusive) when its smallest
  /// observed |partial| exceeds fail_factor * threshold.
  double fail_factor = 1e3;
  std::uint64_t seed = 0;
};

struct EdgeWitness {
  int source = 0;
  int child = 0;
  Verdict verdict = Verdict::inconclusive;
  double min_abs_partial = 0.0;
  std::optional<Eigen::VectorXd> witness;  // a ball center where the edge is flat
};

struct SourceDiversity {
  int source = 0;
  Verdict verdict = Verdict::inconclusive;
  std::optional<Eigen::VectorXd> intersection_witness;            // flat for every child
  std::vector<std::optional<Eigen::VectorXd>> outside_witnesses;  // per child: flat for it, not for all
  std::vector<int> children;
};

struct LossyReport {
  Verdict lossy = Verdict::inconclusive;
  Verdict weak_diversity = Verdict::inconclusive;
  std::vector<EdgeWitness> edges;
  std::vector<SourceDiversity> sources;
  long evaluations = 0;
};

/// Searches for flat regions of each edge of `f` whose support is `support`
/// (entries (i, j) with i -> j).
LossyReport weakly_diverse_lossy_check(const JetMap& f, const Eigen::MatrixXi& support, const LossyCheckConfig& cfg);
/// Runs the check per domain and combines verdicts (fail dominates, then
/// inconclusive).
std::vector<LossyReport> weakly_diverse_lossy_check(const datagen::GroundTruthSystem& sys, const LossyCheckConfig& cfg);
Verdict combine(const std::vector<Verdict>& vs);

// ---------------------------------------------------------------------------
// Exhaustive assignment oracle

struct OracleInstance {
  std::vector<double> cell_weights;        // p(cell), normalized internally
  std::vector<int> true_assignment;        // cell -> domain (0-based)
  std::vector<Eigen::MatrixXi> supports;   // per true domain
  int n_labels = 0;                        // candidate labels; 0 means number of domains
  long max_assignments = 1'000'000;
};

struct LandscapeEntry {
  std::vector<int> assignment;  // canonical form (labels by first occurrence)
  double expected_complexity = 0.0;
};

struct OracleReport {
  std::vector<LandscapeEntry> landscape;
  double min_complexity = 0.0;
  double true_complexity = 0.0;
  std::vector<std::vector<int>> minimizers;
  /// Minimizer set is exactly the relabelings of the true assignment.
  bool identifiable = false;
  /// Every minimizer collapses to the true assignment once labels with
  /// identical implied supports are merged.
  bool identifiable_after_merge = false;
  /// Minimizers that are strict refinements of the truth.
  std::vector<std::vector<int>> mergeable;
};

/// Canonical relabeling: labels renumbered by order of first appearance.
std::vector<int> canonical_assignment(const std::vector<int>& a);
/// Number of cell partitions into at most `labels` blocks.
long count_partitions(int cells, int labels);
/// Throws std::length_error when the enumeration exceeds the bound.
OracleReport assignment_oracle(const OracleInstance& inst);
void write_landscape_csv(const OracleReport& r, std::ostream& os);

// ---------------------------------------------------------------------------
// Sufficient variability for Gaussian transitions

struct GaussianDomain {
  /// Mean map f_u and its Jacobian d f_u / d z_prev (n x n, row = output).
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> mean;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
  Eigen::VectorXd variance;

  static GaussianDomain linear(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& variance);
};

struct VariabilityReport {
  int rank = 0;
  int required = 0;  // 2n
  bool pass = false;
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd stacked;  // rows s_1..s_n, then the ring vectors
};

/// Builds the 2n vectors for log-densities eta_k(u) = log N(z_k; f_{u,k}, var_{u,k})
/// at the probe points (concatenated across probes) and reports their rank
/// with cutoff 1e-8 * sigma_max.
VariabilityReport sufficient_variability_check(const std::vector<GaussianDomain>& domains,
                                               const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& probes);

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const SupportMatrix& m);
nlohmann::json to_json(const LossyReport& r);
nlohmann::json to_json(const OracleReport& r, bool include_landscape);
nlohmann::json to_json(const VariabilityReport& r);

}  // namespace ctrlns::theory
