#pragma once

// Experiment configuration, run directories and the generate / train /
// eval / audit / report commands.

#include "ctrlns/datagen.hpp"
#include "ctrlns/metrics.hpp"
#include "ctrlns/model.hpp"
#include "ctrlns/objectives.hpp"
#include "ctrlns/theory.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ctrlns::harness {

namespace fs = std::filesystem;

inline constexpr const char* kSchemaVersion = "1";

struct EvalConfig {
  metrics::CorrMode mcc_mode = metrics::CorrMode::spearman;
  int eval_every_epochs = 5;
  double holdout_fraction = 0.2;
  double acc_threshold = 90.0;
  double mcc_threshold = 90.0;
};

struct AuditConfig {
  int eval_points = 100;
  double support_threshold = 1e-6;
  int max_order = 3;
  theory::LossyCheckConfig lossy;
  /// Attach the brute-force assignment landscape for a tiny instance built
  /// from the first two domains.
  bool tiny_oracle = false;
  int oracle_cells = 6;
  long max_assignments = 1'000'000;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  datagen::GenConfig gen;
  model::ModelConfig model;
  objectives::TrainConfig train;
  EvalConfig eval;
  AuditConfig audit;
  /// identical_masks deliberately violates mechanism variability.
  datagen::VariabilityMode variability = datagen::VariabilityMode::distinct_masks;
  std::string output_dir = "runs";
  std::string run_id = "run";
  int checkpoint_every = 10;  // epochs; the last epoch is always saved

  /// Nested validation plus cross-field consistency (dimensions, seeds).
  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const AuditConfig& c);
void from_json(const nlohmann::json& j, AuditConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Parses a config file. Syntax errors report line and column, schema
/// errors report the offending field; both raise InvalidConfig.
ExperimentConfig load_config(const fs::path& path);
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");

/// Applies CTRLNS_SEED (all three seeds) and CTRLNS_OUTPUT_DIR.
void apply_env_overrides(ExperimentConfig& c);
/// Sets the generator, model, training and audit seeds together and
/// suffixes run_id with "-seed<N>" so seeds get separate run directories.
void set_seed(ExperimentConfig& c, std::uint64_t seed);

std::string to_string(datagen::VariabilityMode m);
datagen::VariabilityMode parse_variability_mode(const std::string& s);

fs::path run_directory(const ExperimentConfig& c);
/// Default dataset location: <run dir>/dataset.bin.
fs::path default_dataset_path(const ExperimentConfig& c);

/// Exclusive lock on a run directory held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

nlohmann::json build_stamp();

/// Deterministic split of sample indices into (train, holdout).
std::pair<std::vector<long>, std::vector<long>> split_samples(long n_samples, double holdout_fraction,
                                                              std::uint64_t seed);

// ---- generate ----

struct GenerateSummary {
  fs::path dataset_path;
  fs::path system_path;
  std::string fingerprint;
  int n_domains = 0;
  int latent_dim = 0;
  int seq_len = 0;
  long n_samples = 0;
  std::vector<long> domain_counts;      // per label 1..U, over all steps
  std::vector<long> provenance_counts;  // markov_a, markov_b, uniform
};

nlohmann::json to_json(const GenerateSummary& s);

/// Writes the dataset container and the ground-truth system JSON beside it.
GenerateSummary cmd_generate(const ExperimentConfig& c, const fs::path& dataset_path);

fs::path system_path_for(const fs::path& dataset_path);

// ---- train ----

struct TrainOptions {
  bool resume = false;
  std::optional<int> eval_every;  // overrides the config when set
  /// Progress hook, called after each epoch with its holdout metrics (when
  /// evaluated).
  std::function<void(const objectives::EpochRecord&)> on_epoch;
};

struct RunArtifact {
  fs::path run_dir;
  std::vector<objectives::EpochRecord> history;
  metrics::MetricsReport final_metrics;
  bool has_final_metrics = false;
  std::string dataset_fingerprint;
};

/// Trains into run_directory(c). Writes config.json, build.json,
/// loss_history.csv, epoch_metrics.csv, summary.json, metrics.json and
/// checkpoints. Throws InvalidConfig on a dataset/config mismatch and
/// NumericError on a non-finite loss (after recording the failure).
RunArtifact cmd_train(const ExperimentConfig& c, const fs::path& dataset_path, const TrainOptions& opt = {});

// ---- eval ----

/// MetricsReport from explicit estimates; the common core of cmd_eval.
metrics::MetricsReport metrics_from_estimates(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z,
                                              std::span<const int> u_hat, std::span<const int> u, int n_labels,
                                              metrics::CorrMode mode);

nlohmann::json metrics_json(const metrics::MetricsReport& r, const std::string& run_id);

/// Evaluates the last checkpoint of a run on the run's holdout split and
/// writes eval_metrics.json.
metrics::MetricsReport cmd_eval(const fs::path& run_dir, const fs::path& dataset_path);

// ---- audit ----

struct SupportCheck {
  int domain = 0;
  bool matches = false;
  Eigen::MatrixXi mask;
  theory::SupportMatrix estimated;
};

struct AuditReport {
  std::string fingerprint;
  std::vector<SupportCheck> supports;
  std::vector<theory::PairVerdict> variability;
  std::vector<theory::LossyReport> lossy;
  datagen::MixingReport mixing;
  std::optional<theory::OracleReport> oracle;
  theory::Verdict support_verdict = theory::Verdict::inconclusive;
  theory::Verdict variability_verdict = theory::Verdict::inconclusive;
  theory::Verdict lossy_verdict = theory::Verdict::inconclusive;
  theory::Verdict weak_diversity_verdict = theory::Verdict::inconclusive;
  theory::Verdict mixing_verdict = theory::Verdict::inconclusive;
  theory::Verdict overall = theory::Verdict::inconclusive;
};

nlohmann::json to_json(const AuditReport& r);

AuditReport audit_system(const datagen::GroundTruthSystem& sys, const AuditConfig& cfg);

/// Accepts a dataset container (its system JSON must sit beside it) or a
/// system JSON file.
AuditReport cmd_audit(const fs::path& input, const AuditConfig& cfg);

// ---- report ----

struct RunSummary {
  std::string run_id;
  fs::path run_dir;
  double mcc = 0.0;
  double mcc_other = 0.0;
  double acc = 0.0;
  int epochs = 0;
  double final_loss = 0.0;
  std::optional<int> acc_cross;
  std::optional<int> mcc_cross;
  bool acc_first = false;
};

RunSummary read_run_summary(const fs::path& run_dir);

struct AggregateRow {
  std::string metric;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  int n = 0;
};

std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& runs);

std::string report_csv(const std::vector<RunSummary>& runs, const std::vector<AggregateRow>& agg);
std::string report_markdown(const std::vector<RunSummary>& runs, const std::vector<AggregateRow>& agg);

/// SVG line chart of the four loss terms and the total per epoch.
std::string loss_curve_svg(const fs::path& run_dir);
/// SVG of Acc and MCC per evaluated epoch with threshold crossings marked.
std::string phase_chart_svg(const fs::path& run_dir);

struct ReportOutput {
  std::vector<RunSummary> runs;
  std::vector<AggregateRow> aggregate;
  std::vector<fs::path> files;
};

ReportOutput cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool plots = true);

}  // namespace ctrlns::harness
