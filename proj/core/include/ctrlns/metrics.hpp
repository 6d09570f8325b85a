#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctrlns::metrics {

struct Assignment {
  std::vector<int> col_for_row;  // row r is matched to column col_for_row[r]
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square matrix (Hungarian algorithm,
/// O(n^3)). Throws std::invalid_argument for non-square or non-finite input.
Assignment linear_sum_assignment(const Eigen::MatrixXd& cost);

enum class CorrMode { pearson, spearman };
std::string to_string(CorrMode m);
CorrMode parse_corr_mode(const std::string& s);

struct MccResult {
  double value = 0.0;              // 100 * mean matched |corr|
  CorrMode mode = CorrMode::spearman;
  std::vector<int> permutation;    // true component i matched to estimate permutation[i]
  std::vector<double> matched;     // |corr| per true component
  Eigen::MatrixXd abs_corr;        // (true x estimate)
  std::vector<std::string> warnings;
};

/// Columns are components, rows are pooled samples.
MccResult mcc(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z, CorrMode mode = CorrMode::spearman);

/// Average ranks (ties share their mean rank), 1-based.
Eigen::VectorXd ranks(const Eigen::VectorXd& v);
/// |corr| between every column of a and every column of b; constant
/// columns give 0. `constant_cols` receives indices (a first, then b offset
/// by a.cols()) of constant columns.
Eigen::MatrixXd abs_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, CorrMode mode,
                                std::vector<int>* constant_cols = nullptr);

struct DomainAccResult {
  double accuracy = 0.0;           // percent
  std::vector<int> sigma;          // estimated label k (1-based) -> true label sigma[k-1]
  Eigen::MatrixXi confusion;       // rows: true label, cols: mapped estimate
};

/// Labels in 1..U. Best label permutation found by assignment on the
/// confusion matrix.
DomainAccResult domain_accuracy(std::span<const int> u_hat, std::span<const int> u, int n_domains);

struct EpochMetrics {
  int epoch = 0;
  double acc = 0.0;
  double mcc = 0.0;
};

struct PhaseReport {
  double acc_threshold = 90.0;
  double mcc_threshold = 90.0;
  std::optional<int> acc_cross;  // first epoch with acc >= threshold
  std::optional<int> mcc_cross;
  int first_epoch = 0;
  int last_epoch = 0;
  /// Acc crosses, and MCC either crosses strictly later or never does.
  bool acc_first = false;
  /// Phase ranges [begin, end]; unset end means open-ended.
  struct Range {
    std::optional<int> begin;
    std::optional<int> end;
  };
  Range phase1, phase2, phase3;
};

PhaseReport phase_report(const std::vector<EpochMetrics>& history, double acc_threshold = 90.0,
                         double mcc_threshold = 90.0);

struct MetricsReport {
  MccResult mcc;
  std::optional<MccResult> mcc_other;  // the other correlation mode
  DomainAccResult acc;
  std::optional<PhaseReport> phases;
};

nlohmann::json to_json(const PhaseReport& p);
nlohmann::json to_json(const MetricsReport& r);

}  // namespace ctrlns::metrics
