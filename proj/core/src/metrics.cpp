#include "ctrlns/metrics.hpp"

#include "ctrlns/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ctrlns::metrics {

Assignment linear_sum_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("linear_sum_assignment: matrix must be square");
  if (!cost.allFinite()) throw std::invalid_argument("linear_sum_assignment: matrix must be finite");
  Assignment out;
  if (n == 0) return out;

  // Shortest augmenting path formulation with row/column potentials
  // (1-based internally; column 0 is a sentinel).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  out.col_for_row.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) out.col_for_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (int r = 0; r < n; ++r) out.cost += cost(r, out.col_for_row[static_cast<std::size_t>(r)]);
  return out;
}

std::string to_string(CorrMode m) { return m == CorrMode::pearson ? "pearson" : "spearman"; }

CorrMode parse_corr_mode(const std::string& s) {
  if (s == "pearson") return CorrMode::pearson;
  if (s == "spearman") return CorrMode::spearman;
  throw InvalidConfig("unknown correlation mode: " + s);
}

Eigen::VectorXd ranks(const Eigen::VectorXd& v) {
  const auto n = v.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&v](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });
  Eigen::VectorXd r(n);
  for (Eigen::Index k = 0; k < n;) {
    Eigen::Index e = k;
    while (e + 1 < n && v(idx[static_cast<std::size_t>(e + 1)]) == v(idx[static_cast<std::size_t>(k)])) ++e;
    const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
    for (Eigen::Index m = k; m <= e; ++m) r(idx[static_cast<std::size_t>(m)]) = avg;
    k = e + 1;
  }
  return r;
}

Eigen::MatrixXd abs_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, CorrMode mode,
                                std::vector<int>* constant_cols) {
  if (a.rows() != b.rows()) throw std::invalid_argument("abs_correlation: row count mismatch");
  auto prepare = [mode](const Eigen::MatrixXd& m, std::vector<bool>& constant) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    constant.assign(static_cast<std::size_t>(m.cols()), false);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      Eigen::VectorXd col = mode == CorrMode::spearman ? ranks(m.col(c)) : Eigen::VectorXd(m.col(c));
      col.array() -= col.mean();
      const double norm = col.norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        constant[static_cast<std::size_t>(c)] = true;
        col.setZero();
      } else {
        col /= norm;
      }
      out.col(c) = col;
    }
    return out;
  };
  std::vector<bool> ca, cb;
  const Eigen::MatrixXd na = prepare(a, ca);
  const Eigen::MatrixXd nb = prepare(b, cb);
  if (constant_cols) {
    for (std::size_t k = 0; k < ca.size(); ++k) {
      if (ca[k]) constant_cols->push_back(static_cast<int>(k));
    }
    for (std::size_t k = 0; k < cb.size(); ++k) {
      if (cb[k]) constant_cols->push_back(static_cast<int>(ca.size() + k));
    }
  }
  return (na.transpose() * nb).cwiseAbs().cwiseMin(1.0);
}

MccResult mcc(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z, CorrMode mode) {
  if (z_hat.rows() != z.rows() || z_hat.cols() != z.cols()) throw std::invalid_argument("mcc: shape mismatch");
  if (z.rows() < 3) throw std::invalid_argument("mcc: need at least 3 samples");
  MccResult r;
  r.mode = mode;
  std::vector<int> constant;
  r.abs_corr = abs_correlation(z, z_hat, mode, &constant);
  for (int c : constant) {
    const bool is_true = c < z.cols();
    r.warnings.push_back(std::string(is_true ? "true" : "estimated") + " component " +
                         std::to_string(is_true ? c : c - static_cast<int>(z.cols())) +
                         " is constant; its correlations are set to 0");
  }
  const Assignment a = linear_sum_assignment(-r.abs_corr);
  r.permutation = a.col_for_row;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    const double c = r.abs_corr(i, r.permutation[static_cast<std::size_t>(i)]);
    r.matched.push_back(c);
    total += c;
  }
  r.value = 100.0 * total / static_cast<double>(z.cols());
  return r;
}

DomainAccResult domain_accuracy(std::span<const int> u_hat, std::span<const int> u, int n_domains) {
  if (u_hat.size() != u.size()) throw std::invalid_argument("domain_accuracy: label arrays differ in length");
  if (n_domains < 1) throw std::invalid_argument("domain_accuracy: need at least one domain");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(n_domains, n_domains);  // (true, estimated)
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (u[k] < 1 || u[k] > n_domains || u_hat[k] < 1 || u_hat[k] > n_domains) {
      throw std::invalid_argument("domain_accuracy: label out of range");
    }
    ++counts(u[k] - 1, u_hat[k] - 1);
  }
  // Maximum-weight matching of estimated labels to true labels.
  const Assignment a = linear_sum_assignment(-counts.transpose().cast<double>());
  DomainAccResult r;
  r.sigma.resize(static_cast<std::size_t>(n_domains));
  r.confusion = Eigen::MatrixXi::Zero(n_domains, n_domains);
  long hits = 0;
  for (int k = 0; k < n_domains; ++k) {
    const int t = a.col_for_row[static_cast<std::size_t>(k)];
    r.sigma[static_cast<std::size_t>(k)] = t + 1;
    r.confusion.col(t) = counts.col(k);
    hits += counts(t, k);
  }
  r.accuracy = u.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(u.size());
  return r;
}

PhaseReport phase_report(const std::vector<EpochMetrics>& history, double acc_threshold, double mcc_threshold) {
  PhaseReport p;
  p.acc_threshold = acc_threshold;
  p.mcc_threshold = mcc_threshold;
  if (history.empty()) return p;
  p.first_epoch = history.front().epoch;
  p.last_epoch = history.back().epoch;
  for (const auto& h : history) {
    if (!p.acc_cross && h.acc >= acc_threshold) p.acc_cross = h.epoch;
    if (!p.mcc_cross && h.mcc >= mcc_threshold) p.mcc_cross = h.epoch;
  }
  p.acc_first = p.acc_cross && (!p.mcc_cross || *p.acc_cross < *p.mcc_cross);
  // Phase 1 runs until the first crossing, phase 2 until the second, and
  // phase 3 afterwards; missing crossings leave ranges open.
  std::optional<int> first, second;
  if (p.acc_cross && p.mcc_cross) {
    first = std::min(*p.acc_cross, *p.mcc_cross);
    second = std::max(*p.acc_cross, *p.mcc_cross);
  } else {
    first = p.acc_cross ? p.acc_cross : p.mcc_cross;
  }
  p.phase1.begin = p.first_epoch;
  if (first) {
    p.phase1.end = *first - 1;
    p.phase2.begin = *first;
  }
  if (second) {
    p.phase2.end = *second - 1;
    p.phase3.begin = *second;
    p.phase3.end = p.last_epoch;
  }
  return p;
}

namespace {

nlohmann::json opt_json(const std::optional<int>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json range_json(const PhaseReport::Range& r) { return {{"begin", opt_json(r.begin)}, {"end", opt_json(r.end)}}; }

}  // namespace

nlohmann::json to_json(const PhaseReport& p) {
  return {{"acc_threshold", p.acc_threshold}, {"mcc_threshold", p.mcc_threshold}, {"acc_cross", opt_json(p.acc_cross)},
          {"mcc_cross", opt_json(p.mcc_cross)}, {"acc_first", p.acc_first},         {"phase1", range_json(p.phase1)},
          {"phase2", range_json(p.phase2)},     {"phase3", range_json(p.phase3)}};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mcc"] = r.mcc.value;
  j["mcc_mode"] = to_string(r.mcc.mode);
  j["permutation"] = r.mcc.permutation;
  j["matched_correlations"] = r.mcc.matched;
  if (r.mcc_other) j["mcc_" + to_string(r.mcc_other->mode)] = r.mcc_other->value;
  j["acc"] = r.acc.accuracy;
  j["sigma"] = r.acc.sigma;
  nlohmann::json conf = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.acc.confusion.rows(); ++i) {
    std::vector<int> row(static_cast<std::size_t>(r.acc.confusion.cols()));
    for (Eigen::Index c = 0; c < r.acc.confusion.cols(); ++c) row[static_cast<std::size_t>(c)] = r.acc.confusion(i, c);
    conf.push_back(row);
  }
  j["confusion"] = std::move(conf);
  j["phases"] = r.phases ? to_json(*r.phases) : nlohmann::json(nullptr);
  std::vector<std::string> warnings = r.mcc.warnings;
  j["warnings"] = warnings;
  return j;
}

}  // namespace ctrlns::metrics
