#include "ctrlns/theory.hpp"

#include "ctrlns/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace ctrlns::theory {

namespace {

Eigen::MatrixXi or_all(const std::vector<Eigen::MatrixXi>& ms) {
  Eigen::MatrixXi out = Eigen::MatrixXi::Zero(ms.front().rows(), ms.front().cols());
  for (const auto& m : ms) out = (out.array() != 0 || m.array() != 0).cast<int>();
  return out;
}

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

nlohmann::json int_matrix_json(const Eigen::MatrixXi& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<int> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

// Uniform point in an n-ball of the given radius.
Eigen::VectorXd ball_offset(int n, double radius, Rng& rng) {
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d(i) = rng.normal();
  const double norm = d.norm();
  if (norm == 0.0) return Eigen::VectorXd::Zero(n);
  return d * (radius * std::pow(rng.uniform(), 1.0 / n) / norm);
}

}  // namespace

int SupportMatrix::uncertain_count() const {
  if (max_abs.size() == 0) return 0;
  return static_cast<int>(max_abs.array().isNaN().count());
}

SupportMatrix make_support(const Eigen::MatrixXi& entries, int order) {
  SupportMatrix m;
  m.entries = (entries.array() != 0).cast<int>();
  m.order = order;
  m.threshold = 0.0;
  m.max_abs = m.entries.cast<double>();
  return m;
}

int complexity(const Eigen::MatrixXi& m) { return static_cast<int>((m.array() != 0).count()); }
int complexity(const SupportMatrix& m) { return complexity(m.entries); }

SupportMatrix binary_or(const SupportMatrix& a, const SupportMatrix& b) {
  if (a.entries.rows() != b.entries.rows() || a.entries.cols() != b.entries.cols()) {
    throw std::invalid_argument("binary_or: shape mismatch");
  }
  if (a.order != b.order) throw std::invalid_argument("binary_or: order mismatch");
  SupportMatrix r = a;
  r.entries = (a.entries.array() != 0 || b.entries.array() != 0).cast<int>();
  if (a.max_abs.size() == r.entries.size() && b.max_abs.size() == r.entries.size()) {
    r.max_abs = a.max_abs.cwiseMax(b.max_abs);
  } else {
    r.max_abs = r.entries.cast<double>();
  }
  r.n_eval_points = a.n_eval_points + b.n_eval_points;
  return r;
}

Eigen::MatrixXd pure_partials(const JetMap& f, const Eigen::VectorXd& point, int order) {
  if (order < 1) throw std::invalid_argument("pure_partials: order must be >= 1");
  const auto n = point.size();
  const auto k = static_cast<std::size_t>(order);
  Eigen::MatrixXd out;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Jet> in;
    in.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index c = 0; c < n; ++c) in.push_back(c == i ? Jet::variable(point(c), k) : Jet(point(c), k));
    const std::vector<Jet> y = f(in);
    if (out.size() == 0) out.resize(n, static_cast<Eigen::Index>(y.size()));
    for (std::size_t j = 0; j < y.size(); ++j) out(i, static_cast<Eigen::Index>(j)) = y[j].derivative(k);
  }
  return out;
}

SupportMatrix higher_order_support(const JetMap& f, int order, const std::vector<Eigen::VectorXd>& eval_points,
                                   double threshold) {
  if (eval_points.empty()) throw std::invalid_argument("support estimation needs at least one evaluation point");
  SupportMatrix s;
  s.order = order;
  s.threshold = threshold;
  s.n_eval_points = static_cast<int>(eval_points.size());
  for (const auto& p : eval_points) {
    const Eigen::MatrixXd d = pure_partials(f, p, order);
    if (s.max_abs.size() == 0) s.max_abs = Eigen::MatrixXd::Zero(d.rows(), d.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.cols(); ++c) {
        const double v = std::abs(d(r, c));
        if (!std::isfinite(v)) {
          s.max_abs(r, c) = std::numeric_limits<double>::quiet_NaN();
        } else if (!std::isnan(s.max_abs(r, c))) {
          s.max_abs(r, c) = std::max(s.max_abs(r, c), v);
        }
      }
    }
  }
  if (order == 1 && s.uncertain_count() > 0) throw NumericError("jacobian_support: non-finite partial derivative");
  // Blown-up entries are reported as present and flagged through max_abs.
  s.entries = (s.max_abs.array().isNaN() || s.max_abs.array() > threshold).cast<int>();
  return s;
}

JetMap transition_jet_map(const datagen::DomainTransition& tr) {
  return [&tr](const std::vector<Jet>& z) { return tr.mean<Jet>(std::span<const Jet>(z)); };
}

RealMap transition_real_map(const datagen::DomainTransition& tr) {
  return [&tr](const Eigen::VectorXd& z) {
    const std::vector<double> zz(z.data(), z.data() + z.size());
    const std::vector<double> y = tr.mean<double>(std::span<const double>(zz));
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())));
  };
}

std::vector<Eigen::VectorXd> stationary_points(const datagen::GroundTruthSystem& sys, int count, Rng& rng,
                                               int burn_in) {
  const int n = sys.latent_dim;
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  for (int step = 0; static_cast<int>(out.size()) < count; ++step) {
    const auto u = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(sys.n_domains())));
    Eigen::VectorXd next = transition_real_map(sys.transitions[u])(z);
    for (int i = 0; i < n; ++i) next(i) += sys.transitions[u].noise_std(i, sys.noise_scale) * rng.normal();
    z = std::move(next);
    if (step >= burn_in) out.push_back(z);
  }
  return out;
}

std::vector<PairVerdict> mechanism_variability_check(const std::vector<std::vector<SupportMatrix>>& supports) {
  std::vector<PairVerdict> out;
  for (std::size_t a = 0; a < supports.size(); ++a) {
    for (std::size_t b = a + 1; b < supports.size(); ++b) {
      PairVerdict v;
      v.a = static_cast<int>(a);
      v.b = static_cast<int>(b);
      const std::size_t k_max = std::min(supports[a].size(), supports[b].size());
      for (std::size_t k = 0; k < k_max; ++k) {
        if (supports[a][k].entries != supports[b][k].entries) {
          v.pass = true;
          v.min_order = supports[a][k].order;
          break;
        }
      }
      out.push_back(v);
    }
  }
  return out;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

Verdict combine(const std::vector<Verdict>& vs) {
  if (std::any_of(vs.begin(), vs.end(), [](Verdict v) { return v == Verdict::fail; })) return Verdict::fail;
  if (std::any_of(vs.begin(), vs.end(), [](Verdict v) { return v == Verdict::inconclusive; })) return Verdict::inconclusive;
  return Verdict::pass;
}

LossyReport weakly_diverse_lossy_check(const JetMap& f, const Eigen::MatrixXi& support, const LossyCheckConfig& cfg) {
  const int n = static_cast<int>(support.rows());
  Rng rng(cfg.seed);
  LossyReport rep;
  std::vector<Verdict> edge_verdicts;
  std::vector<Verdict> source_verdicts;

  for (int i = 0; i < n; ++i) {
    std::vector<int> children;
    for (int j = 0; j < n; ++j) {
      if (support(i, j) != 0) children.push_back(j);
    }
    if (children.empty()) continue;
    const std::size_t m = children.size();
    std::vector<EdgeWitness> edges(m);
    for (std::size_t c = 0; c < m; ++c) {
      edges[c].source = i;
      edges[c].child = children[c];
      edges[c].min_abs_partial = std::numeric_limits<double>::infinity();
    }
    SourceDiversity div;
    div.source = i;
    div.children = children;
    div.outside_witnesses.assign(m, std::nullopt);

    const double width = 2.0 * cfg.range / cfg.samples_per_source;
    std::vector<bool> flat(m);
    for (int s = 0; s < cfg.samples_per_source; ++s) {
      Eigen::VectorXd center(n);
      for (int d = 0; d < n; ++d) center(d) = rng.normal();
      center(i) = -cfg.range + (s + rng.uniform()) * width;
      std::fill(flat.begin(), flat.end(), true);
      for (int b = 0; b <= cfg.ball_points; ++b) {
        const Eigen::VectorXd p = b == 0 ? center : Eigen::VectorXd(center + ball_offset(n, cfg.radius, rng));
        std::vector<Jet> in;
        in.reserve(static_cast<std::size_t>(n));
        for (int d = 0; d < n; ++d) in.push_back(d == i ? Jet::variable(p(d), 1) : Jet(p(d), 1));
        const std::vector<Jet> y = f(in);
        ++rep.evaluations;
        for (std::size_t c = 0; c < m; ++c) {
          const double g = std::abs(y[static_cast<std::size_t>(children[c])].derivative(1));
          edges[c].min_abs_partial = std::min(edges[c].min_abs_partial, g);
          if (!(g <= cfg.threshold)) flat[c] = false;
        }
      }
      const bool all_flat = std::all_of(flat.begin(), flat.end(), [](bool v) { return v; });
      if (all_flat && !div.intersection_witness) div.intersection_witness = center;
      for (std::size_t c = 0; c < m; ++c) {
        if (!flat[c]) continue;
        if (!edges[c].witness) edges[c].witness = center;
        if (!all_flat && !div.outside_witnesses[c]) div.outside_witnesses[c] = center;
      }
    }

    bool any_edge_fail = false;
    for (auto& e : edges) {
      if (e.witness) {
        e.verdict = Verdict::pass;
      } else if (e.min_abs_partial > cfg.fail_factor * cfg.threshold) {
        e.verdict = Verdict::fail;
        any_edge_fail = true;
      } else {
        e.verdict = Verdict::inconclusive;
      }
      edge_verdicts.push_back(e.verdict);
      rep.edges.push_back(e);
    }
    const bool all_outside =
        std::all_of(div.outside_witnesses.begin(), div.outside_witnesses.end(), [](const auto& w) { return w.has_value(); });
    if (div.intersection_witness && all_outside) {
      div.verdict = Verdict::pass;
    } else if (m == 1 || any_edge_fail) {
      // A lone child's flat set always equals the intersection, so the
      // diversity condition cannot hold.
      div.verdict = Verdict::fail;
    } else {
      div.verdict = Verdict::inconclusive;
    }
    source_verdicts.push_back(div.verdict);
    rep.sources.push_back(std::move(div));
  }
  rep.lossy = combine(edge_verdicts);
  rep.weak_diversity = combine(source_verdicts);
  return rep;
}

std::vector<LossyReport> weakly_diverse_lossy_check(const datagen::GroundTruthSystem& sys, const LossyCheckConfig& cfg) {
  std::vector<LossyReport> out;
  for (std::size_t u = 0; u < sys.transitions.size(); ++u) {
    LossyCheckConfig c = cfg;
    c.seed = stream_seed(cfg.seed, u);
    out.push_back(weakly_diverse_lossy_check(transition_jet_map(sys.transitions[u]), sys.transitions[u].mask, c));
  }
  return out;
}

std::vector<int> canonical_assignment(const std::vector<int>& a) {
  std::map<int, int> relabel;
  std::vector<int> out;
  out.reserve(a.size());
  for (int v : a) {
    auto it = relabel.find(v);
    if (it == relabel.end()) it = relabel.emplace(v, static_cast<int>(relabel.size())).first;
    out.push_back(it->second);
  }
  return out;
}

long count_partitions(int cells, int labels) {
  // Stirling numbers of the second kind, summed over block counts <= labels.
  std::vector<std::vector<double>> s(static_cast<std::size_t>(cells) + 1,
                                     std::vector<double>(static_cast<std::size_t>(labels) + 1, 0.0));
  s[0][0] = 1.0;
  for (int c = 1; c <= cells; ++c) {
    for (int k = 1; k <= labels; ++k) {
      s[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] =
          k * s[static_cast<std::size_t>(c - 1)][static_cast<std::size_t>(k)] +
          s[static_cast<std::size_t>(c - 1)][static_cast<std::size_t>(k - 1)];
    }
  }
  double total = 0.0;
  for (int k = 0; k <= labels; ++k) total += s[static_cast<std::size_t>(cells)][static_cast<std::size_t>(k)];
  return total > static_cast<double>(std::numeric_limits<long>::max()) ? std::numeric_limits<long>::max()
                                                                       : static_cast<long>(total);
}

OracleReport assignment_oracle(const OracleInstance& inst) {
  const int cells = static_cast<int>(inst.cell_weights.size());
  const int domains = static_cast<int>(inst.supports.size());
  if (cells == 0 || static_cast<int>(inst.true_assignment.size()) != cells) {
    throw std::invalid_argument("assignment_oracle: need one true domain per cell");
  }
  if (domains == 0) throw std::invalid_argument("assignment_oracle: no domain supports");
  for (int d : inst.true_assignment) {
    if (d < 0 || d >= domains) throw std::invalid_argument("assignment_oracle: true assignment out of range");
  }
  const int labels = inst.n_labels > 0 ? inst.n_labels : domains;
  const long total = count_partitions(cells, labels);
  if (total > inst.max_assignments) {
    throw std::length_error("assignment_oracle: " + std::to_string(total) + " assignments exceed the bound of " +
                            std::to_string(inst.max_assignments));
  }
  double wsum = 0.0;
  for (double w : inst.cell_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("assignment_oracle: negative cell weight");
    wsum += w;
  }
  std::vector<double> p(inst.cell_weights.size());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = inst.cell_weights[c] / wsum;

  auto implied = [&](const std::vector<int>& a) {
    const int k = *std::max_element(a.begin(), a.end()) + 1;
    std::vector<Eigen::MatrixXi> sup(static_cast<std::size_t>(k),
                                     Eigen::MatrixXi::Zero(inst.supports[0].rows(), inst.supports[0].cols()));
    for (int c = 0; c < cells; ++c) {
      auto& s = sup[static_cast<std::size_t>(a[static_cast<std::size_t>(c)])];
      s = or_all({s, inst.supports[static_cast<std::size_t>(inst.true_assignment[static_cast<std::size_t>(c)])]});
    }
    return sup;
  };
  auto expected = [&](const std::vector<int>& a) {
    const auto sup = implied(a);
    double e = 0.0;
    for (int c = 0; c < cells; ++c) e += p[static_cast<std::size_t>(c)] * complexity(sup[static_cast<std::size_t>(a[static_cast<std::size_t>(c)])]);
    return e;
  };
  auto merged = [&](const std::vector<int>& a) {
    const auto sup = implied(a);
    std::vector<int> rep(sup.size());
    for (std::size_t l = 0; l < sup.size(); ++l) {
      rep[l] = static_cast<int>(l);
      for (std::size_t m = 0; m < l; ++m) {
        if (sup[m] == sup[l]) {
          rep[l] = rep[m];
          break;
        }
      }
    }
    std::vector<int> out(a.size());
    for (std::size_t c = 0; c < a.size(); ++c) out[c] = rep[static_cast<std::size_t>(a[c])];
    return canonical_assignment(out);
  };

  OracleReport r;
  const std::vector<int> truth = canonical_assignment(inst.true_assignment);
  r.true_complexity = expected(truth);
  r.landscape.reserve(static_cast<std::size_t>(total));

  // Restricted growth strings enumerate partitions without relabelings.
  std::vector<int> a(static_cast<std::size_t>(cells), 0);
  std::vector<int> mx(static_cast<std::size_t>(cells), 0);
  while (true) {
    r.landscape.push_back({a, expected(a)});
    int c = cells - 1;
    while (c > 0 && (a[static_cast<std::size_t>(c)] == labels - 1 ||
                     a[static_cast<std::size_t>(c)] > mx[static_cast<std::size_t>(c - 1)])) {
      --c;
    }
    if (c == 0) break;
    ++a[static_cast<std::size_t>(c)];
    mx[static_cast<std::size_t>(c)] = std::max(mx[static_cast<std::size_t>(c - 1)], a[static_cast<std::size_t>(c)]);
    for (int d = c + 1; d < cells; ++d) {
      a[static_cast<std::size_t>(d)] = 0;
      mx[static_cast<std::size_t>(d)] = mx[static_cast<std::size_t>(c)];
    }
  }

  r.min_complexity = std::numeric_limits<double>::infinity();
  for (const auto& e : r.landscape) r.min_complexity = std::min(r.min_complexity, e.expected_complexity);
  const double tol = 1e-12 * std::max(1.0, r.min_complexity);
  for (const auto& e : r.landscape) {
    if (e.expected_complexity <= r.min_complexity + tol) r.minimizers.push_back(e.assignment);
  }
  r.identifiable = r.minimizers.size() == 1 && r.minimizers.front() == truth;
  r.identifiable_after_merge =
      std::all_of(r.minimizers.begin(), r.minimizers.end(), [&](const auto& m) { return merged(m) == truth; });
  const int truth_labels = *std::max_element(truth.begin(), truth.end()) + 1;
  for (const auto& m : r.minimizers) {
    const int k = *std::max_element(m.begin(), m.end()) + 1;
    if (k <= truth_labels) continue;
    std::map<int, int> owner;
    bool refines = true;
    for (int c = 0; c < cells && refines; ++c) {
      auto [it, fresh] = owner.emplace(m[static_cast<std::size_t>(c)], truth[static_cast<std::size_t>(c)]);
      if (!fresh && it->second != truth[static_cast<std::size_t>(c)]) refines = false;
    }
    if (refines) r.mergeable.push_back(m);
  }
  return r;
}

void write_landscape_csv(const OracleReport& r, std::ostream& os) {
  os << "assignment_id,assignment,expected_complexity\n";
  for (std::size_t k = 0; k < r.landscape.size(); ++k) {
    os << k << ',';
    for (std::size_t c = 0; c < r.landscape[k].assignment.size(); ++c) {
      if (c) os << ' ';
      os << r.landscape[k].assignment[c];
    }
    os << ',' << r.landscape[k].expected_complexity << '\n';
  }
}

GaussianDomain GaussianDomain::linear(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& variance) {
  GaussianDomain d;
  d.mean = [a, b](const Eigen::VectorXd& z) -> Eigen::VectorXd { return a * z + b; };
  d.jacobian = [a](const Eigen::VectorXd&) -> Eigen::MatrixXd { return a; };
  d.variance = variance;
  return d;
}

VariabilityReport sufficient_variability_check(const std::vector<GaussianDomain>& domains,
                                               const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& probes) {
  if (domains.empty() || probes.empty()) throw std::invalid_argument("sufficient_variability_check: empty input");
  const int n = static_cast<int>(probes.front().second.size());
  const int u = static_cast<int>(domains.size());
  const int width = n * u + (u - 1);
  VariabilityReport rep;
  rep.required = 2 * n;
  rep.stacked = Eigen::MatrixXd::Zero(2 * n, width * static_cast<int>(probes.size()));
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const auto& [z_prev, z] = probes[p];
    const int off = width * static_cast<int>(p);
    std::vector<Eigen::VectorXd> mean(static_cast<std::size_t>(u));
    std::vector<Eigen::MatrixXd> jac(static_cast<std::size_t>(u));
    for (int d = 0; d < u; ++d) {
      mean[static_cast<std::size_t>(d)] = domains[static_cast<std::size_t>(d)].mean(z_prev);
      jac[static_cast<std::size_t>(d)] = domains[static_cast<std::size_t>(d)].jacobian(z_prev);
    }
    for (int k = 0; k < n; ++k) {
      // eta = log N(z_k; f_k, var_k):
      //   d eta / d z_k = -(z_k - f_k) / var_k,  d2 eta / d z_k2 = -1 / var_k,
      //   d2 eta / d z_k d z_prev = grad f_k / var_k,  third-order mixed = 0.
      for (int d = 0; d < u; ++d) {
        const double var = domains[static_cast<std::size_t>(d)].variance(k);
        rep.stacked.block(k, off + d * n, 1, n) = jac[static_cast<std::size_t>(d)].row(k) / var;
      }
      for (int d = 0; d + 1 < u; ++d) {
        const double v0 = domains[static_cast<std::size_t>(d)].variance(k);
        const double v1 = domains[static_cast<std::size_t>(d + 1)].variance(k);
        rep.stacked(k, off + n * u + d) = -1.0 / v1 + 1.0 / v0;
        const double g0 = -(z(k) - mean[static_cast<std::size_t>(d)](k)) / v0;
        const double g1 = -(z(k) - mean[static_cast<std::size_t>(d + 1)](k)) / v1;
        rep.stacked(n + k, off + n * u + d) = g1 - g0;
      }
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rep.stacked);
  rep.singular_values = svd.singularValues();
  const double smax = rep.singular_values.size() ? rep.singular_values(0) : 0.0;
  rep.rank = 0;
  for (Eigen::Index k = 0; k < rep.singular_values.size(); ++k) {
    if (smax > 0.0 && rep.singular_values(k) > 1e-8 * smax) ++rep.rank;
  }
  rep.pass = rep.rank == rep.required;
  return rep;
}

nlohmann::json to_json(const SupportMatrix& m) {
  return {{"entries", int_matrix_json(m.entries)},
          {"order", m.order},
          {"threshold", m.threshold},
          {"n_eval_points", m.n_eval_points},
          {"complexity", complexity(m)},
          {"uncertain_entries", m.uncertain_count()}};
}

nlohmann::json to_json(const LossyReport& r) {
  nlohmann::json j;
  j["lossy"] = to_string(r.lossy);
  j["weak_diversity"] = to_string(r.weak_diversity);
  j["evaluations"] = r.evaluations;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : r.edges) {
    nlohmann::json ej{{"source", e.source},
                      {"child", e.child},
                      {"verdict", to_string(e.verdict)},
                      {"min_abs_partial", e.min_abs_partial}};
    ej["witness"] = e.witness ? vec_json(*e.witness) : nlohmann::json(nullptr);
    edges.push_back(std::move(ej));
  }
  j["edges"] = std::move(edges);
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : r.sources) {
    nlohmann::json sj{{"source", s.source}, {"verdict", to_string(s.verdict)}, {"children", s.children}};
    sj["intersection_witness"] = s.intersection_witness ? vec_json(*s.intersection_witness) : nlohmann::json(nullptr);
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& w : s.outside_witnesses) outs.push_back(w ? vec_json(*w) : nlohmann::json(nullptr));
    sj["outside_witnesses"] = std::move(outs);
    sources.push_back(std::move(sj));
  }
  j["sources"] = std::move(sources);
  return j;
}

nlohmann::json to_json(const OracleReport& r, bool include_landscape) {
  nlohmann::json j{{"min_complexity", r.min_complexity},
                   {"true_complexity", r.true_complexity},
                   {"minimizers", r.minimizers},
                   {"identifiable", r.identifiable},
                   {"identifiable_after_merge", r.identifiable_after_merge},
                   {"mergeable", r.mergeable},
                   {"n_assignments", r.landscape.size()}};
  if (include_landscape) {
    nlohmann::json land = nlohmann::json::array();
    for (const auto& e : r.landscape) land.push_back({{"assignment", e.assignment}, {"expected_complexity", e.expected_complexity}});
    j["landscape"] = std::move(land);
  }
  return j;
}

nlohmann::json to_json(const VariabilityReport& r) {
  return {{"rank", r.rank}, {"required", r.required}, {"pass", r.pass}, {"singular_values", vec_json(r.singular_values)}};
}

}  // namespace ctrlns::theory
