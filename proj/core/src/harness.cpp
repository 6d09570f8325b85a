#include "ctrlns/harness.hpp"

#include "ctrlns/error.hpp"

#include <unistd.h>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace ctrlns::harness {

namespace {

using nlohmann::json;

template <class T>
void get_field(const json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception&) {
    throw InvalidConfig(where + key + ": wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidConfig(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig(where + ": unknown key '" + key + "'");
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file so readers never see a partial artifact.
void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  }
  fs::rename(tmp, p);
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

json mask_json(const Eigen::MatrixXi& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json optional_int(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json record_json(const objectives::EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"recon", r.loss.recon},
         {"kld", r.loss.kld},
         {"transition", r.loss.transition},
         {"sparsity", r.loss.sparsity},
         {"total", r.loss.total},
         {"temperature", r.temperature},
         {"hard", r.hard}};
  if (r.metrics) {
    j["acc"] = r.metrics->acc;
    j["mcc"] = r.metrics->mcc;
  }
  return j;
}

objectives::EpochRecord record_from_json(const json& j) {
  objectives::EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.loss.recon = j.at("recon").get<double>();
  r.loss.kld = j.at("kld").get<double>();
  r.loss.transition = j.at("transition").get<double>();
  r.loss.sparsity = j.at("sparsity").get<double>();
  r.loss.total = j.at("total").get<double>();
  r.temperature = j.at("temperature").get<double>();
  r.hard = j.at("hard").get<bool>();
  if (j.contains("acc")) r.metrics = metrics::EpochMetrics{r.epoch, j.at("acc").get<double>(), j.at("mcc").get<double>()};
  return r;
}

std::string loss_csv(const std::vector<objectives::EpochRecord>& h) {
  std::string out = "epoch,recon,kld,transition,sparsity,total,temperature,hard\n";
  for (const auto& r : h) {
    out += std::to_string(r.epoch) + "," + num(r.loss.recon) + "," + num(r.loss.kld) + "," + num(r.loss.transition) +
           "," + num(r.loss.sparsity) + "," + num(r.loss.total) + "," + num(r.temperature) + "," +
           (r.hard ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<metrics::EpochMetrics> epoch_metrics(const std::vector<objectives::EpochRecord>& h) {
  std::vector<metrics::EpochMetrics> out;
  for (const auto& r : h) {
    if (r.metrics) out.push_back(*r.metrics);
  }
  return out;
}

std::string metrics_csv(const std::vector<objectives::EpochRecord>& h) {
  std::string out = "epoch,acc,mcc\n";
  for (const auto& m : epoch_metrics(h)) out += std::to_string(m.epoch) + "," + num(m.acc) + "," + num(m.mcc) + "\n";
  return out;
}

// Rows of a simple numeric CSV with a header line.
std::vector<std::vector<double>> read_csv(const fs::path& p, std::vector<std::string>* header = nullptr) {
  std::istringstream in(read_text(p));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      if (header) *header = cells;
      first = false;
      continue;
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(std::strtod(c.c_str(), nullptr));
    rows.push_back(row);
  }
  return rows;
}

void check_dataset_matches(const datagen::LoadedDataset& ld, const ExperimentConfig& c) {
  for (const auto& w : ld.warnings) throw InvalidConfig("dataset fingerprint mismatch: " + w);
  if (json(ld.dataset.gen_config) != json(c.gen)) {
    throw InvalidConfig("dataset fingerprint mismatch: dataset was generated with a different gen config");
  }
}

json train_identity(const json& snapshot) {
  json j = snapshot;
  j.erase("eval");
  j.erase("audit");
  j.erase("output_dir");
  j.erase("checkpoint_every");
  j["train"].erase("eval_every");
  return j;
}

std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Minimal line-chart panel for the report plots.
struct Panel {
  std::string title;
  double x0 = 0, y0 = 0, w = 0, h = 0;  // pixel frame
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }

  void fit(const std::vector<double>& xs, const std::vector<std::vector<double>>& ys) {
    xmin = xs.empty() ? 0 : *std::min_element(xs.begin(), xs.end());
    xmax = xs.empty() ? 1 : *std::max_element(xs.begin(), xs.end());
    if (xmax <= xmin) xmax = xmin + 1;
    ymin = std::numeric_limits<double>::infinity();
    ymax = -ymin;
    for (const auto& s : ys) {
      for (double v : s) {
        if (!std::isfinite(v)) continue;
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
    if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
    if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }

  std::string frame() const {
    std::ostringstream s;
    s << "<rect x='" << x0 << "' y='" << y0 << "' width='" << w << "' height='" << h
      << "' fill='none' stroke='#444'/>\n";
    s << "<text x='" << x0 << "' y='" << y0 - 6 << "' font-size='12'>" << xml_escape(title) << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double yv = ymin + (ymax - ymin) * k / 4.0;
      const double xv = xmin + (xmax - xmin) * k / 4.0;
      s << "<text x='" << x0 - 4 << "' y='" << py(yv) + 4 << "' font-size='9' text-anchor='end'>"
        << xml_escape(fixed(yv, std::abs(ymax - ymin) < 1 ? 4 : 2)) << "</text>\n";
      s << "<text x='" << px(xv) << "' y='" << y0 + h + 12 << "' font-size='9' text-anchor='middle'>"
        << fixed(xv, 0) << "</text>\n";
    }
    return s.str();
  }

  std::string line(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& color) const {
    std::ostringstream s;
    s << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (std::size_t k = 0; k < xs.size() && k < ys.size(); ++k) {
      if (std::isfinite(ys[k])) s << px(xs[k]) << "," << py(ys[k]) << " ";
    }
    s << "'/>\n";
    return s.str();
  }
};

std::string svg_open(double w, double h) {
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "' viewBox='0 0 " << w << " "
    << h << "' font-family='sans-serif'>\n<rect width='100%' height='100%' fill='white'/>\n";
  return s.str();
}

std::string svg_empty(const std::string& msg) {
  return svg_open(400, 80) + "<text x='20' y='45' font-size='14'>" + xml_escape(msg) + "</text>\n</svg>\n";
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(datagen::VariabilityMode m) {
  return m == datagen::VariabilityMode::distinct_masks ? "distinct_masks" : "identical_masks";
}

datagen::VariabilityMode parse_variability_mode(const std::string& s) {
  if (s == "distinct_masks") return datagen::VariabilityMode::distinct_masks;
  if (s == "identical_masks") return datagen::VariabilityMode::identical_masks;
  throw InvalidConfig("unknown variability_mode '" + s + "'");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = json{{"mcc_mode", metrics::to_string(c.mcc_mode)},
           {"eval_every_epochs", c.eval_every_epochs},
           {"holdout_fraction", c.holdout_fraction},
           {"acc_threshold", c.acc_threshold},
           {"mcc_threshold", c.mcc_threshold}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  const std::string w = "eval.";
  reject_unknown(j, {"mcc_mode", "eval_every_epochs", "holdout_fraction", "acc_threshold", "mcc_threshold"}, "eval");
  if (j.contains("mcc_mode")) {
    std::string mode;
    get_field(j, "mcc_mode", mode, w);
    try {
      c.mcc_mode = metrics::parse_corr_mode(mode);
    } catch (const std::exception&) {
      throw InvalidConfig("eval.mcc_mode: expected 'pearson' or 'spearman', got '" + mode + "'");
    }
  }
  get_field(j, "eval_every_epochs", c.eval_every_epochs, w);
  get_field(j, "holdout_fraction", c.holdout_fraction, w);
  get_field(j, "acc_threshold", c.acc_threshold, w);
  get_field(j, "mcc_threshold", c.mcc_threshold, w);
}

void to_json(nlohmann::json& j, const AuditConfig& c) {
  j = json{{"eval_points", c.eval_points},
           {"support_threshold", c.support_threshold},
           {"max_order", c.max_order},
           {"lossy",
            {{"samples_per_source", c.lossy.samples_per_source},
             {"range", c.lossy.range},
             {"radius", c.lossy.radius},
             {"ball_points", c.lossy.ball_points},
             {"threshold", c.lossy.threshold},
             {"fail_factor", c.lossy.fail_factor},
             {"seed", c.lossy.seed}}},
           {"tiny_oracle", c.tiny_oracle},
           {"oracle_cells", c.oracle_cells},
           {"max_assignments", c.max_assignments},
           {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AuditConfig& c) {
  const std::string w = "audit.";
  reject_unknown(j,
                 {"eval_points", "support_threshold", "max_order", "lossy", "tiny_oracle", "oracle_cells",
                  "max_assignments", "seed"},
                 "audit");
  get_field(j, "eval_points", c.eval_points, w);
  get_field(j, "support_threshold", c.support_threshold, w);
  get_field(j, "max_order", c.max_order, w);
  get_field(j, "tiny_oracle", c.tiny_oracle, w);
  get_field(j, "oracle_cells", c.oracle_cells, w);
  get_field(j, "max_assignments", c.max_assignments, w);
  get_field(j, "seed", c.seed, w);
  if (j.contains("lossy")) {
    const json& l = j.at("lossy");
    const std::string lw = "audit.lossy.";
    reject_unknown(l, {"samples_per_source", "range", "radius", "ball_points", "threshold", "fail_factor", "seed"},
                   "audit.lossy");
    get_field(l, "samples_per_source", c.lossy.samples_per_source, lw);
    get_field(l, "range", c.lossy.range, lw);
    get_field(l, "radius", c.lossy.radius, lw);
    get_field(l, "ball_points", c.lossy.ball_points, lw);
    get_field(l, "threshold", c.lossy.threshold, lw);
    get_field(l, "fail_factor", c.lossy.fail_factor, lw);
    get_field(l, "seed", c.lossy.seed, lw);
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = json{{"schema_version", kSchemaVersion},
           {"gen", c.gen},
           {"model", c.model},
           {"train", c.train},
           {"eval", c.eval},
           {"audit", c.audit},
           {"variability_mode", to_string(c.variability)},
           {"output_dir", c.output_dir},
           {"run_id", c.run_id},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  reject_unknown(j,
                 {"schema_version", "gen", "model", "train", "eval", "audit", "variability_mode", "output_dir",
                  "run_id", "checkpoint_every"},
                 "config");
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion) {
    throw InvalidConfig("config.schema_version: unsupported version " + j.at("schema_version").dump());
  }
  if (j.contains("gen")) c.gen = j.at("gen").get<datagen::GenConfig>();
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
  if (j.contains("train")) {
    c.train = j.at("train").get<objectives::TrainConfig>();
    if (j.at("train").contains("eval_every") && c.train.eval_every != c.eval.eval_every_epochs) {
      throw InvalidConfig("train.eval_every conflicts with eval.eval_every_epochs; set only the latter");
    }
  }
  c.train.eval_every = c.eval.eval_every_epochs;
  if (j.contains("audit")) c.audit = j.at("audit").get<AuditConfig>();
  if (j.contains("variability_mode")) {
    std::string mode;
    get_field(j, "variability_mode", mode, "config.");
    c.variability = parse_variability_mode(mode);
  }
  get_field(j, "output_dir", c.output_dir, "config.");
  get_field(j, "run_id", c.run_id, "config.");
  get_field(j, "checkpoint_every", c.checkpoint_every, "config.");
  c.validate();
}

void ExperimentConfig::validate() const {
  gen.validate();
  model.validate();
  train.validate();
  if (model.latent_dim != gen.latent_dim) {
    throw InvalidConfig("model.latent_dim (" + std::to_string(model.latent_dim) + ") must equal gen.latent_dim (" +
                        std::to_string(gen.latent_dim) + ")");
  }
  if (model.obs_dim != gen.obs_dim) {
    throw InvalidConfig("model.obs_dim (" + std::to_string(model.obs_dim) + ") must equal gen.obs_dim (" +
                        std::to_string(gen.obs_dim) + ")");
  }
  if (eval.eval_every_epochs < 0) throw InvalidConfig("eval.eval_every_epochs must be >= 0");
  if (!(eval.holdout_fraction > 0.0 && eval.holdout_fraction < 1.0)) {
    throw InvalidConfig("eval.holdout_fraction must lie in (0, 1)");
  }
  for (double t : {eval.acc_threshold, eval.mcc_threshold}) {
    if (!(t >= 0.0 && t <= 100.0)) throw InvalidConfig("eval thresholds must lie in [0, 100]");
  }
  if (audit.eval_points < 1) throw InvalidConfig("audit.eval_points must be >= 1");
  if (!(audit.support_threshold > 0.0)) throw InvalidConfig("audit.support_threshold must be > 0");
  if (audit.max_order < 1 || audit.max_order > 6) throw InvalidConfig("audit.max_order must lie in [1, 6]");
  if (audit.oracle_cells < 2 || audit.oracle_cells > 12) throw InvalidConfig("audit.oracle_cells must lie in [2, 12]");
  if (audit.max_assignments < 1) throw InvalidConfig("audit.max_assignments must be >= 1");
  if (audit.lossy.samples_per_source < 2 || audit.lossy.ball_points < 1 || !(audit.lossy.range > 0) ||
      !(audit.lossy.radius > 0) || !(audit.lossy.threshold > 0) || !(audit.lossy.fail_factor >= 1)) {
    throw InvalidConfig("audit.lossy: sample counts, range, radius and threshold must be positive");
  }
  if (output_dir.empty()) throw InvalidConfig("output_dir must not be empty");
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw InvalidConfig("run_id must be a non-empty single path component");
  }
  if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min(text.size(), e.byte > 0 ? e.byte - 1 : 0);
    for (std::size_t k = 0; k < end; ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw InvalidConfig(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error: " +
                        e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(origin + ": " + e.what());
  } catch (const json::exception& e) {
    throw InvalidConfig(origin + ": " + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw InvalidConfig(e.what());
  }
  return parse_config(text, path.string());
}

void set_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.gen.seed = seed;
  c.model.seed = seed;
  c.train.seed = seed;
  c.audit.seed = seed;
  c.audit.lossy.seed = seed;
  const std::string suffix = "-seed" + std::to_string(seed);
  if (c.run_id.size() < suffix.size() || c.run_id.compare(c.run_id.size() - suffix.size(), suffix.size(), suffix) != 0) {
    c.run_id += suffix;
  }
}

void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("CTRLNS_SEED"); s && *s) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || *end != '\0' || s[0] == '-') throw InvalidConfig(std::string("CTRLNS_SEED: not a seed: ") + s);
    set_seed(c, v);
  }
  if (const char* o = std::getenv("CTRLNS_OUTPUT_DIR"); o && *o) c.output_dir = o;
}

fs::path run_directory(const ExperimentConfig& c) { return fs::path(c.output_dir) / c.run_id; }

fs::path default_dataset_path(const ExperimentConfig& c) { return run_directory(c) / "dataset.bin"; }

// ---------------------------------------------------------------------------
// Run plumbing

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  fs::create_directories(run_dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    throw Error("run directory " + run_dir.string() + " is locked by another process (remove " + path_.string() +
                " if that process is gone)");
  }
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

nlohmann::json build_stamp() {
  json j;
  j["library_version"] = "0.1.0";
#if defined(__clang__)
  j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = std::string("gcc ") + __VERSION__;
#else
  j["compiler"] = "unknown";
#endif
  j["cxx_standard"] = static_cast<long>(__cplusplus);
#ifdef CTRLNS_BUILD_TYPE
  j["build_type"] = CTRLNS_BUILD_TYPE;
#else
  j["build_type"] = "unknown";
#endif
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  j["device"] = "cpu";
  return j;
}

std::pair<std::vector<long>, std::vector<long>> split_samples(long n_samples, double holdout_fraction,
                                                              std::uint64_t seed) {
  if (n_samples < 2) throw InvalidConfig("need at least two samples to split off a holdout set");
  std::vector<long> idx(static_cast<std::size_t>(n_samples));
  for (long k = 0; k < n_samples; ++k) idx[static_cast<std::size_t>(k)] = k;
  Rng rng = Rng::stream(seed, 0x5b117);
  for (std::size_t k = idx.size() - 1; k > 0; --k) std::swap(idx[k], idx[rng.below(k + 1)]);
  long n_hold = std::lround(holdout_fraction * static_cast<double>(n_samples));
  n_hold = std::clamp(n_hold, 1L, n_samples - 1);
  std::vector<long> hold(idx.begin(), idx.begin() + n_hold);
  std::vector<long> train(idx.begin() + n_hold, idx.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  return {train, hold};
}

// ---------------------------------------------------------------------------
// generate

fs::path system_path_for(const fs::path& dataset_path) { return fs::path(dataset_path.string() + ".system.json"); }

nlohmann::json to_json(const GenerateSummary& s) {
  return json{{"dataset", s.dataset_path.string()},
              {"system", s.system_path.string()},
              {"fingerprint", s.fingerprint},
              {"n_domains", s.n_domains},
              {"latent_dim", s.latent_dim},
              {"seq_len", s.seq_len},
              {"n_samples", s.n_samples},
              {"domain_counts", s.domain_counts},
              {"provenance_counts",
               {{"markov_a", s.provenance_counts.at(0)},
                {"markov_b", s.provenance_counts.at(1)},
                {"uniform", s.provenance_counts.at(2)}}}};
}

GenerateSummary cmd_generate(const ExperimentConfig& c, const fs::path& dataset_path) {
  c.validate();
  const datagen::Generated g = datagen::generate_dataset(c.gen, c.variability);
  if (dataset_path.has_parent_path()) fs::create_directories(dataset_path.parent_path());
  datagen::save_dataset(g.dataset, dataset_path);
  const fs::path sys_path = system_path_for(dataset_path);
  write_json(sys_path, datagen::system_to_json(g.system));

  GenerateSummary s;
  s.dataset_path = dataset_path;
  s.system_path = sys_path;
  s.fingerprint = g.dataset.system_fingerprint;
  s.n_domains = c.gen.n_domains;
  s.latent_dim = c.gen.latent_dim;
  s.seq_len = c.gen.seq_len;
  s.n_samples = g.dataset.n_samples;
  s.domain_counts.assign(static_cast<std::size_t>(c.gen.n_domains), 0);
  for (int d : g.dataset.domains) ++s.domain_counts.at(static_cast<std::size_t>(d - 1));
  s.provenance_counts.assign(3, 0);
  for (int p : g.dataset.provenance) {
    if (p >= 0 && p < 3) ++s.provenance_counts[static_cast<std::size_t>(p)];
  }
  return s;
}

// ---------------------------------------------------------------------------
// train

RunArtifact cmd_train(const ExperimentConfig& c_in, const fs::path& dataset_path, const TrainOptions& opt) {
  ExperimentConfig c = c_in;
  if (opt.eval_every) {
    c.eval.eval_every_epochs = *opt.eval_every;
    c.train.eval_every = *opt.eval_every;
  }
  c.validate();
  const fs::path dir = run_directory(c);
  RunLock lock(dir);

  const datagen::LoadedDataset ld = datagen::load_dataset(dataset_path);
  check_dataset_matches(ld, c);
  const datagen::Dataset& ds = ld.dataset;
  const auto [train_idx, hold_idx] = split_samples(ds.n_samples, c.eval.holdout_fraction, c.train.seed);

  const json snapshot = c;
  const fs::path ck_dir = dir / "checkpoints";
  const fs::path last = ck_dir / "last.bin";

  model::CtrlnsModel m(c.model);
  std::vector<objectives::EpochRecord> history;
  std::optional<objectives::TrainState> resume_state;
  if (opt.resume) {
    if (!fs::exists(last)) throw InvalidConfig("--resume: no checkpoint at " + last.string());
    const model::Checkpoint ck = model::read_checkpoint(last);
    if (train_identity(ck.meta.at("config")) != train_identity(snapshot)) {
      throw InvalidConfig("--resume: the run's saved config differs from the requested config");
    }
    model::load_params(m, ck);
    objectives::TrainState st;
    st.epoch = ck.meta.at("train_state").at("epoch").get<int>();
    st.step = ck.meta.at("train_state").at("step").get<long>();
    st.rng_state = ck.meta.at("train_state").at("rng_state").get<std::string>();
    st.optimizer = ck.optimizer;
    for (const auto& r : ck.meta.at("history")) history.push_back(record_from_json(r));
    resume_state = st;
  } else {
    fs::remove_all(ck_dir);
  }
  fs::create_directories(ck_dir);

  write_json(dir / "config.json", snapshot);
  json stamp = build_stamp();
  stamp["created_at"] = iso_now();
  write_json(dir / "build.json", stamp);

  const auto t0 = std::chrono::steady_clock::now();
  const int every = c.eval.eval_every_epochs;
  objectives::TrainConfig tc = c.train;
  tc.eval_every = 0;  // holdout snapshots are taken below with the configured correlation mode

  auto checkpoint_meta = [&](const objectives::TrainState& st) {
    json h = json::array();
    for (const auto& r : history) h.push_back(record_json(r));
    return json{{"train_state", {{"epoch", st.epoch}, {"step", st.step}, {"rng_state", st.rng_state}}},
                {"history", h},
                {"config", snapshot},
                {"dataset_fingerprint", ds.system_fingerprint}};
  };

  objectives::TrainCallbacks cb;
  cb.on_epoch = [&](const objectives::EpochRecord& rec, const objectives::TrainState& st, const nn::AdamW& adam) {
    objectives::EpochRecord r = rec;
    if (every > 0 && (r.epoch % every == 0 || r.epoch == c.train.epochs)) {
      const objectives::Evaluation e = objectives::evaluate(m, ds, hold_idx, c.eval.mcc_mode);
      r.metrics = metrics::EpochMetrics{r.epoch, e.acc.accuracy, e.mcc.value};
    }
    history.push_back(r);
    write_text(dir / "loss_history.csv", loss_csv(history));
    write_text(dir / "epoch_metrics.csv", metrics_csv(history));
    if (r.epoch % c.checkpoint_every == 0 || r.epoch == c.train.epochs) {
      const json meta = checkpoint_meta(st);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.bin", r.epoch);
      model::save_checkpoint(ck_dir / name, m, &adam, meta);
      model::save_checkpoint(last, m, &adam, meta);
    }
    if (opt.on_epoch) opt.on_epoch(r);
  };

  auto summary = [&](const std::string& status) {
    json s{{"schema_version", kSchemaVersion},
           {"kind", "run_summary"},
           {"run_id", c.run_id},
           {"status", status},
           {"epochs_completed", history.empty() ? 0 : history.back().epoch},
           {"dataset_fingerprint", ds.system_fingerprint},
           {"final_loss", nullptr}};
    if (!history.empty()) {
      const auto& l = history.back().loss;
      s["final_loss"] = {{"recon", l.recon},
                         {"kld", l.kld},
                         {"transition", l.transition},
                         {"sparsity", l.sparsity},
                         {"total", l.total}};
    }
    s["timing"] = {{"finished_at", iso_now()},
                   {"elapsed_seconds",
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
    return s;
  };

  objectives::TrainResult tr;
  try {
    tr = objectives::train(m, ds, train_idx, hold_idx, tc, cb, resume_state);
  } catch (const NumericError& e) {
    json s = summary("numeric_failure");
    s["error"] = e.what();
    s["failed_step"] = static_cast<long>(e.step());
    write_text(dir / "loss_history.csv", loss_csv(history));
    write_json(dir / "summary.json", s);
    throw;
  }
  if (history.empty() && !resume_state) {
    // Zero-epoch runs still leave a loadable checkpoint of the initial model.
    nn::AdamW adam(m.params(), {});
    model::save_checkpoint(last, m, &adam, checkpoint_meta(tr.state));
  }
  write_text(dir / "loss_history.csv", loss_csv(history));
  write_text(dir / "epoch_metrics.csv", metrics_csv(history));

  RunArtifact art;
  art.run_dir = dir;
  art.history = history;
  art.dataset_fingerprint = ds.system_fingerprint;
  const objectives::Evaluation e = objectives::evaluate(m, ds, hold_idx, c.eval.mcc_mode);
  art.final_metrics.mcc = e.mcc;
  art.final_metrics.mcc_other = e.mcc_other;
  art.final_metrics.acc = e.acc;
  art.final_metrics.phases = metrics::phase_report(epoch_metrics(history), c.eval.acc_threshold, c.eval.mcc_threshold);
  art.has_final_metrics = true;
  write_json(dir / "metrics.json", metrics_json(art.final_metrics, c.run_id));

  json s = summary("completed");
  s["steps"] = tr.state.step;
  s["mcc"] = e.mcc.value;
  s["mcc_mode"] = metrics::to_string(e.mcc.mode);
  s["mcc_other"] = e.mcc_other.value;
  s["acc"] = e.acc.accuracy;
  s["acc_cross"] = optional_int(art.final_metrics.phases->acc_cross);
  s["mcc_cross"] = optional_int(art.final_metrics.phases->mcc_cross);
  s["acc_first"] = art.final_metrics.phases->acc_first;
  write_json(dir / "summary.json", s);
  return art;
}

// ---------------------------------------------------------------------------
// eval

metrics::MetricsReport metrics_from_estimates(const Eigen::MatrixXd& z_hat, const Eigen::MatrixXd& z,
                                              std::span<const int> u_hat, std::span<const int> u, int n_labels,
                                              metrics::CorrMode mode) {
  metrics::MetricsReport r;
  r.mcc = metrics::mcc(z_hat, z, mode);
  r.mcc_other = metrics::mcc(z_hat, z,
                             mode == metrics::CorrMode::spearman ? metrics::CorrMode::pearson
                                                                 : metrics::CorrMode::spearman);
  r.acc = metrics::domain_accuracy(u_hat, u, n_labels);
  return r;
}

nlohmann::json metrics_json(const metrics::MetricsReport& r, const std::string& run_id) {
  json j = metrics::to_json(r);
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "metrics";
  j["run_id"] = run_id;
  return j;
}

metrics::MetricsReport cmd_eval(const fs::path& run_dir, const fs::path& dataset_path) {
  const ExperimentConfig c = load_config(run_dir / "config.json");
  const datagen::LoadedDataset ld = datagen::load_dataset(dataset_path);
  check_dataset_matches(ld, c);
  const fs::path last = run_dir / "checkpoints" / "last.bin";
  if (!fs::exists(last)) throw Error("no checkpoint at " + last.string());
  const model::Checkpoint ck = model::read_checkpoint(last);
  model::CtrlnsModel m(ck.config);
  model::load_params(m, ck);

  const auto split = split_samples(ld.dataset.n_samples, c.eval.holdout_fraction, c.train.seed);
  const objectives::Evaluation e = objectives::evaluate(m, ld.dataset, split.second, c.eval.mcc_mode);
  metrics::MetricsReport r;
  r.mcc = e.mcc;
  r.mcc_other = e.mcc_other;
  r.acc = e.acc;
  std::vector<objectives::EpochRecord> history;
  if (ck.meta.contains("history")) {
    for (const auto& h : ck.meta.at("history")) history.push_back(record_from_json(h));
  }
  r.phases = metrics::phase_report(epoch_metrics(history), c.eval.acc_threshold, c.eval.mcc_threshold);
  write_json(run_dir / "eval_metrics.json", metrics_json(r, c.run_id));
  return r;
}

// ---------------------------------------------------------------------------
// audit

nlohmann::json to_json(const AuditReport& r) {
  json supports = json::array();
  for (const auto& s : r.supports) {
    supports.push_back(
        {{"domain", s.domain}, {"matches", s.matches}, {"mask", mask_json(s.mask)}, {"estimated", theory::to_json(s.estimated)}});
  }
  json pairs = json::array();
  for (const auto& p : r.variability) pairs.push_back({{"a", p.a}, {"b", p.b}, {"pass", p.pass}, {"min_order", p.min_order}});
  json lossy = json::array();
  for (const auto& l : r.lossy) lossy.push_back(theory::to_json(l));
  json j{{"schema_version", kSchemaVersion},
         {"kind", "audit"},
         {"fingerprint", r.fingerprint},
         {"overall", theory::to_string(r.overall)},
         {"checks",
          {{"support", {{"verdict", theory::to_string(r.support_verdict)}, {"domains", supports}}},
           {"mechanism_variability", {{"verdict", theory::to_string(r.variability_verdict)}, {"pairs", pairs}}},
           {"lossy", {{"verdict", theory::to_string(r.lossy_verdict)}, {"domains", lossy}}},
           {"weak_diversity", {{"verdict", theory::to_string(r.weak_diversity_verdict)}}},
           {"mixing",
            {{"verdict", theory::to_string(r.mixing_verdict)},
             {"condition_numbers", r.mixing.condition_numbers},
             {"min_singular_values", r.mixing.min_singular_values}}}}},
         {"oracle", nullptr}};
  if (r.oracle) j["oracle"] = theory::to_json(*r.oracle, true);
  return j;
}

AuditReport audit_system(const datagen::GroundTruthSystem& sys, const AuditConfig& cfg) {
  AuditReport rep;
  rep.fingerprint = sys.fingerprint();
  Rng rng = Rng::stream(cfg.seed, 0xa0d1);
  const auto points = theory::stationary_points(sys, cfg.eval_points, rng);

  std::vector<std::vector<theory::SupportMatrix>> orders;
  std::vector<theory::Verdict> support_verdicts;
  for (std::size_t d = 0; d < sys.transitions.size(); ++d) {
    const auto& tr = sys.transitions[d];
    const theory::JetMap f = theory::transition_jet_map(tr);
    SupportCheck sc;
    sc.domain = static_cast<int>(d);
    sc.mask = tr.mask;
    sc.estimated = theory::jacobian_support(f, points, cfg.support_threshold);
    sc.matches = sc.estimated.entries == tr.mask;
    support_verdicts.push_back(sc.matches ? theory::Verdict::pass : theory::Verdict::fail);
    std::vector<theory::SupportMatrix> per_order{sc.estimated};
    for (int k = 2; k <= cfg.max_order; ++k) {
      per_order.push_back(theory::higher_order_support(f, k, points, cfg.support_threshold));
    }
    orders.push_back(std::move(per_order));
    rep.supports.push_back(std::move(sc));
  }
  rep.support_verdict = theory::combine(support_verdicts);

  rep.variability = theory::mechanism_variability_check(orders);
  rep.variability_verdict = theory::Verdict::pass;
  for (const auto& p : rep.variability) {
    if (!p.pass) rep.variability_verdict = theory::Verdict::fail;
  }

  rep.lossy = theory::weakly_diverse_lossy_check(sys, cfg.lossy);
  std::vector<theory::Verdict> lv, wv;
  for (const auto& l : rep.lossy) {
    lv.push_back(l.lossy);
    wv.push_back(l.weak_diversity);
  }
  rep.lossy_verdict = theory::combine(lv);
  rep.weak_diversity_verdict = theory::combine(wv);

  rep.mixing = datagen::verify_mixing_invertible(sys);
  rep.mixing_verdict = rep.mixing.ok ? theory::Verdict::pass : theory::Verdict::fail;

  if (cfg.tiny_oracle && sys.transitions.size() >= 2) {
    theory::OracleInstance inst;
    Rng orng = Rng::stream(cfg.seed, 0x0c1e);
    for (int cell = 0; cell < cfg.oracle_cells; ++cell) {
      inst.cell_weights.push_back(orng.uniform(0.5, 1.5));
      inst.true_assignment.push_back(cell % 2);
    }
    inst.supports = {sys.transitions[0].mask, sys.transitions[1].mask};
    inst.max_assignments = cfg.max_assignments;
    rep.oracle = theory::assignment_oracle(inst);
  }

  rep.overall = theory::combine(
      {rep.support_verdict, rep.variability_verdict, rep.lossy_verdict, rep.weak_diversity_verdict, rep.mixing_verdict});
  return rep;
}

AuditReport cmd_audit(const fs::path& input, const AuditConfig& cfg) {
  if (!fs::exists(input)) throw InvalidConfig("audit input not found: " + input.string());
  datagen::GroundTruthSystem sys;
  if (input.extension() == ".json") {
    sys = datagen::system_from_json(read_json(input));
  } else {
    const datagen::LoadedDataset ld = datagen::load_dataset(input);
    const fs::path sp = system_path_for(input);
    if (!fs::exists(sp)) throw InvalidConfig("no system description beside the dataset: " + sp.string());
    sys = datagen::system_from_json(read_json(sp));
    if (sys.fingerprint() != ld.dataset.system_fingerprint) {
      throw InvalidConfig("fingerprint mismatch between " + input.string() + " and " + sp.string());
    }
  }
  return audit_system(sys, cfg);
}

// ---------------------------------------------------------------------------
// report

RunSummary read_run_summary(const fs::path& run_dir) {
  const fs::path p = run_dir / "summary.json";
  if (!fs::exists(p)) throw Error("not a run directory (no summary.json): " + run_dir.string());
  const json s = read_json(p);
  RunSummary r;
  r.run_dir = run_dir;
  r.run_id = s.value("run_id", run_dir.filename().string());
  r.epochs = s.value("epochs_completed", 0);
  r.mcc = s.value("mcc", std::numeric_limits<double>::quiet_NaN());
  r.mcc_other = s.value("mcc_other", std::numeric_limits<double>::quiet_NaN());
  r.acc = s.value("acc", std::numeric_limits<double>::quiet_NaN());
  r.final_loss = std::numeric_limits<double>::quiet_NaN();
  if (s.contains("final_loss") && s.at("final_loss").is_object()) r.final_loss = s.at("final_loss").at("total").get<double>();
  if (s.contains("acc_cross") && s.at("acc_cross").is_number()) r.acc_cross = s.at("acc_cross").get<int>();
  if (s.contains("mcc_cross") && s.at("mcc_cross").is_number()) r.mcc_cross = s.at("mcc_cross").get<int>();
  r.acc_first = s.value("acc_first", false);
  return r;
}

std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& runs) {
  auto row = [&](const std::string& name, auto get) {
    std::vector<double> v;
    for (const auto& r : runs) {
      const double x = get(r);
      if (std::isfinite(x)) v.push_back(x);
    }
    return AggregateRow{name, mean_of(v), sample_std(v), static_cast<int>(v.size())};
  };
  return {row("mcc", [](const RunSummary& r) { return r.mcc; }),
          row("mcc_other", [](const RunSummary& r) { return r.mcc_other; }),
          row("acc", [](const RunSummary& r) { return r.acc; }),
          row("final_loss", [](const RunSummary& r) { return r.final_loss; }),
          row("epochs", [](const RunSummary& r) { return static_cast<double>(r.epochs); })};
}

namespace {

std::string opt_str(const std::optional<int>& v) { return v ? std::to_string(*v) : ""; }

const AggregateRow& find_row(const std::vector<AggregateRow>& agg, const std::string& name) {
  for (const auto& a : agg) {
    if (a.metric == name) return a;
  }
  throw Error("missing aggregate row " + name);
}

}  // namespace

std::string report_csv(const std::vector<RunSummary>& runs, const std::vector<AggregateRow>& agg) {
  std::string out = "run_id,mcc,mcc_other,acc,final_loss,epochs,acc_cross,mcc_cross,acc_first\n";
  for (const auto& r : runs) {
    out += r.run_id + "," + num(r.mcc) + "," + num(r.mcc_other) + "," + num(r.acc) + "," + num(r.final_loss) + "," +
           std::to_string(r.epochs) + "," + opt_str(r.acc_cross) + "," + opt_str(r.mcc_cross) + "," +
           (r.acc_first ? "1" : "0") + "\n";
  }
  if (runs.size() >= 2) {
    for (const char* stat : {"mean", "std"}) {
      const bool mean = std::string(stat) == "mean";
      out += stat;
      for (const char* m : {"mcc", "mcc_other", "acc", "final_loss", "epochs"}) {
        const auto& a = find_row(agg, m);
        out += "," + num(mean ? a.mean : a.std);
      }
      out += ",,,\n";
    }
  }
  return out;
}

std::string report_markdown(const std::vector<RunSummary>& runs, const std::vector<AggregateRow>& agg) {
  std::string out = "| run | MCC | MCC (other) | Acc | final loss | epochs | Acc cross | MCC cross | Acc first |\n";
  out += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : runs) {
    out += "| " + r.run_id + " | " + fixed(r.mcc, 2) + " | " + fixed(r.mcc_other, 2) + " | " + fixed(r.acc, 2) +
           " | " + fixed(r.final_loss, 4) + " | " + std::to_string(r.epochs) + " | " +
           (r.acc_cross ? std::to_string(*r.acc_cross) : "-") + " | " +
           (r.mcc_cross ? std::to_string(*r.mcc_cross) : "-") + " | " + (r.acc_first ? "yes" : "no") + " |\n";
  }
  if (runs.size() >= 2) {
    auto pm = [&](const char* m, int d) {
      const auto& a = find_row(agg, m);
      return fixed(a.mean, d) + " ± " + fixed(a.std, d);
    };
    int first = 0;
    for (const auto& r : runs) first += r.acc_first ? 1 : 0;
    out += "| mean ± std (n=" + std::to_string(runs.size()) + ") | " + pm("mcc", 2) + " | " + pm("mcc_other", 2) +
           " | " + pm("acc", 2) + " | " + pm("final_loss", 4) + " | " + pm("epochs", 1) + " | | | " +
           std::to_string(first) + "/" + std::to_string(runs.size()) + " |\n";
  }
  return out;
}

std::string loss_curve_svg(const fs::path& run_dir) {
  const auto rows = read_csv(run_dir / "loss_history.csv");
  if (rows.empty()) return svg_empty("no epochs recorded");
  const char* names[] = {"recon", "kld", "transition", "sparsity", "total"};
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#d62728"};
  const double W = 640, PH = 110, top = 30, gap = 40, left = 70;
  std::string svg = svg_open(W, top + 5 * (PH + gap));
  std::vector<double> xs;
  for (const auto& r : rows) xs.push_back(r.at(0));
  for (int k = 0; k < 5; ++k) {
    std::vector<double> ys;
    for (const auto& r : rows) ys.push_back(r.at(static_cast<std::size_t>(k + 1)));
    Panel p{std::string(names[k]) + " per epoch", left, top + k * (PH + gap), W - left - 20, PH};
    p.fit(xs, {ys});
    svg += p.frame() + p.line(xs, ys, colors[k]);
  }
  return svg + "</svg>\n";
}

std::string phase_chart_svg(const fs::path& run_dir) {
  const auto rows = read_csv(run_dir / "epoch_metrics.csv");
  if (rows.empty()) return svg_empty("no evaluation snapshots recorded");
  double acc_t = 90, mcc_t = 90;
  if (fs::exists(run_dir / "config.json")) {
    const json c = read_json(run_dir / "config.json");
    acc_t = c.at("eval").value("acc_threshold", 90.0);
    mcc_t = c.at("eval").value("mcc_threshold", 90.0);
  }
  std::vector<metrics::EpochMetrics> hist;
  std::vector<double> xs, acc, mcc;
  for (const auto& r : rows) {
    hist.push_back({static_cast<int>(r.at(0)), r.at(1), r.at(2)});
    xs.push_back(r.at(0));
    acc.push_back(r.at(1));
    mcc.push_back(r.at(2));
  }
  const metrics::PhaseReport ph = metrics::phase_report(hist, acc_t, mcc_t);
  const double W = 640, H = 360;
  Panel p{"Acc and MCC on holdout", 60, 30, W - 90, H - 90};
  p.fit(xs, {acc, mcc, {acc_t, mcc_t}});
  p.ymin = std::min(p.ymin, 0.0);
  p.ymax = std::max(p.ymax, 100.0);
  std::ostringstream s;
  s << svg_open(W, H) << p.frame();
  // Phase shading: before Acc crosses, between the crossings, after MCC crosses.
  auto band = [&](double a, double b, const char* color) {
    if (b <= a) return;
    s << "<rect x='" << p.px(a) << "' y='" << p.y0 << "' width='" << p.px(b) - p.px(a) << "' height='" << p.h
      << "' fill='" << color << "' opacity='0.12'/>\n";
  };
  const double a_end = ph.acc_cross ? *ph.acc_cross : p.xmax;
  const double m_end = ph.mcc_cross ? *ph.mcc_cross : p.xmax;
  band(p.xmin, std::min(a_end, m_end), "#888888");
  if (ph.acc_first) band(a_end, m_end, "#1f77b4");
  band(std::max(a_end, m_end), p.xmax, "#2ca02c");
  for (auto [t, color] : {std::pair{acc_t, "#1f77b4"}, std::pair{mcc_t, "#d62728"}}) {
    s << "<line x1='" << p.x0 << "' x2='" << p.x0 + p.w << "' y1='" << p.py(t) << "' y2='" << p.py(t)
      << "' stroke='" << color << "' stroke-dasharray='2,3'/>\n";
  }
  auto mark = [&](const std::optional<int>& e, const char* label, const char* color, double dy) {
    if (!e) return;
    s << "<line x1='" << p.px(*e) << "' x2='" << p.px(*e) << "' y1='" << p.y0 << "' y2='" << p.y0 + p.h
      << "' stroke='" << color << "' stroke-dasharray='6,4'/>\n";
    s << "<text x='" << p.px(*e) + 3 << "' y='" << p.y0 + 12 + dy << "' font-size='10' fill='" << color << "'>"
      << label << " crosses at epoch " << *e << "</text>\n";
  };
  s << p.line(xs, acc, "#1f77b4") << p.line(xs, mcc, "#d62728");
  mark(ph.acc_cross, "Acc", "#1f77b4", 0);
  mark(ph.mcc_cross, "MCC", "#d62728", 14);
  s << "<text x='" << p.x0 << "' y='" << H - 20 << "' font-size='11'><tspan fill='#1f77b4'>Acc (%)</tspan>"
    << "  <tspan fill='#d62728'>MCC</tspan>  epoch on x axis</text>\n";
  s << "</svg>\n";
  return s.str();
}

ReportOutput cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool plots) {
  if (run_dirs.empty()) throw InvalidConfig("report: no run directories given");
  ReportOutput out;
  for (const auto& d : run_dirs) out.runs.push_back(read_run_summary(d));
  out.aggregate = aggregate(out.runs);
  fs::create_directories(out_dir);
  write_text(out_dir / "report.csv", report_csv(out.runs, out.aggregate));
  write_text(out_dir / "report.md", report_markdown(out.runs, out.aggregate));
  out.files = {out_dir / "report.csv", out_dir / "report.md"};
  if (plots) {
    for (const auto& r : out.runs) {
      const std::string stem = r.run_dir.filename().string();
      const fs::path lc = out_dir / (stem + "_loss.svg");
      const fs::path pc = out_dir / (stem + "_phases.svg");
      write_text(lc, loss_curve_svg(r.run_dir));
      write_text(pc, phase_chart_svg(r.run_dir));
      out.files.push_back(lc);
      out.files.push_back(pc);
    }
  }
  return out;
}

}  // namespace ctrlns::harness
