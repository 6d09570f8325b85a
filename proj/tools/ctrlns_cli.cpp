// Command-line front end: generate, train, eval, audit, report.

#include "ctrlns/error.hpp"
#include "ctrlns/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace ctrlns;
using harness::ExperimentConfig;

namespace {

enum Exit { ok = 0, failure = 1, invalid_config = 2, numeric_failure = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string device = "cpu";
};

void add_common(CLI::App* cmd, Common& c, bool require_config) {
  auto* opt = cmd->add_option("--config", c.config, "Experiment config (JSON)");
  if (require_config) opt->required();
  cmd->add_option("--seed", c.seed, "Seed for data, model and training (overrides CTRLNS_SEED)");
  cmd->add_option("--out", c.out, "Output directory (overrides CTRLNS_OUTPUT_DIR)");
  cmd->add_option("--device", c.device, "Compute device; only 'cpu' is available")->capture_default_str();
}

ExperimentConfig resolve(const Common& c) {
  if (c.device != "cpu") throw InvalidConfig("--device: only 'cpu' is supported, got '" + c.device + "'");
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : harness::load_config(c.config);
  harness::apply_env_overrides(cfg);
  if (c.seed) harness::set_seed(cfg, *c.seed);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-switching latent dynamics: data generation, training, evaluation and audits"};
  app.require_subcommand(1);

  Common gen_opts;
  std::string gen_dataset;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset and its ground-truth system");
  add_common(gen, gen_opts, true);
  gen->add_option("--dataset", gen_dataset, "Dataset path (default: <out>/<run_id>/dataset.bin)");

  Common train_opts;
  std::string train_dataset;
  bool resume = false;
  std::optional<int> eval_every;
  auto* train = app.add_subcommand("train", "Train a model on a generated dataset");
  add_common(train, train_opts, true);
  train->add_option("--dataset", train_dataset, "Dataset path (default: <out>/<run_id>/dataset.bin)");
  train->add_flag("--resume", resume, "Continue from the run's last checkpoint");
  train->add_option("--eval-every", eval_every, "Epochs between holdout snapshots (0 disables)");
  bool quiet = false;
  train->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  std::string eval_run, eval_dataset;
  std::string eval_device = "cpu";
  auto* ev = app.add_subcommand("eval", "Evaluate a trained run on its holdout split");
  ev->add_option("--run", eval_run, "Run directory")->required();
  ev->add_option("--dataset", eval_dataset, "Dataset path (default: <run>/dataset.bin)");
  ev->add_option("--device", eval_device, "Compute device; only 'cpu' is available");

  Common audit_opts;
  std::string audit_input, audit_output;
  bool tiny = false;
  auto* audit = app.add_subcommand("audit", "Check the identifiability assumptions on a ground-truth system");
  add_common(audit, audit_opts, false);
  audit->add_option("input", audit_input, "Dataset container or system JSON (default: the config's dataset)");
  audit->add_option("--report", audit_output, "Audit JSON path (default: <input>.audit.json)");
  audit->add_flag("--tiny-oracle", tiny, "Attach the exhaustive assignment landscape for a two-domain instance");

  std::vector<std::string> report_runs;
  std::string report_out = "report";
  bool no_plots = false;
  auto* rep = app.add_subcommand("report", "Aggregate run directories into tables and plots");
  rep->add_option("runs", report_runs, "Run directories")->required();
  rep->add_option("--out", report_out, "Output directory")->capture_default_str();
  rep->add_flag("--no-plots", no_plots, "Skip the SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : invalid_config;
  }

  try {
    if (gen->parsed()) {
      const ExperimentConfig cfg = resolve(gen_opts);
      const fs::path path = gen_dataset.empty() ? harness::default_dataset_path(cfg) : fs::path(gen_dataset);
      harness::GenerateSummary s;
      {
        harness::RunLock lock(harness::run_directory(cfg));
        s = harness::cmd_generate(cfg, path);
      }
      print(harness::to_json(s));
    } else if (train->parsed()) {
      const ExperimentConfig cfg = resolve(train_opts);
      const fs::path path = train_dataset.empty() ? harness::default_dataset_path(cfg) : fs::path(train_dataset);
      harness::TrainOptions opt;
      opt.resume = resume;
      opt.eval_every = eval_every;
      if (!quiet) {
        opt.on_epoch = [](const objectives::EpochRecord& r) {
          std::fprintf(stderr, "epoch %4d  total %.6g  recon %.4g  kld %.4g  trans %.4g  sparse %.4g  tau %.3g%s",
                       r.epoch, r.loss.total, r.loss.recon, r.loss.kld, r.loss.transition, r.loss.sparsity,
                       r.temperature, r.hard ? " hard" : "");
          if (r.metrics) std::fprintf(stderr, "  acc %.2f  mcc %.2f", r.metrics->acc, r.metrics->mcc);
          std::fprintf(stderr, "\n");
        };
      }
      const harness::RunArtifact art = harness::cmd_train(cfg, path, opt);
      nlohmann::json j = harness::metrics_json(art.final_metrics, cfg.run_id);
      j["run_dir"] = art.run_dir.string();
      j["epochs"] = art.history.size();
      print(j);
    } else if (ev->parsed()) {
      if (eval_device != "cpu") throw InvalidConfig("--device: only 'cpu' is supported");
      const fs::path run(eval_run);
      const fs::path path = eval_dataset.empty() ? run / "dataset.bin" : fs::path(eval_dataset);
      metrics::MetricsReport r;
      {
        harness::RunLock lock(run);
        r = harness::cmd_eval(run, path);
      }
      print(harness::metrics_json(r, run.filename().string()));
    } else if (audit->parsed()) {
      ExperimentConfig cfg = resolve(audit_opts);
      if (tiny) cfg.audit.tiny_oracle = true;
      const fs::path input = audit_input.empty() ? harness::default_dataset_path(cfg) : fs::path(audit_input);
      const harness::AuditReport r = harness::cmd_audit(input, cfg.audit);
      const fs::path out = audit_output.empty() ? fs::path(input.string() + ".audit.json") : fs::path(audit_output);
      const nlohmann::json j = harness::to_json(r);
      write_file(out, j.dump(2) + "\n");
      std::cout << "audit " << theory::to_string(r.overall) << "  (support " << theory::to_string(r.support_verdict)
                << ", variability " << theory::to_string(r.variability_verdict) << ", lossy "
                << theory::to_string(r.lossy_verdict) << ", weak diversity "
                << theory::to_string(r.weak_diversity_verdict) << ", mixing " << theory::to_string(r.mixing_verdict)
                << ")\nwritten to " << out.string() << "\n";
    } else if (rep->parsed()) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      const harness::ReportOutput r = harness::cmd_report(dirs, report_out, !no_plots);
      std::cout << harness::report_markdown(r.runs, r.aggregate);
      for (const auto& f : r.files) std::cout << "wrote " << f.string() << "\n";
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return invalid_config;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return numeric_failure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
  return ok;
}
