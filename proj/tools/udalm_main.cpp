#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "udalm/config.hpp"
#include "udalm/errors.hpp"
#include "udalm/runner.hpp"

namespace {

udalm::cli::ExperimentConfig load_config(const std::string& config_path, long seed_override,
                                         const std::string& regimes_override, int jobs_override) {
  udalm::cli::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = udalm::cli::parse_config_file(config_path);
  if (seed_override >= 0) cfg.master_seed = static_cast<std::uint64_t>(seed_override);
  if (!regimes_override.empty()) {
    cfg.regimes.clear();
    std::string cur;
    for (char c : regimes_override + ",") {
      if (c == ',') {
        if (!cur.empty()) cfg.regimes.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
  }
  if (jobs_override > 0) cfg.jobs = jobs_override;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised domain adaptation benchmark: mixed classification + masked-LM "
               "fine-tuning of a tiny transformer, with source-only, domain-pretraining and "
               "domain-adversarial baselines"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags remain valid after the subcommand name

  std::string config_path;
  std::string out_dir = "out";
  long seed_override = -1;
  std::string regimes_override;
  int jobs_override = 0;
  app.add_option("--config", config_path, "experiment config file (key = value sections)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed_override, "override the master seed");
  app.add_option("--regimes", regimes_override, "comma-separated regimes (so,dpt,dat,udalm)");
  app.add_option("--jobs", jobs_override, "worker threads for independent cells");

  auto* gen = app.add_subcommand("generate", "write the corpus files and manifest");
  auto* train_cmd = app.add_subcommand("train", "run (or resume) all configured regime cells");
  auto* report_cmd = app.add_subcommand("report", "evaluate held-out test accuracy and render tables");
  auto* adist_cmd = app.add_subcommand("adist", "proxy A-distance and bound terms for a checkpoint");
  auto* sweep_cmd = app.add_subcommand("sweep", "target-sample-efficiency sweep");

  std::string checkpoint_path;
  std::string adist_out;
  adist_cmd->add_option("--checkpoint", checkpoint_path, "encoder checkpoint to analyze")
      ->required();
  adist_cmd->add_option("--out-file", adist_out, "output TSV (default: runs/bound_<name>.tsv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    udalm::cli::ExperimentConfig cfg =
        load_config(config_path, seed_override, regimes_override, jobs_override);
    if (gen->parsed()) {
      udalm::cli::cmd_generate(cfg, out_dir);
      std::cout << "corpus written under " << out_dir << "/corpus\n";
    } else if (train_cmd->parsed()) {
      udalm::cli::TrainOutcome outcome = udalm::cli::cmd_train(cfg, out_dir);
      for (const auto& st : outcome.stages)
        std::cout << (st.cache_hit ? "reused " : "trained ") << st.name << "\n";
    } else if (report_cmd->parsed()) {
      std::cout << udalm::cli::cmd_report(out_dir);
    } else if (adist_cmd->parsed()) {
      std::string out_file = adist_out;
      if (out_file.empty()) {
        std::string name = checkpoint_path;
        auto slash = name.find_last_of('/');
        if (slash != std::string::npos) name = name.substr(slash + 1);
        auto dot = name.rfind('.');
        if (dot != std::string::npos) name = name.substr(0, dot);
        out_file = out_dir + "/runs/bound_" + name + ".tsv";
      }
      udalm::cli::cmd_adist(cfg, out_dir, checkpoint_path, out_file);
      std::cout << "bound report written to " << out_file << "\n";
    } else if (sweep_cmd->parsed()) {
      udalm::cli::cmd_sweep(cfg, out_dir);
      std::cout << "sweep table written to " << out_dir << "/sweep.tsv\n";
    }
  } catch (const udalm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const udalm::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const udalm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
