#ifndef UDALM_RUNNER_HPP
#define UDALM_RUNNER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "udalm/analysis.hpp"
#include "udalm/config.hpp"
#include "udalm/corpus.hpp"
#include "udalm/trainer.hpp"

namespace udalm::cli {

// Prepared experiment inputs: corpus splits, vocabulary, encoded sequences.
struct Workspace {
  ExperimentConfig cfg;
  std::string out_dir;
  data::SplitSet splits;
  tok::Vocab vocab;
  nn::EncoderConfig encoder_cfg;  // vocab_size and max_len resolved
  train::EncodedSplits encoded;
};

// Loads the corpus written by cmd_generate, builds (or reloads) the
// vocabulary and encodes all splits. Fails with an actionable message when
// the corpus stage is missing.
Workspace prepare_workspace(const ExperimentConfig& cfg, const std::string& out_dir);

struct StageOutcome {
  std::string name;
  bool cache_hit = false;
};

struct TrainOutcome {
  std::vector<StageOutcome> stages;
};

// Subcommands. Each returns after writing its artifacts under out_dir.
void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir);
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::string& out_dir);
std::string cmd_report(const std::string& out_dir);  // returns the rendered report
void cmd_adist(const ExperimentConfig& cfg, const std::string& out_dir,
               const std::string& checkpoint_path, const std::string& out_file);
void cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir);

// One full pipeline cell used by train and sweep: runs (or reuses) the domain
// pretraining stage, trains the regime, and returns the trained parameters
// plus record. Test accuracy is left unset; the report stage fills it.
train::TrainResult run_regime_cell(const Workspace& ws, const std::string& regime,
                                   std::uint64_t seed, bool keep_epoch_params);

// Deterministic parallel map over cell indices [0, n) on `jobs` workers.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

std::string hash_hex(const std::string& key);

}  // namespace udalm::cli

#endif
