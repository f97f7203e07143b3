#ifndef UDALM_CONFIG_HPP
#define UDALM_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "udalm/corpus.hpp"
#include "udalm/encoder.hpp"
#include "udalm/trainer.hpp"

namespace udalm::cli {

// Whole-experiment configuration. Defaults run the synthetic benchmark:
// a shift-0.8 domain pair at desk scale. Sectioned key=value text; every
// field has a default, so an empty file is a valid config.
struct ExperimentConfig {
  // [corpus]
  std::string corpus_kind = "synthetic";  // synthetic | tsv
  data::DomainShiftSpec shift_spec;
  int n_source = 600;
  int n_target = 2000;
  int n_target_test = 600;
  std::string source_path;
  std::string target_path;
  std::string target_test_path;

  // [tokenizer]
  int vocab_size = 2000;
  int min_freq = 1;
  int max_len = 32;

  // [encoder]
  // vocab_size and max_len are filled by the runner once the vocabulary is
  // built; the config only carries the architecture knobs.
  nn::EncoderConfig encoder;

  // [train]
  train::TrainConfig train_cfg;

  // [run]
  std::vector<std::string> regimes = {"so", "dpt", "dat", "udalm"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::uint64_t master_seed = 7;
  int jobs = 2;
  bool criteria_compare = true;
  std::string stopping_so = "min_source_loss:3";
  std::string stopping_dat = "fixed:10";
  std::string stopping_udalm = "min_mixed_loss:3";
  int adist_train_per_domain = 500;
  std::vector<int> sweep_sizes = {0, 800, 2000};
  std::vector<std::string> sweep_regimes = {"udalm"};

  void validate() const;
  // Canonical text form; also the content-hash input for stage caching.
  std::string canonical() const;
  std::string corpus_hash_key() const;
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

}  // namespace udalm::cli

#endif
