#ifndef UDALM_CORPUS_HPP
#define UDALM_CORPUS_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace udalm::data {

constexpr int kLabelAbsent = -1;

struct LabeledExample {
  std::string text;
  int label = kLabelAbsent;  // class id, or kLabelAbsent for unlabeled
  std::string domain;
  long id = -1;  // unique within one corpus build; used for quarantine checks

  bool labeled() const { return label != kLabelAbsent; }
};

// Controls the synthetic domain pair. shift is the fraction of the
// polarity-bearing and indicator lexicons that is domain-exclusive: at 0 both
// domains draw from one shared generative lexicon, at 1 their evidence
// lexicons are disjoint.
struct DomainShiftSpec {
  double shift = 0.8;
  int filler_words = 80;             // shared neutral lexicon
  int indicator_words = 32;          // per-domain topical lexicon
  int polarity_words = 36;           // per class
  int sentence_min_words = 9;
  int sentence_max_words = 15;
  double class_balance = 0.5;
  double noise_rate = 0.01;          // label flip probability
  double polarity_density = 0.45;    // fraction of slots drawing polarity words
  double indicator_density = 0.18;
  double polarity_purity = 0.9;      // chance a polarity slot matches the intended class
  // Zipf-like usage skew: chance a polarity slot draws from the shared part
  // of the lexicon before falling back to a uniform draw over all of it.
  // Frequent generic polarity words are cross-domain; rare ones are not.
  double shared_usage_boost = 0.35;

  void validate() const;
  std::string cache_key() const;
};

// The adaptation data shape: labeled source, unlabeled target, quarantined labeled
// target test. Raw pools are kept so target subsampling can re-derive splits.
struct SplitSet {
  std::vector<LabeledExample> source_train;
  std::vector<LabeledExample> source_val;
  std::vector<LabeledExample> target_train_unlabeled;
  std::vector<LabeledExample> target_val_unlabeled;
  std::vector<LabeledExample> target_test;

  std::vector<LabeledExample> source_all;
  std::vector<LabeledExample> target_unlabeled_all;

  double val_frac = 0.2;
  std::uint64_t split_seed = 0;

  std::string source_domain;
  std::string target_domain;
};

SplitSet generate_synthetic_pair(const DomainShiftSpec& spec, int n_labeled_source,
                                 int n_unlabeled_target, int n_target_test,
                                 std::uint64_t seed);

// One record per line: label (0/1/- for absent) <TAB> domain <TAB> text.
std::vector<LabeledExample> load_records(const std::string& path);
void save_records(const std::vector<LabeledExample>& records, const std::string& path);

// Stratified-by-label split of source, random split of unlabeled target;
// target_labeled passes through untouched as the test set.
SplitSet make_splits(std::vector<LabeledExample> source,
                     std::vector<LabeledExample> target_unlabeled,
                     std::vector<LabeledExample> target_labeled,
                     double val_frac, std::uint64_t seed);

// Keeps the first `size` elements of a seeded permutation of the full
// unlabeled target pool, then re-splits. Prefixes nest: the subset at a
// smaller size is contained in every larger one under the same seed.
SplitSet subsample_target(const SplitSet& splits, int size, std::uint64_t seed);

}  // namespace udalm::data

#endif
