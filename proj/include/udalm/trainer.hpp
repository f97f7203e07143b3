#ifndef UDALM_TRAINER_HPP
#define UDALM_TRAINER_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "udalm/corpus.hpp"
#include "udalm/encoder.hpp"
#include "udalm/tokenizer.hpp"

namespace udalm::train {

struct TrainConfig {
  double learning_rate = 3e-4;  // paper-scale models use 1e-5; toy capacity wants more
  int epochs = 10;
  int patience = 3;
  int source_subbatch = 4;      // samples in the one source sub-batch per logical batch
  int target_subbatches = 8;    // target sub-batches per logical batch
  int subbatch_size = 4;        // samples per target sub-batch
  int accumulate_every = 5;     // optimizer step cadence, in sub-batches
  double lambda_d = 0.01;
  double weight_decay = 0.01;
  double mask_rate = 0.15;
  int dpt_batch_size = 8;
  int dpt_epochs = 3;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Diagnostic hook: trains the domain head on flipped labels to reproduce
  // the adversarial label-flip degeneracy on demand.
  bool invert_domain_labels = false;

  void validate() const;
  std::string cache_key() const;
};

struct StoppingCriterion {
  enum class Kind { kFixedEpochs, kMinSourceLoss, kMinMixedLoss };
  Kind kind = Kind::kMinMixedLoss;
  int fixed_epochs = 10;
  int patience = 3;

  static StoppingCriterion fixed(int epochs);
  static StoppingCriterion min_source_loss(int patience);
  static StoppingCriterion min_mixed_loss(int patience);
  static StoppingCriterion parse(const std::string& text);
  std::string name() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double l_clf_val;
  double l_mlm_val;
  double l_adv_val;
  double mixed_val;
  double lambda;           // realized source fraction of the epoch's train stream
  double source_val_acc;
  double domain_val_acc;   // adversarial regime only

  EpochRecord();
};

struct RunRecord {
  std::string regime;  // so | dpt_stage | dpt | dat | udalm
  std::string pair;    // "source_domain->target_domain"
  std::uint64_t seed = 0;
  std::string stopping;
  std::vector<EpochRecord> epochs;
  int chosen_epoch = 0;
  double target_test_acc;
  std::vector<std::string> warnings;

  RunRecord();
  void save(const std::string& path) const;
  static RunRecord load(const std::string& path);
};

// Token sequence plus the example metadata trainers need.
struct Encoded {
  tok::TokenSequence seq;
  int label = data::kLabelAbsent;
  long id = -1;
};

// One logical training batch: n labeled source samples and m masked target
// samples. Only target sequences may carry mlm_labels.
struct MixedBatch {
  std::vector<Encoded> source;
  std::vector<Encoded> target;

  void check() const;
};

struct EncodedSplits {
  std::vector<Encoded> source_train, source_val;
  std::vector<Encoded> target_train, target_val;  // pristine, unmasked
  std::vector<Encoded> target_test;
  std::set<long> test_ids;
  tok::Vocab vocab;  // owned copy; masking needs it at batch construction
};

EncodedSplits encode_splits(const data::SplitSet& splits, const tok::Vocab& vocab,
                            int max_len);

// Mixing weight: the source fraction n/(n+m).
double compute_lambda(int n_source, int m_target);

// lambda * l_clf + (1 - lambda) * l_mlm, exact at the endpoints. NaN inputs
// are rejected naming the offending term.
double mixed_loss(double l_clf, double l_mlm, double lambda);

struct InterleaveResult {
  std::vector<MixedBatch> batches;
  int source_recycles = 0;
};

// Epoch schedule: per logical batch, one source sub-batch and
// target_subbatches masked target sub-batches. The target stream defines the
// epoch; the shuffled source stream recycles as needed. Deterministic given
// epoch_seed.
InterleaveResult interleave(const std::vector<Encoded>& source,
                            const std::vector<Encoded>& target_pristine,
                            const TrainConfig& cfg, const tok::Vocab& vocab,
                            std::uint64_t epoch_seed);

// AdamW: bias-corrected moments, decay applied to the parameter itself.
// Parameters without a gradient entry are treated as zero-gradient (decay
// still applies). Non-finite gradients abort naming the tensor.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg);
  void step(nn::EncoderParams& params, const std::map<std::string, Tensor>& grads);
  long step_count() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct EvalResult {
  long total = 0;
  long correct = 0;
  std::vector<long> class_total;    // indexed by true label
  std::vector<long> class_correct;
  double accuracy = 0.0;
};

EvalResult evaluate(const nn::EncoderParams& params, const std::vector<Encoded>& dataset);

struct TrainResult {
  nn::EncoderParams params;  // restored to the chosen epoch
  RunRecord record;
  std::vector<nn::EncoderParams> epoch_params;  // populated when requested
};

// The four regimes. dat and udalm are meant to start from a domain-pretrained
// checkpoint; they accept any params.
TrainResult train_source_only(nn::EncoderParams params, const EncodedSplits& splits,
                              const TrainConfig& cfg, const StoppingCriterion& criterion,
                              bool keep_epoch_params = false);
TrainResult train_dpt(nn::EncoderParams params, const EncodedSplits& splits,
                      const TrainConfig& cfg);
TrainResult train_dat(nn::EncoderParams params, const EncodedSplits& splits,
                      const TrainConfig& cfg, const StoppingCriterion& criterion,
                      bool keep_epoch_params = false);
TrainResult train_udalm(nn::EncoderParams params, const EncodedSplits& splits,
                        const TrainConfig& cfg, const StoppingCriterion& criterion,
                        bool keep_epoch_params = false);

// Pure epoch selection over a finished record, with patience-halt semantics:
// returns the epoch whose parameters the criterion would keep. Criteria
// referencing a loss the record does not track are rejected.
int select_epoch(const RunRecord& record, const StoppingCriterion& criterion);

}  // namespace udalm::train

#endif
