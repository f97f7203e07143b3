#include "udalm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "udalm/errors.hpp"
#include "udalm/rng.hpp"
#include "udalm/textio.hpp"

namespace udalm::train {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool has(double x) { return !std::isnan(x); }

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw UsageError("train config: learning_rate must be positive");
  if (epochs < 0) throw UsageError("train config: epochs must be nonnegative");
  if (patience <= 0) throw UsageError("train config: patience must be positive");
  if (epochs > 0 && patience > epochs)
    throw UsageError("train config: patience exceeds epochs");
  if (source_subbatch <= 0 || target_subbatches <= 0 || subbatch_size <= 0 ||
      accumulate_every <= 0 || dpt_batch_size <= 0 || dpt_epochs < 0)
    throw UsageError("train config: batch structure counts must be positive");
  if (lambda_d < 0.0) throw UsageError("train config: lambda_d must be nonnegative");
  if (weight_decay < 0.0) throw UsageError("train config: weight_decay must be nonnegative");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0))
    throw UsageError("train config: mask_rate must be in [0,1]");
}

std::string TrainConfig::cache_key() const {
  std::ostringstream os;
  os << "lr=" << learning_rate << ";ep=" << epochs << ";pat=" << patience
     << ";ssb=" << source_subbatch << ";tsb=" << target_subbatches
     << ";sbs=" << subbatch_size << ";acc=" << accumulate_every
     << ";ld=" << lambda_d << ";wd=" << weight_decay << ";mask=" << mask_rate
     << ";dptb=" << dpt_batch_size << ";dpte=" << dpt_epochs
     << ";inv=" << (invert_domain_labels ? 1 : 0);
  return os.str();
}

StoppingCriterion StoppingCriterion::fixed(int epochs) {
  StoppingCriterion c;
  c.kind = Kind::kFixedEpochs;
  c.fixed_epochs = epochs;
  return c;
}

StoppingCriterion StoppingCriterion::min_source_loss(int patience) {
  StoppingCriterion c;
  c.kind = Kind::kMinSourceLoss;
  c.patience = patience;
  return c;
}

StoppingCriterion StoppingCriterion::min_mixed_loss(int patience) {
  StoppingCriterion c;
  c.kind = Kind::kMinMixedLoss;
  c.patience = patience;
  return c;
}

StoppingCriterion StoppingCriterion::parse(const std::string& text) {
  auto colon = text.find(':');
  std::string head = colon == std::string::npos ? text : text.substr(0, colon);
  std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (head == "fixed") return fixed(arg.empty() ? 10 : std::stoi(arg));
  if (head == "min_source_loss") return min_source_loss(arg.empty() ? 3 : std::stoi(arg));
  if (head == "min_mixed_loss") return min_mixed_loss(arg.empty() ? 3 : std::stoi(arg));
  throw UsageError("unknown stopping criterion '" + text + "'");
}

std::string StoppingCriterion::name() const {
  switch (kind) {
    case Kind::kFixedEpochs:
      return "fixed:" + std::to_string(fixed_epochs);
    case Kind::kMinSourceLoss:
      return "min_source_loss:" + std::to_string(patience);
    case Kind::kMinMixedLoss:
      return "min_mixed_loss:" + std::to_string(patience);
  }
  return "?";
}

EpochRecord::EpochRecord()
    : l_clf_val(kNan),
      l_mlm_val(kNan),
      l_adv_val(kNan),
      mixed_val(kNan),
      lambda(kNan),
      source_val_acc(kNan),
      domain_val_acc(kNan) {}

RunRecord::RunRecord() : target_test_acc(kNan) {}

void RunRecord::save(const std::string& path) const {
  std::ostringstream os;
  os << "udalm-run-record\tv1\n";
  os << "regime\t" << regime << "\n";
  if (!pair.empty()) os << "pair\t" << pair << "\n";
  os << "seed\t" << seed << "\n";
  os << "stopping\t" << stopping << "\n";
  for (const auto& e : epochs) {
    os << "epoch\t" << e.epoch << "\tl_clf_val=" << fmt_double(e.l_clf_val)
       << "\tl_mlm_val=" << fmt_double(e.l_mlm_val)
       << "\tl_adv_val=" << fmt_double(e.l_adv_val)
       << "\tmixed_val=" << fmt_double(e.mixed_val) << "\tlambda=" << fmt_double(e.lambda)
       << "\tsource_val_acc=" << fmt_double(e.source_val_acc)
       << "\tdomain_val_acc=" << fmt_double(e.domain_val_acc) << "\n";
  }
  os << "chosen_epoch\t" << chosen_epoch << "\n";
  os << "target_test_acc\t" << fmt_double(target_test_acc) << "\n";
  for (const auto& w : warnings) os << "warning\t" << w << "\n";

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("run record: cannot write " + tmp);
    out << os.str();
    if (!out) throw DataError("run record: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("run record: cannot rename " + tmp + " to " + path);
}

RunRecord RunRecord::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("run record: cannot read " + path);
  RunRecord r;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    const std::string& key = fields[0];
    auto val = [&](std::size_t i) -> const std::string& {
      if (i >= fields.size())
        throw DataError("run record: missing field at " + path + ":" + std::to_string(lineno));
      return fields[i];
    };
    if (key == "udalm-run-record") {
      header_seen = true;
    } else if (key == "regime") {
      r.regime = val(1);
    } else if (key == "pair") {
      r.pair = val(1);
    } else if (key == "seed") {
      r.seed = std::stoull(val(1));
    } else if (key == "stopping") {
      r.stopping = val(1);
    } else if (key == "epoch") {
      EpochRecord e;
      e.epoch = std::stoi(val(1));
      for (std::size_t i = 2; i < fields.size(); ++i) {
        auto eq = fields[i].find('=');
        if (eq == std::string::npos) continue;
        std::string k = fields[i].substr(0, eq);
        double v = parse_double(fields[i].substr(eq + 1));
        if (k == "l_clf_val") e.l_clf_val = v;
        else if (k == "l_mlm_val") e.l_mlm_val = v;
        else if (k == "l_adv_val") e.l_adv_val = v;
        else if (k == "mixed_val") e.mixed_val = v;
        else if (k == "lambda") e.lambda = v;
        else if (k == "source_val_acc") e.source_val_acc = v;
        else if (k == "domain_val_acc") e.domain_val_acc = v;
      }
      r.epochs.push_back(e);
    } else if (key == "chosen_epoch") {
      r.chosen_epoch = std::stoi(val(1));
    } else if (key == "target_test_acc") {
      r.target_test_acc = parse_double(val(1));
    } else if (key == "warning") {
      r.warnings.push_back(val(1));
    } else {
      throw DataError("run record: unknown key '" + key + "' at " + path + ":" +
                      std::to_string(lineno));
    }
  }
  if (!header_seen) throw DataError("run record: missing header in " + path);
  return r;
}

void MixedBatch::check() const {
  for (const auto& e : source) {
    if (e.seq.has_mlm_labels())
      throw DataError("mixed batch: source sequence carries mlm labels (id " +
                      std::to_string(e.id) + ")");
    if (e.label == data::kLabelAbsent)
      throw DataError("mixed batch: unlabeled source sequence (id " +
                      std::to_string(e.id) + ")");
  }
}

EncodedSplits encode_splits(const data::SplitSet& splits, const tok::Vocab& vocab,
                            int max_len) {
  EncodedSplits out;
  out.vocab = vocab;
  auto enc = [&](const std::vector<data::LabeledExample>& in, std::vector<Encoded>& dst) {
    dst.reserve(in.size());
    for (const auto& ex : in) {
      Encoded e;
      e.seq = tok::encode(ex.text, vocab, max_len);
      e.label = ex.label;
      e.id = ex.id;
      dst.push_back(std::move(e));
    }
  };
  enc(splits.source_train, out.source_train);
  enc(splits.source_val, out.source_val);
  enc(splits.target_train_unlabeled, out.target_train);
  enc(splits.target_val_unlabeled, out.target_val);
  enc(splits.target_test, out.target_test);
  for (const auto& e : out.target_test) out.test_ids.insert(e.id);
  return out;
}

double compute_lambda(int n_source, int m_target) {
  if (n_source < 0 || m_target < 0)
    throw UsageError("compute_lambda: negative counts");
  if (n_source + m_target == 0)
    throw UsageError("compute_lambda: n + m must be positive");
  return static_cast<double>(n_source) / static_cast<double>(n_source + m_target);
}

double mixed_loss(double l_clf, double l_mlm, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw UsageError("mixed_loss: lambda must be in [0,1], got " + std::to_string(lambda));
  if (lambda > 0.0 && std::isnan(l_clf))
    throw NumericError("mixed_loss: l_clf is NaN");
  if (lambda < 1.0 && std::isnan(l_mlm))
    throw NumericError("mixed_loss: l_mlm is NaN");
  if (lambda == 1.0) return l_clf;
  if (lambda == 0.0) return l_mlm;
  return lambda * l_clf + (1.0 - lambda) * l_mlm;
}

InterleaveResult interleave(const std::vector<Encoded>& source,
                            const std::vector<Encoded>& target_pristine,
                            const TrainConfig& cfg, const tok::Vocab& vocab,
                            std::uint64_t epoch_seed) {
  if (source.empty() || target_pristine.empty())
    throw UsageError("interleave: both streams must be non-empty");
  std::vector<int> src_order(source.size());
  for (std::size_t i = 0; i < src_order.size(); ++i) src_order[i] = static_cast<int>(i);
  std::vector<int> tgt_order(target_pristine.size());
  for (std::size_t i = 0; i < tgt_order.size(); ++i) tgt_order[i] = static_cast<int>(i);

  Rng src_rng(derive_seed(epoch_seed, "src_shuffle"));
  Rng tgt_rng(derive_seed(epoch_seed, "tgt_shuffle"));
  Rng mask_rng(derive_seed(epoch_seed, "mask"));
  src_rng.shuffle(src_order);
  tgt_rng.shuffle(tgt_order);

  InterleaveResult res;
  const int tgt_per_batch = cfg.target_subbatches * cfg.subbatch_size;
  std::size_t src_pos = 0;
  std::size_t src_consumed = 0;
  std::size_t tgt_pos = 0;
  while (tgt_pos < tgt_order.size()) {
    MixedBatch batch;
    for (int i = 0; i < cfg.source_subbatch; ++i) {
      if (src_pos == src_order.size()) src_pos = 0;  // recycle within the epoch
      batch.source.push_back(source[src_order[src_pos]]);
      ++src_pos;
      ++src_consumed;
    }
    for (int i = 0; i < tgt_per_batch && tgt_pos < tgt_order.size(); ++i, ++tgt_pos) {
      Encoded e = target_pristine[tgt_order[tgt_pos]];
      e.seq = tok::apply_mlm_mask(e.seq, vocab, cfg.mask_rate, mask_rng);
      batch.target.push_back(std::move(e));
    }
    batch.check();
    res.batches.push_back(std::move(batch));
  }
  res.source_recycles =
      src_consumed == 0 ? 0 : static_cast<int>((src_consumed - 1) / source.size());
  return res;
}

AdamW::AdamW(const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {}

void AdamW::step(nn::EncoderParams& params, const std::map<std::string, Tensor>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.tensors) {
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g != nullptr) {
      if (!g->same_shape(p))
        throw ShapeError("optimizer: gradient shape " + g->shape_str() + " for " + name +
                         " of shape " + p.shape_str());
      if (!g->all_finite())
        throw NumericError("optimizer: non-finite gradient for tensor " + name);
    }
    Tensor& m = m_.emplace(name, Tensor(p.rows, p.cols)).first->second;
    Tensor& v = v_.emplace(name, Tensor(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? g->v[i] : 0.0;
      m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * gi;
      v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      p.v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      p.v[i] -= lr_ * weight_decay_ * p.v[i];  // decoupled decay
    }
  }
}

EvalResult evaluate(const nn::EncoderParams& params, const std::vector<Encoded>& dataset) {
  if (dataset.empty()) throw UsageError("evaluate: empty dataset");
  EvalResult r;
  r.class_total.assign(params.config.num_classes, 0);
  r.class_correct.assign(params.config.num_classes, 0);
  for (const auto& e : dataset) {
    if (e.label == data::kLabelAbsent)
      throw UsageError("evaluate: dataset contains unlabeled examples");
    int pred = nn::predict_class(params, e.seq);
    ++r.total;
    ++r.class_total[e.label];
    if (pred == e.label) {
      ++r.correct;
      ++r.class_correct[e.label];
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

namespace {

enum class Regime { kSourceOnly, kDptStage, kAdversarial, kUdalm };

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kSourceOnly: return "so";
    case Regime::kDptStage: return "dpt_stage";
    case Regime::kAdversarial: return "dat";
    case Regime::kUdalm: return "udalm";
  }
  return "?";
}

// Weighted gradient accumulator: sums hold grad * weight, so dividing by the
// total weight recovers the gradient of the weighted-mean loss.
struct GradAccum {
  std::map<std::string, Tensor> sums;
  double weight = 0.0;
  long samples = 0;

  void add(const std::map<std::string, Tensor>& grads, double w, long n) {
    for (const auto& [name, g] : grads) {
      auto it = sums.find(name);
      if (it == sums.end())
        it = sums.emplace(name, Tensor(g.rows, g.cols)).first;
      axpy(w, g, it->second);
    }
    weight += w;
    samples += n;
  }

  void add_scaled_into(double coeff, std::map<std::string, Tensor>& out) const {
    if (weight == 0.0) return;
    const double s = coeff / weight;
    for (const auto& [name, g] : sums) {
      auto it = out.find(name);
      if (it == out.end()) it = out.emplace(name, Tensor(g.rows, g.cols)).first;
      axpy(s, g, it->second);
    }
  }

  bool empty() const { return weight == 0.0; }
  void reset() {
    sums.clear();
    weight = 0.0;
    samples = 0;
  }
};

void check_quarantine(const std::vector<Encoded>& batch, const std::set<long>& test_ids) {
  for (const auto& e : batch)
    if (test_ids.count(e.id))
      throw DataError("quarantine violation: test example id " + std::to_string(e.id) +
                      " reached a training batch");
}

// Classification loss over a source sub-batch: per-sample cross-entropy mean.
// Returns invalid Value when the sub-batch is empty.
ad::Value clf_subbatch_loss(ad::Tape& tape, const nn::EncoderParams& params,
                            const std::vector<Encoded>& subbatch) {
  ad::Value total;
  const double inv = subbatch.empty() ? 0.0 : 1.0 / static_cast<double>(subbatch.size());
  for (const auto& e : subbatch) {
    nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
    ad::Value logits = nn::clf_logits(tape, params, g.cls_feature);
    ad::Value ce = tape.cross_entropy(logits, {e.label}, tok::kIgnoreIndex);
    ad::Value term = tape.scale(ce, inv);
    total = total.valid() ? tape.add(total, term) : term;
  }
  return total;
}

// MLM loss over a masked target sub-batch: token-mean across the sub-batch.
// out_tokens receives the number of scored positions.
ad::Value mlm_subbatch_loss(ad::Tape& tape, const nn::EncoderParams& params,
                            const std::vector<Encoded>& subbatch, long& out_tokens) {
  struct SeqTerm {
    ad::Value ce;
    long tokens;
  };
  std::vector<SeqTerm> terms;
  long total_tokens = 0;
  for (const auto& e : subbatch) {
    std::vector<int> positions;
    std::vector<int> targets;
    for (int i = 0; i < e.seq.length(); ++i) {
      if (e.seq.has_mlm_labels() && e.seq.mlm_labels[i] != tok::kIgnoreIndex) {
        positions.push_back(i);
        targets.push_back(e.seq.mlm_labels[i]);
      }
    }
    if (positions.empty()) continue;
    nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
    ad::Value logits = nn::mlm_logits(tape, params, g.hidden_states, positions);
    ad::Value ce = tape.cross_entropy(logits, targets, tok::kIgnoreIndex);
    terms.push_back({ce, static_cast<long>(positions.size())});
    total_tokens += static_cast<long>(positions.size());
  }
  out_tokens = total_tokens;
  ad::Value total;
  for (const auto& t : terms) {
    ad::Value w = tape.scale(t.ce, static_cast<double>(t.tokens) / static_cast<double>(total_tokens));
    total = total.valid() ? tape.add(total, w) : w;
  }
  return total;
}

// Domain-classification loss over already-encoded CLS features; sample mean.
ad::Value domain_subbatch_loss(ad::Tape& tape, const nn::EncoderParams& params,
                               const std::vector<ad::Value>& cls_features,
                               const std::vector<int>& domain_labels, double lambda_d) {
  ad::Value total;
  const double inv = 1.0 / static_cast<double>(cls_features.size());
  for (std::size_t i = 0; i < cls_features.size(); ++i) {
    ad::Value logits = nn::domain_logits(tape, params, cls_features[i], lambda_d);
    ad::Value ce = tape.cross_entropy(logits, {domain_labels[i]}, tok::kIgnoreIndex);
    ad::Value term = tape.scale(ce, inv);
    total = total.valid() ? tape.add(total, term) : term;
  }
  return total;
}

struct ValMetrics {
  double l_clf = kNan;
  double acc = kNan;
  double l_mlm = kNan;
  double l_adv = kNan;
  double domain_acc = kNan;
};

double clf_val_loss(const nn::EncoderParams& params, const std::vector<Encoded>& val,
                    double& acc_out) {
  double total = 0.0;
  long correct = 0;
  for (const auto& e : val) {
    ad::Tape tape;
    nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
    ad::Value logits = nn::clf_logits(tape, params, g.cls_feature);
    const Tensor& lv = tape.value(logits);
    int best = 0;
    for (int j = 1; j < lv.cols; ++j)
      if (lv.v[j] > lv.v[best]) best = j;
    if (best == e.label) ++correct;
    total += tape.value(tape.cross_entropy(logits, {e.label}, tok::kIgnoreIndex)).v[0];
  }
  acc_out = val.empty() ? kNan : static_cast<double>(correct) / static_cast<double>(val.size());
  return val.empty() ? kNan : total / static_cast<double>(val.size());
}

double mlm_val_loss(const nn::EncoderParams& params, const std::vector<Encoded>& masked_val) {
  double weighted = 0.0;
  long tokens = 0;
  for (const auto& e : masked_val) {
    std::vector<int> positions;
    std::vector<int> targets;
    for (int i = 0; i < e.seq.length(); ++i) {
      if (e.seq.mlm_labels[i] != tok::kIgnoreIndex) {
        positions.push_back(i);
        targets.push_back(e.seq.mlm_labels[i]);
      }
    }
    if (positions.empty()) continue;
    ad::Tape tape;
    nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
    ad::Value logits = nn::mlm_logits(tape, params, g.hidden_states, positions);
    double ce = tape.value(tape.cross_entropy(logits, targets, tok::kIgnoreIndex)).v[0];
    weighted += ce * static_cast<double>(positions.size());
    tokens += static_cast<long>(positions.size());
  }
  return tokens == 0 ? kNan : weighted / static_cast<double>(tokens);
}

// dom_acc is balanced over domains so a constant head scores exactly 0.5
// regardless of validation-set sizes.
void domain_val_metrics(const nn::EncoderParams& params, const std::vector<Encoded>& src_val,
                        const std::vector<Encoded>& tgt_val, double& l_adv, double& dom_acc) {
  double total = 0.0;
  long n = 0;
  double acc_sum = 0.0;
  int domains_seen = 0;
  auto run = [&](const std::vector<Encoded>& set, int domain) {
    if (set.empty()) return;
    long correct = 0;
    for (const auto& e : set) {
      ad::Tape tape;
      nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
      ad::Value logits = nn::domain_logits(tape, params, g.cls_feature, 0.0);
      const Tensor& lv = tape.value(logits);
      int best = lv.v[1] > lv.v[0] ? 1 : 0;
      if (best == domain) ++correct;
      total += tape.value(tape.cross_entropy(logits, {domain}, tok::kIgnoreIndex)).v[0];
      ++n;
    }
    acc_sum += static_cast<double>(correct) / static_cast<double>(set.size());
    ++domains_seen;
  };
  run(src_val, 0);
  run(tgt_val, 1);
  l_adv = n == 0 ? kNan : total / static_cast<double>(n);
  dom_acc = domains_seen == 0 ? kNan : acc_sum / domains_seen;
}

// Criterion metric for one epoch; NaN when the record does not track it.
double criterion_metric(const EpochRecord& e, const StoppingCriterion& c) {
  switch (c.kind) {
    case StoppingCriterion::Kind::kFixedEpochs:
      return 0.0;
    case StoppingCriterion::Kind::kMinSourceLoss:
      return e.l_clf_val;
    case StoppingCriterion::Kind::kMinMixedLoss:
      return e.mixed_val;
  }
  return kNan;
}

struct RunState {
  RunRecord record;
  std::vector<nn::EncoderParams> epoch_params;
  nn::EncoderParams best_params;
  int best_epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
};

// Shared epoch skeleton: regimes provide the per-epoch training pass through
// `train_epoch(epoch_index, epoch_seed)` returning the realized lambda.
// The caller owns params; train_epoch mutates it in place.
template <typename TrainEpochFn, typename ValidateFn>
TrainResult run_epochs(Regime regime, nn::EncoderParams& params, const TrainConfig& cfg,
                       const StoppingCriterion& criterion, bool keep_epoch_params,
                       TrainEpochFn&& train_epoch, ValidateFn&& validate,
                       std::vector<std::string> warnings) {
  const int total_epochs = criterion.kind == StoppingCriterion::Kind::kFixedEpochs
                               ? criterion.fixed_epochs
                               : cfg.epochs;
  RunState st;
  st.record.regime = regime_name(regime);
  st.record.seed = cfg.seed;
  st.record.stopping = criterion.name();
  st.record.warnings = std::move(warnings);

  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch));
    double lambda = train_epoch(epoch, epoch_seed);

    EpochRecord er;
    er.epoch = epoch;
    er.lambda = lambda;
    validate(er);
    if (regime == Regime::kUdalm)
      er.mixed_val = mixed_loss(er.l_clf_val, er.l_mlm_val, er.lambda);
    st.record.epochs.push_back(er);

    if (keep_epoch_params) st.epoch_params.push_back(params);

    if (criterion.kind != StoppingCriterion::Kind::kFixedEpochs) {
      double metric = criterion_metric(er, criterion);
      if (std::isnan(metric))
        throw UsageError("stopping criterion " + criterion.name() +
                         " references a loss this run does not track");
      if (metric < st.best_metric) {
        st.best_metric = metric;
        st.best_epoch = epoch;
        st.best_params = params;
      } else if (epoch - st.best_epoch >= criterion.patience) {
        break;  // patience exhausted
      }
    }
  }

  TrainResult out;
  if (criterion.kind == StoppingCriterion::Kind::kFixedEpochs || st.record.epochs.empty()) {
    st.record.chosen_epoch = static_cast<int>(st.record.epochs.size());
    out.params = std::move(params);
  } else {
    st.record.chosen_epoch = st.best_epoch;
    out.params = std::move(st.best_params);
  }
  out.record = std::move(st.record);
  out.epoch_params = std::move(st.epoch_params);
  return out;
}

std::vector<std::vector<Encoded>> chunk(const std::vector<Encoded>& in, int size) {
  std::vector<std::vector<Encoded>> out;
  for (std::size_t i = 0; i < in.size(); i += size) {
    std::vector<Encoded> c(in.begin() + i,
                           in.begin() + std::min(in.size(), i + static_cast<std::size_t>(size)));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Encoded> masked_copy(const std::vector<Encoded>& set, const tok::Vocab& vocab,
                                 double rate, std::uint64_t seed) {
  std::vector<Encoded> out = set;
  Rng rng(seed);
  for (auto& e : out) e.seq = tok::apply_mlm_mask(e.seq, vocab, rate, rng);
  return out;
}

}  // namespace

TrainResult train_source_only(nn::EncoderParams params, const EncodedSplits& splits,
                              const TrainConfig& cfg, const StoppingCriterion& criterion,
                              bool keep_epoch_params) {
  cfg.validate();
  if (splits.source_train.empty()) throw DataError("source-only training: empty source split");
  AdamW opt(cfg);

  auto train_epoch = [&](int /*epoch*/, std::uint64_t epoch_seed) -> double {
    std::vector<int> order(splits.source_train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(epoch_seed, "src_shuffle"));
    rng.shuffle(order);

    GradAccum clf;
    int pending = 0;
    auto flush = [&]() {
      if (clf.empty()) return;
      std::map<std::string, Tensor> grads;
      clf.add_scaled_into(1.0, grads);
      opt.step(params, grads);
      clf.reset();
      pending = 0;
    };
    std::vector<Encoded> subbatch;
    auto process = [&]() {
      if (subbatch.empty()) return;
      check_quarantine(subbatch, splits.test_ids);
      ad::Tape tape;
      ad::Value loss = clf_subbatch_loss(tape, params, subbatch);
      tape.backward(loss);
      clf.add(tape.gradient_map(), static_cast<double>(subbatch.size()),
              static_cast<long>(subbatch.size()));
      subbatch.clear();
      if (++pending == cfg.accumulate_every) flush();
    };
    for (int idx : order) {
      subbatch.push_back(splits.source_train[idx]);
      if (static_cast<int>(subbatch.size()) == cfg.source_subbatch) process();
    }
    process();
    flush();
    return 1.0;
  };

  auto validate = [&](EpochRecord& er) {
    er.l_clf_val = clf_val_loss(params, splits.source_val, er.source_val_acc);
  };

  return run_epochs(Regime::kSourceOnly, params, cfg, criterion,
                    keep_epoch_params, train_epoch, validate, {});
}

TrainResult train_dpt(nn::EncoderParams params, const EncodedSplits& splits,
                      const TrainConfig& cfg) {
  cfg.validate();
  TrainConfig stage_cfg = cfg;
  stage_cfg.epochs = cfg.dpt_epochs;
  AdamW opt(stage_cfg);

  if (splits.target_train.empty()) {
    TrainResult out;
    out.params = std::move(params);
    out.record.regime = "dpt_stage";
    out.record.seed = cfg.seed;
    out.record.stopping = StoppingCriterion::fixed(0).name();
    out.record.warnings.push_back("no unlabeled target data; domain pretraining skipped");
    return out;
  }

  const std::uint64_t val_mask_seed = derive_seed(cfg.seed, "val_mask");
  std::vector<Encoded> masked_val =
      masked_copy(splits.target_val, splits.vocab, cfg.mask_rate, val_mask_seed);

  auto train_epoch = [&](int /*epoch*/, std::uint64_t epoch_seed) -> double {
    std::vector<int> order(splits.target_train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(epoch_seed, "tgt_shuffle"));
    rng.shuffle(order);
    Rng mask_rng(derive_seed(epoch_seed, "mask"));

    std::vector<Encoded> batch;
    auto process = [&]() {
      if (batch.empty()) return;
      check_quarantine(batch, splits.test_ids);
      for (auto& e : batch)
        e.seq = tok::apply_mlm_mask(e.seq, splits.vocab, cfg.mask_rate, mask_rng);
      ad::Tape tape;
      long tokens = 0;
      ad::Value loss = mlm_subbatch_loss(tape, params, batch, tokens);
      if (loss.valid()) {
        tape.backward(loss);
        GradAccum mlm;
        mlm.add(tape.gradient_map(), static_cast<double>(tokens),
                static_cast<long>(batch.size()));
        std::map<std::string, Tensor> grads;
        mlm.add_scaled_into(1.0, grads);
        opt.step(params, grads);  // one step per batch during domain pretraining
      }
      batch.clear();
    };
    for (int idx : order) {
      batch.push_back(splits.target_train[idx]);
      if (static_cast<int>(batch.size()) == cfg.dpt_batch_size) process();
    }
    process();
    return 0.0;
  };

  auto validate = [&](EpochRecord& er) { er.l_mlm_val = mlm_val_loss(params, masked_val); };

  return run_epochs(Regime::kDptStage, params, stage_cfg,
                    StoppingCriterion::fixed(cfg.dpt_epochs), false, train_epoch, validate,
                    {});
}

TrainResult train_dat(nn::EncoderParams params, const EncodedSplits& splits,
                      const TrainConfig& cfg, const StoppingCriterion& criterion,
                      bool keep_epoch_params) {
  cfg.validate();
  if (splits.source_train.empty()) throw DataError("adversarial training: empty source split");
  if (splits.target_train.empty()) {
    TrainResult out = train_source_only(std::move(params), splits, cfg, criterion,
                                        keep_epoch_params);
    out.record.regime = "dat";
    out.record.warnings.push_back(
        "no unlabeled target data; adversarial run degenerates to source-only");
    return out;
  }
  AdamW opt(cfg);

  auto train_epoch = [&](int /*epoch*/, std::uint64_t epoch_seed) -> double {
    std::vector<int> src_order(splits.source_train.size());
    for (std::size_t i = 0; i < src_order.size(); ++i) src_order[i] = static_cast<int>(i);
    Rng src_rng(derive_seed(epoch_seed, "src_shuffle"));
    src_rng.shuffle(src_order);

    std::vector<int> tgt_order(splits.target_train.size());
    for (std::size_t i = 0; i < tgt_order.size(); ++i) tgt_order[i] = static_cast<int>(i);
    Rng tgt_rng(derive_seed(epoch_seed, "dat_tgt_shuffle"));
    tgt_rng.shuffle(tgt_order);
    std::size_t tgt_pos = 0;

    GradAccum clf, adv;
    int pending = 0;
    auto flush = [&]() {
      if (clf.empty() && adv.empty()) return;
      std::map<std::string, Tensor> grads;
      clf.add_scaled_into(1.0, grads);
      adv.add_scaled_into(1.0, grads);
      opt.step(params, grads);
      clf.reset();
      adv.reset();
      pending = 0;
    };
    std::vector<Encoded> subbatch;
    auto process = [&]() {
      if (subbatch.empty()) return;
      check_quarantine(subbatch, splits.test_ids);
      std::vector<Encoded> tgt_subbatch;
      for (int i = 0; i < cfg.subbatch_size; ++i) {
        if (tgt_pos == tgt_order.size()) tgt_pos = 0;
        tgt_subbatch.push_back(splits.target_train[tgt_order[tgt_pos]]);
        ++tgt_pos;
      }
      check_quarantine(tgt_subbatch, splits.test_ids);

      ad::Tape tape;
      std::vector<ad::Value> cls;
      std::vector<int> dom_labels;
      ad::Value clf_loss = ad::Value{};
      {
        const double inv = 1.0 / static_cast<double>(subbatch.size());
        for (const auto& e : subbatch) {
          nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
          ad::Value logits = nn::clf_logits(tape, params, g.cls_feature);
          ad::Value ce = tape.cross_entropy(logits, {e.label}, tok::kIgnoreIndex);
          ad::Value term = tape.scale(ce, inv);
          clf_loss = clf_loss.valid() ? tape.add(clf_loss, term) : term;
          cls.push_back(g.cls_feature);
          dom_labels.push_back(cfg.invert_domain_labels ? 1 : 0);
        }
      }
      for (const auto& e : tgt_subbatch) {
        nn::EncoderGraph g = nn::encode_sequence(tape, params, e.seq);
        cls.push_back(g.cls_feature);
        dom_labels.push_back(cfg.invert_domain_labels ? 0 : 1);
      }
      ad::Value adv_loss = domain_subbatch_loss(tape, params, cls, dom_labels, cfg.lambda_d);

      // Separate backward passes keep the classification gradient identical
      // to a source-only run over the same schedule.
      tape.backward(clf_loss);
      clf.add(tape.gradient_map(), static_cast<double>(subbatch.size()),
              static_cast<long>(subbatch.size()));
      tape.backward(adv_loss);
      adv.add(tape.gradient_map(), static_cast<double>(cls.size()),
              static_cast<long>(cls.size()));

      subbatch.clear();
      if (++pending == cfg.accumulate_every) flush();
    };
    for (int idx : src_order) {
      subbatch.push_back(splits.source_train[idx]);
      if (static_cast<int>(subbatch.size()) == cfg.source_subbatch) process();
    }
    process();
    flush();
    return 1.0;
  };

  auto validate = [&](EpochRecord& er) {
    er.l_clf_val = clf_val_loss(params, splits.source_val, er.source_val_acc);
    domain_val_metrics(params, splits.source_val, splits.target_val, er.l_adv_val,
                       er.domain_val_acc);
  };

  TrainResult out = run_epochs(Regime::kAdversarial, params, cfg, criterion,
                               keep_epoch_params, train_epoch, validate, {});

  // Label-flip degeneracy probe: a domain head persistently below chance on
  // held-out features is solving the flipped problem.
  const int probe_window = 3;
  if (static_cast<int>(out.record.epochs.size()) >= probe_window) {
    bool flipped = true;
    for (int i = 0; i < probe_window; ++i) {
      const EpochRecord& e = out.record.epochs[out.record.epochs.size() - 1 - i];
      if (!has(e.domain_val_acc) || e.domain_val_acc >= 0.5) flipped = false;
    }
    if (flipped)
      out.record.warnings.push_back(
          "domain head accuracy persistently below 0.5 on held-out features; "
          "adversarial label-flip degeneracy suspected");
  }
  return out;
}

TrainResult train_udalm(nn::EncoderParams params, const EncodedSplits& splits,
                        const TrainConfig& cfg, const StoppingCriterion& criterion,
                        bool keep_epoch_params) {
  cfg.validate();
  if (splits.source_train.empty()) throw DataError("udalm training: empty source split");
  if (splits.target_train.empty()) {
    // lambda = 1 makes the mixed loss equal the classification loss, so the
    // mixed-loss criterion degrades to the source-loss one.
    StoppingCriterion fallback = criterion;
    if (fallback.kind == StoppingCriterion::Kind::kMinMixedLoss)
      fallback = StoppingCriterion::min_source_loss(criterion.patience);
    TrainResult out = train_source_only(std::move(params), splits, cfg, fallback,
                                        keep_epoch_params);
    out.record.regime = "udalm";
    out.record.warnings.push_back(
        "no unlabeled target data; mixed-loss run degenerates to source-only (lambda=1)");
    return out;
  }
  AdamW opt(cfg);

  const std::uint64_t val_mask_seed = derive_seed(cfg.seed, "val_mask");
  std::vector<Encoded> masked_val =
      masked_copy(splits.target_val, splits.vocab, cfg.mask_rate, val_mask_seed);

  auto train_epoch = [&](int /*epoch*/, std::uint64_t epoch_seed) -> double {
    InterleaveResult sched =
        interleave(splits.source_train, splits.target_train, cfg, splits.vocab, epoch_seed);

    long epoch_src_samples = 0, epoch_tgt_samples = 0;
    GradAccum clf, mlm;
    int pending = 0;
    auto flush = [&]() {
      pending = 0;
      if (clf.empty() && mlm.empty()) {
        clf.reset();
        mlm.reset();
        return;
      }
      // mixed-loss step: lambda from the realized window composition
      double lambda = compute_lambda(static_cast<int>(clf.samples),
                                     static_cast<int>(mlm.samples));
      std::map<std::string, Tensor> grads;
      clf.add_scaled_into(lambda, grads);
      mlm.add_scaled_into(1.0 - lambda, grads);
      opt.step(params, grads);
      clf.reset();
      mlm.reset();
    };
    auto bump = [&]() {
      if (++pending == cfg.accumulate_every) flush();
    };

    for (const MixedBatch& batch : sched.batches) {
      check_quarantine(batch.source, splits.test_ids);
      check_quarantine(batch.target, splits.test_ids);
      epoch_src_samples += static_cast<long>(batch.source.size());
      epoch_tgt_samples += static_cast<long>(batch.target.size());
      {
        ad::Tape tape;
        ad::Value loss = clf_subbatch_loss(tape, params, batch.source);
        tape.backward(loss);
        clf.add(tape.gradient_map(), static_cast<double>(batch.source.size()),
                static_cast<long>(batch.source.size()));
        bump();
      }
      for (const auto& sub : chunk(batch.target, cfg.subbatch_size)) {
        ad::Tape tape;
        long tokens = 0;
        ad::Value loss = mlm_subbatch_loss(tape, params, sub, tokens);
        if (loss.valid()) {
          tape.backward(loss);
          mlm.add(tape.gradient_map(), static_cast<double>(tokens),
                  static_cast<long>(sub.size()));
        } else {
          mlm.samples += static_cast<long>(sub.size());
        }
        bump();
      }
    }
    flush();
    return compute_lambda(static_cast<int>(epoch_src_samples),
                          static_cast<int>(epoch_tgt_samples));
  };

  auto validate = [&](EpochRecord& er) {
    er.l_clf_val = clf_val_loss(params, splits.source_val, er.source_val_acc);
    er.l_mlm_val = mlm_val_loss(params, masked_val);
  };

  return run_epochs(Regime::kUdalm, params, cfg, criterion, keep_epoch_params,
                    train_epoch, validate, {});
}

int select_epoch(const RunRecord& record, const StoppingCriterion& criterion) {
  if (record.epochs.empty()) throw UsageError("select_epoch: record has no epochs");
  if (criterion.kind == StoppingCriterion::Kind::kFixedEpochs) {
    if (criterion.fixed_epochs > static_cast<int>(record.epochs.size()))
      throw UsageError("select_epoch: record has " + std::to_string(record.epochs.size()) +
                       " epochs, criterion wants " + std::to_string(criterion.fixed_epochs));
    return criterion.fixed_epochs;
  }
  int best_epoch = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : record.epochs) {
    double metric = criterion_metric(e, criterion);
    if (std::isnan(metric))
      throw UsageError("select_epoch: criterion " + criterion.name() +
                       " references a loss the record does not track");
    if (metric < best) {
      best = metric;
      best_epoch = e.epoch;
    } else if (e.epoch - best_epoch >= criterion.patience) {
      break;  // training would have halted here
    }
  }
  return best_epoch;
}

}  // namespace udalm::train
