#include "udalm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "udalm/errors.hpp"
#include "udalm/rng.hpp"

namespace udalm::data {

namespace {

const char* kSyllables[] = {"ba", "re", "ki", "lo", "mu", "ta", "ve", "so",
                            "ni", "fa", "ru", "pe", "do", "ga", "li", "mo",
                            "sa", "tu", "ze", "wi"};
constexpr int kSyllableCount = 20;

std::string make_word(Rng& rng, std::set<std::string>& used) {
  for (;;) {
    int len = 2 + rng.index(3);
    std::string w;
    for (int i = 0; i < len; ++i) w += kSyllables[rng.index(kSyllableCount)];
    if (used.insert(w).second) return w;
  }
}

std::vector<std::string> make_lexicon(int n, Rng& rng, std::set<std::string>& used) {
  std::vector<std::string> words;
  words.reserve(n);
  for (int i = 0; i < n; ++i) words.push_back(make_word(rng, used));
  return words;
}

struct DomainLexicons {
  std::vector<std::string> filler;                  // shared
  std::vector<std::string> indicator[2];            // per domain
  std::vector<std::string> polarity[2][2];          // [domain][class]
  int polarity_shared = 0;                          // leading shared entries per class
};

// shift controls how much of each domain's evidence lexicon is exclusive;
// the shared part is common to both domains.
DomainLexicons build_lexicons(const DomainShiftSpec& spec, Rng& rng) {
  std::set<std::string> used;
  DomainLexicons lex;
  lex.filler = make_lexicon(spec.filler_words, rng, used);

  int ind_shared = static_cast<int>(std::lround((1.0 - spec.shift) * spec.indicator_words));
  int ind_excl = spec.indicator_words - ind_shared;
  std::vector<std::string> shared_ind = make_lexicon(ind_shared, rng, used);
  for (int d = 0; d < 2; ++d) {
    lex.indicator[d] = shared_ind;
    std::vector<std::string> excl = make_lexicon(ind_excl, rng, used);
    lex.indicator[d].insert(lex.indicator[d].end(), excl.begin(), excl.end());
  }

  int pol_shared = static_cast<int>(std::lround((1.0 - spec.shift) * spec.polarity_words));
  int pol_excl = spec.polarity_words - pol_shared;
  lex.polarity_shared = pol_shared;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::string> shared_pol = make_lexicon(pol_shared, rng, used);
    for (int d = 0; d < 2; ++d) {
      lex.polarity[d][c] = shared_pol;
      std::vector<std::string> excl = make_lexicon(pol_excl, rng, used);
      lex.polarity[d][c].insert(lex.polarity[d][c].end(), excl.begin(), excl.end());
    }
  }
  return lex;
}

LabeledExample make_example(const DomainShiftSpec& spec, const DomainLexicons& lex,
                            int domain, Rng& rng) {
  int intended = rng.bernoulli(spec.class_balance) ? 1 : 0;
  int len = spec.sentence_min_words +
            rng.index(spec.sentence_max_words - spec.sentence_min_words + 1);
  std::string text;
  int polarity_count[2] = {0, 0};
  for (int i = 0; i < len; ++i) {
    double u = rng.uniform();
    const std::vector<std::string>* pool;
    int limit = -1;
    if (u < spec.polarity_density) {
      int cls = rng.bernoulli(spec.polarity_purity) ? intended : 1 - intended;
      ++polarity_count[cls];
      pool = &lex.polarity[domain][cls];
      // frequent generic polarity words come from the shared slice
      if (lex.polarity_shared > 0 && rng.bernoulli(spec.shared_usage_boost))
        limit = lex.polarity_shared;
    } else if (u < spec.polarity_density + spec.indicator_density) {
      pool = &lex.indicator[domain];
    } else {
      pool = &lex.filler;
    }
    if (!text.empty()) text += ' ';
    int n = limit > 0 ? limit : static_cast<int>(pool->size());
    text += (*pool)[rng.index(n)];
  }
  // majority polarity decides the label; ties keep the intended class
  int label = intended;
  if (polarity_count[0] != polarity_count[1])
    label = polarity_count[1] > polarity_count[0] ? 1 : 0;
  if (rng.bernoulli(spec.noise_rate)) label = 1 - label;

  LabeledExample ex;
  ex.text = std::move(text);
  ex.label = label;
  ex.domain = domain == 0 ? "source" : "target";
  return ex;
}

void assign_ids(std::vector<LabeledExample>& v, long& next_id) {
  for (auto& ex : v) ex.id = next_id++;
}

}  // namespace

void DomainShiftSpec::validate() const {
  if (!(shift >= 0.0 && shift <= 1.0))
    throw UsageError("corpus spec: shift must be in [0,1], got " + std::to_string(shift));
  if (filler_words <= 0 || indicator_words <= 0 || polarity_words <= 0)
    throw UsageError("corpus spec: lexicon sizes must be positive");
  if (sentence_min_words <= 0 || sentence_max_words < sentence_min_words)
    throw UsageError("corpus spec: bad sentence length range");
  if (!(class_balance > 0.0 && class_balance < 1.0))
    throw UsageError("corpus spec: class balance must be in (0,1)");
  if (!(noise_rate >= 0.0 && noise_rate < 0.5))
    throw UsageError("corpus spec: noise rate must be in [0,0.5)");
  if (!(polarity_density >= 0.0 && indicator_density >= 0.0 &&
        polarity_density + indicator_density <= 1.0))
    throw UsageError("corpus spec: densities must be nonnegative and sum to at most 1");
  if (!(polarity_purity > 0.5 && polarity_purity <= 1.0))
    throw UsageError("corpus spec: polarity purity must be in (0.5,1]");
  if (!(shared_usage_boost >= 0.0 && shared_usage_boost <= 1.0))
    throw UsageError("corpus spec: shared usage boost must be in [0,1]");
}

std::string DomainShiftSpec::cache_key() const {
  std::ostringstream os;
  os << "shift=" << shift << ";filler=" << filler_words << ";ind=" << indicator_words
     << ";pol=" << polarity_words << ";len=" << sentence_min_words << "-"
     << sentence_max_words << ";bal=" << class_balance << ";noise=" << noise_rate
     << ";pdens=" << polarity_density << ";idens=" << indicator_density
     << ";purity=" << polarity_purity << ";boost=" << shared_usage_boost;
  return os.str();
}

SplitSet generate_synthetic_pair(const DomainShiftSpec& spec, int n_labeled_source,
                                 int n_unlabeled_target, int n_target_test,
                                 std::uint64_t seed) {
  spec.validate();
  if (n_labeled_source <= 0 || n_target_test <= 0 || n_unlabeled_target < 0)
    throw UsageError("generate_synthetic_pair: counts must be positive");

  Rng lex_rng(derive_seed(seed, "lexicons"));
  DomainLexicons lex = build_lexicons(spec, lex_rng);

  Rng src_rng(derive_seed(seed, "source_examples"));
  Rng tgt_rng(derive_seed(seed, "target_examples"));
  Rng test_rng(derive_seed(seed, "target_test_examples"));

  std::vector<LabeledExample> source, target_unlabeled, target_test;
  source.reserve(n_labeled_source);
  for (int i = 0; i < n_labeled_source; ++i)
    source.push_back(make_example(spec, lex, 0, src_rng));
  target_unlabeled.reserve(n_unlabeled_target);
  for (int i = 0; i < n_unlabeled_target; ++i) {
    LabeledExample ex = make_example(spec, lex, 1, tgt_rng);
    ex.label = kLabelAbsent;
    target_unlabeled.push_back(std::move(ex));
  }
  target_test.reserve(n_target_test);
  for (int i = 0; i < n_target_test; ++i)
    target_test.push_back(make_example(spec, lex, 1, test_rng));

  return make_splits(std::move(source), std::move(target_unlabeled),
                     std::move(target_test), 0.2, derive_seed(seed, "splits"));
}

std::vector<LabeledExample> load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_records: cannot read " + path);
  std::vector<LabeledExample> records;
  std::string line;
  int lineno = 0;
  long next_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw DataError("load_records: expected label<TAB>domain<TAB>text at " + path +
                      ":" + std::to_string(lineno));
    std::string label_str = line.substr(0, t1);
    LabeledExample ex;
    if (label_str == "-")
      ex.label = kLabelAbsent;
    else if (label_str == "0")
      ex.label = 0;
    else if (label_str == "1")
      ex.label = 1;
    else
      throw DataError("load_records: label '" + label_str + "' outside {0,1,-} at " +
                      path + ":" + std::to_string(lineno));
    ex.domain = line.substr(t1 + 1, t2 - t1 - 1);
    ex.text = line.substr(t2 + 1);
    ex.id = next_id++;
    records.push_back(std::move(ex));
  }
  return records;
}

void save_records(const std::vector<LabeledExample>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_records: cannot write " + path);
  for (const auto& ex : records) {
    if (ex.labeled())
      out << ex.label;
    else
      out << '-';
    out << '\t' << ex.domain << '\t' << ex.text << '\n';
  }
  if (!out) throw DataError("save_records: short write to " + path);
}

SplitSet make_splits(std::vector<LabeledExample> source,
                     std::vector<LabeledExample> target_unlabeled,
                     std::vector<LabeledExample> target_labeled,
                     double val_frac, std::uint64_t seed) {
  if (!(val_frac > 0.0 && val_frac < 1.0))
    throw UsageError("make_splits: val_frac must be in (0,1), got " + std::to_string(val_frac));
  for (const auto& ex : source)
    if (!ex.labeled()) throw DataError("make_splits: unlabeled example in source");

  long next_id = 0;
  assign_ids(source, next_id);
  assign_ids(target_unlabeled, next_id);
  assign_ids(target_labeled, next_id);

  SplitSet s;
  s.val_frac = val_frac;
  s.split_seed = seed;
  s.source_all = source;
  s.target_unlabeled_all = target_unlabeled;
  if (!source.empty()) s.source_domain = source.front().domain;
  if (!target_labeled.empty()) s.target_domain = target_labeled.front().domain;
  else if (!target_unlabeled.empty()) s.target_domain = target_unlabeled.front().domain;

  // stratified source split: per-class shuffle, first val_frac to validation
  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < source.size(); ++i)
    by_label[source[i].label].push_back(static_cast<int>(i));
  Rng src_rng(derive_seed(seed, "source_split"));
  for (auto& [label, idx] : by_label) {
    src_rng.shuffle(idx);
    int n_val = static_cast<int>(std::lround(val_frac * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (static_cast<int>(k) < n_val)
        s.source_val.push_back(source[idx[k]]);
      else
        s.source_train.push_back(source[idx[k]]);
    }
  }

  std::vector<int> tgt_idx(target_unlabeled.size());
  for (std::size_t i = 0; i < tgt_idx.size(); ++i) tgt_idx[i] = static_cast<int>(i);
  Rng tgt_rng(derive_seed(seed, "target_split"));
  tgt_rng.shuffle(tgt_idx);
  int n_tval = static_cast<int>(std::lround(val_frac * static_cast<double>(tgt_idx.size())));
  for (std::size_t k = 0; k < tgt_idx.size(); ++k) {
    if (static_cast<int>(k) < n_tval)
      s.target_val_unlabeled.push_back(target_unlabeled[tgt_idx[k]]);
    else
      s.target_train_unlabeled.push_back(target_unlabeled[tgt_idx[k]]);
  }

  s.target_test = std::move(target_labeled);
  return s;
}

SplitSet subsample_target(const SplitSet& splits, int size, std::uint64_t seed) {
  const int avail = static_cast<int>(splits.target_unlabeled_all.size());
  if (size < 0 || size > avail)
    throw UsageError("subsample_target: size " + std::to_string(size) +
                     " exceeds available " + std::to_string(avail));
  if (size == avail) return splits;
  std::vector<int> perm(avail);
  for (int i = 0; i < avail; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, "target_subsample"));
  rng.shuffle(perm);

  std::vector<LabeledExample> pool;
  pool.reserve(size);
  for (int i = 0; i < size; ++i) pool.push_back(splits.target_unlabeled_all[perm[i]]);

  SplitSet out = splits;
  out.target_unlabeled_all = pool;
  out.target_train_unlabeled.clear();
  out.target_val_unlabeled.clear();

  std::vector<int> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng split_rng(derive_seed(splits.split_seed, "target_split"));
  split_rng.shuffle(idx);
  int n_val = static_cast<int>(std::lround(splits.val_frac * static_cast<double>(idx.size())));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (static_cast<int>(k) < n_val)
      out.target_val_unlabeled.push_back(pool[idx[k]]);
    else
      out.target_train_unlabeled.push_back(pool[idx[k]]);
  }
  return out;
}

}  // namespace udalm::data
