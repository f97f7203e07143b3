#include "udalm/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "udalm/errors.hpp"
#include "udalm/textio.hpp"

namespace udalm::cli {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

long to_long(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config: bad integer '" + v + "' for " + key);
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("config: bad number '" + v + "' for " + key);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw UsageError("config: bad boolean '" + v + "' for " + key);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (corpus_kind != "synthetic" && corpus_kind != "tsv")
    throw UsageError("config: corpus kind must be synthetic or tsv");
  if (corpus_kind == "synthetic") {
    shift_spec.validate();
    if (n_source <= 0 || n_target < 0 || n_target_test <= 0)
      throw UsageError("config: corpus counts must be positive");
  } else {
    if (source_path.empty() || target_path.empty() || target_test_path.empty())
      throw UsageError("config: tsv corpus requires source_path, target_path and target_test_path");
    for (const std::string& p : {source_path, target_path, target_test_path})
      if (!std::filesystem::exists(p))
        throw UsageError("config: corpus file does not exist: " + p);
  }
  if (vocab_size <= tok::Vocab::kReservedCount)
    throw UsageError("config: vocab_size too small");
  if (max_len < 4) throw UsageError("config: max_len too small");
  train_cfg.validate();
  if (regimes.empty()) throw UsageError("config: at least one regime required");
  for (const auto& r : regimes)
    if (r != "so" && r != "dpt" && r != "dat" && r != "udalm")
      throw UsageError("config: unknown regime '" + r + "'");
  if (seeds.empty()) throw UsageError("config: at least one seed required");
  if (jobs <= 0) throw UsageError("config: jobs must be positive");
  train::StoppingCriterion::parse(stopping_so);
  train::StoppingCriterion::parse(stopping_dat);
  train::StoppingCriterion::parse(stopping_udalm);
  for (const auto& r : sweep_regimes)
    if (r != "so" && r != "dpt" && r != "dat" && r != "udalm")
      throw UsageError("config: unknown sweep regime '" + r + "'");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "[corpus]\n";
  os << "kind = " << corpus_kind << "\n";
  if (corpus_kind == "synthetic") {
    os << "shift = " << fmt_double(shift_spec.shift) << "\n";
    os << "n_source = " << n_source << "\n";
    os << "n_target = " << n_target << "\n";
    os << "n_target_test = " << n_target_test << "\n";
    os << "filler_words = " << shift_spec.filler_words << "\n";
    os << "indicator_words = " << shift_spec.indicator_words << "\n";
    os << "polarity_words = " << shift_spec.polarity_words << "\n";
    os << "sentence_min_words = " << shift_spec.sentence_min_words << "\n";
    os << "sentence_max_words = " << shift_spec.sentence_max_words << "\n";
    os << "class_balance = " << fmt_double(shift_spec.class_balance) << "\n";
    os << "noise_rate = " << fmt_double(shift_spec.noise_rate) << "\n";
    os << "polarity_density = " << fmt_double(shift_spec.polarity_density) << "\n";
    os << "indicator_density = " << fmt_double(shift_spec.indicator_density) << "\n";
    os << "polarity_purity = " << fmt_double(shift_spec.polarity_purity) << "\n";
    os << "shared_usage_boost = " << fmt_double(shift_spec.shared_usage_boost) << "\n";
  } else {
    os << "source_path = " << source_path << "\n";
    os << "target_path = " << target_path << "\n";
    os << "target_test_path = " << target_test_path << "\n";
  }
  os << "\n[tokenizer]\n";
  os << "vocab_size = " << vocab_size << "\n";
  os << "min_freq = " << min_freq << "\n";
  os << "max_len = " << max_len << "\n";
  os << "\n[encoder]\n";
  os << "layers = " << encoder.layers << "\n";
  os << "hidden = " << encoder.hidden << "\n";
  os << "heads = " << encoder.heads << "\n";
  os << "ff_dim = " << encoder.ff_dim << "\n";
  os << "num_classes = " << encoder.num_classes << "\n";
  os << "tie_mlm_embeddings = " << (encoder.tie_mlm_embeddings ? 1 : 0) << "\n";
  os << "\n[train]\n";
  os << "learning_rate = " << fmt_double(train_cfg.learning_rate) << "\n";
  os << "epochs = " << train_cfg.epochs << "\n";
  os << "patience = " << train_cfg.patience << "\n";
  os << "source_subbatch = " << train_cfg.source_subbatch << "\n";
  os << "target_subbatches = " << train_cfg.target_subbatches << "\n";
  os << "subbatch_size = " << train_cfg.subbatch_size << "\n";
  os << "accumulate_every = " << train_cfg.accumulate_every << "\n";
  os << "lambda_d = " << fmt_double(train_cfg.lambda_d) << "\n";
  os << "weight_decay = " << fmt_double(train_cfg.weight_decay) << "\n";
  os << "mask_rate = " << fmt_double(train_cfg.mask_rate) << "\n";
  os << "dpt_batch_size = " << train_cfg.dpt_batch_size << "\n";
  os << "dpt_epochs = " << train_cfg.dpt_epochs << "\n";
  os << "\n[run]\n";
  os << "regimes = ";
  for (std::size_t i = 0; i < regimes.size(); ++i) os << (i ? "," : "") << regimes[i];
  os << "\nseeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nmaster_seed = " << master_seed << "\n";
  os << "jobs = " << jobs << "\n";
  os << "criteria_compare = " << (criteria_compare ? 1 : 0) << "\n";
  os << "stopping_so = " << stopping_so << "\n";
  os << "stopping_dat = " << stopping_dat << "\n";
  os << "stopping_udalm = " << stopping_udalm << "\n";
  os << "adist_train_per_domain = " << adist_train_per_domain << "\n";
  os << "sweep_sizes = ";
  for (std::size_t i = 0; i < sweep_sizes.size(); ++i) os << (i ? "," : "") << sweep_sizes[i];
  os << "\nsweep_regimes = ";
  for (std::size_t i = 0; i < sweep_regimes.size(); ++i)
    os << (i ? "," : "") << sweep_regimes[i];
  os << "\n";
  return os.str();
}

std::string ExperimentConfig::corpus_hash_key() const {
  if (corpus_kind == "synthetic") {
    std::ostringstream os;
    os << "synthetic;" << shift_spec.cache_key() << ";n=" << n_source << "," << n_target
       << "," << n_target_test << ";seed=" << master_seed;
    return os.str();
  }
  return "tsv;" + source_path + ";" + target_path + ";" + target_test_path;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = t.substr(1, t.size() - 2);
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: expected key = value at line " + std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    std::string qual = section + "." + key;

    if (qual == "corpus.kind") cfg.corpus_kind = val;
    else if (qual == "corpus.shift") cfg.shift_spec.shift = to_double(val, qual);
    else if (qual == "corpus.n_source") cfg.n_source = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.n_target") cfg.n_target = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.n_target_test") cfg.n_target_test = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.filler_words") cfg.shift_spec.filler_words = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.indicator_words") cfg.shift_spec.indicator_words = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.polarity_words") cfg.shift_spec.polarity_words = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.sentence_min_words") cfg.shift_spec.sentence_min_words = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.sentence_max_words") cfg.shift_spec.sentence_max_words = static_cast<int>(to_long(val, qual));
    else if (qual == "corpus.class_balance") cfg.shift_spec.class_balance = to_double(val, qual);
    else if (qual == "corpus.noise_rate") cfg.shift_spec.noise_rate = to_double(val, qual);
    else if (qual == "corpus.polarity_density") cfg.shift_spec.polarity_density = to_double(val, qual);
    else if (qual == "corpus.indicator_density") cfg.shift_spec.indicator_density = to_double(val, qual);
    else if (qual == "corpus.polarity_purity") cfg.shift_spec.polarity_purity = to_double(val, qual);
    else if (qual == "corpus.shared_usage_boost") cfg.shift_spec.shared_usage_boost = to_double(val, qual);
    else if (qual == "corpus.source_path") cfg.source_path = val;
    else if (qual == "corpus.target_path") cfg.target_path = val;
    else if (qual == "corpus.target_test_path") cfg.target_test_path = val;
    else if (qual == "tokenizer.vocab_size") cfg.vocab_size = static_cast<int>(to_long(val, qual));
    else if (qual == "tokenizer.min_freq") cfg.min_freq = static_cast<int>(to_long(val, qual));
    else if (qual == "tokenizer.max_len") cfg.max_len = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.layers") cfg.encoder.layers = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.hidden") cfg.encoder.hidden = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.heads") cfg.encoder.heads = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.ff_dim") cfg.encoder.ff_dim = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.num_classes") cfg.encoder.num_classes = static_cast<int>(to_long(val, qual));
    else if (qual == "encoder.tie_mlm_embeddings") cfg.encoder.tie_mlm_embeddings = to_bool(val, qual);
    else if (qual == "train.learning_rate") cfg.train_cfg.learning_rate = to_double(val, qual);
    else if (qual == "train.epochs") cfg.train_cfg.epochs = static_cast<int>(to_long(val, qual));
    else if (qual == "train.patience") cfg.train_cfg.patience = static_cast<int>(to_long(val, qual));
    else if (qual == "train.source_subbatch") cfg.train_cfg.source_subbatch = static_cast<int>(to_long(val, qual));
    else if (qual == "train.target_subbatches") cfg.train_cfg.target_subbatches = static_cast<int>(to_long(val, qual));
    else if (qual == "train.subbatch_size") cfg.train_cfg.subbatch_size = static_cast<int>(to_long(val, qual));
    else if (qual == "train.accumulate_every") cfg.train_cfg.accumulate_every = static_cast<int>(to_long(val, qual));
    else if (qual == "train.lambda_d") cfg.train_cfg.lambda_d = to_double(val, qual);
    else if (qual == "train.weight_decay") cfg.train_cfg.weight_decay = to_double(val, qual);
    else if (qual == "train.mask_rate") cfg.train_cfg.mask_rate = to_double(val, qual);
    else if (qual == "train.dpt_batch_size") cfg.train_cfg.dpt_batch_size = static_cast<int>(to_long(val, qual));
    else if (qual == "train.dpt_epochs") cfg.train_cfg.dpt_epochs = static_cast<int>(to_long(val, qual));
    else if (qual == "run.regimes") cfg.regimes = split_list(val);
    else if (qual == "run.seeds") {
      cfg.seeds.clear();
      for (const auto& s : split_list(val))
        cfg.seeds.push_back(static_cast<std::uint64_t>(to_long(s, qual)));
    }
    else if (qual == "run.master_seed") cfg.master_seed = static_cast<std::uint64_t>(to_long(val, qual));
    else if (qual == "run.jobs") cfg.jobs = static_cast<int>(to_long(val, qual));
    else if (qual == "run.criteria_compare") cfg.criteria_compare = to_bool(val, qual);
    else if (qual == "run.stopping_so") cfg.stopping_so = val;
    else if (qual == "run.stopping_dat") cfg.stopping_dat = val;
    else if (qual == "run.stopping_udalm") cfg.stopping_udalm = val;
    else if (qual == "run.adist_train_per_domain") cfg.adist_train_per_domain = static_cast<int>(to_long(val, qual));
    else if (qual == "run.sweep_sizes") {
      cfg.sweep_sizes.clear();
      for (const auto& s : split_list(val))
        cfg.sweep_sizes.push_back(static_cast<int>(to_long(s, qual)));
    }
    else if (qual == "run.sweep_regimes") cfg.sweep_regimes = split_list(val);
    else throw UsageError("config: unknown key '" + qual + "' at line " + std::to_string(lineno));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("config: cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

}  // namespace udalm::cli
