#include "udalm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "udalm/errors.hpp"
#include "udalm/report.hpp"
#include "udalm/rng.hpp"
#include "udalm/textio.hpp"

namespace udalm::cli {

namespace fs = std::filesystem;

namespace {

void write_text_atomic(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << text;
    if (!out) throw DataError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Paths {
  fs::path root, corpus, cache, runs;
  explicit Paths(const std::string& out_dir)
      : root(out_dir), corpus(root / "corpus"), cache(root / "cache"), runs(root / "runs") {}
  void ensure() const {
    fs::create_directories(corpus);
    fs::create_directories(cache);
    fs::create_directories(runs);
  }
};

std::string encoder_key(const nn::EncoderConfig& c) {
  std::ostringstream os;
  os << c.layers << "," << c.hidden << "," << c.heads << "," << c.ff_dim << ","
     << c.num_classes << "," << (c.tie_mlm_embeddings ? 1 : 0) << "," << c.max_len;
  return os.str();
}

std::string dpt_stage_key(const Workspace& ws, std::uint64_t seed, int subsample_size) {
  const train::TrainConfig& t = ws.cfg.train_cfg;
  std::ostringstream os;
  os << "dpt;" << ws.cfg.corpus_hash_key() << ";vocab=" << ws.cfg.vocab_size << ","
     << ws.cfg.min_freq << ";enc=" << encoder_key(ws.encoder_cfg) << ";lr=" << t.learning_rate
     << ";wd=" << t.weight_decay << ";mask=" << t.mask_rate << ";b=" << t.dpt_batch_size
     << ";e=" << t.dpt_epochs << ";sub=" << subsample_size << ";seed=" << seed;
  return os.str();
}

// Identifies the experiment configuration; regime, seed and subsample size
// live in the artifact stem, not the hash, so one directory carries one hash.
std::string config_key(const Workspace& ws) {
  std::ostringstream os;
  os << ws.cfg.corpus_hash_key() << ";vocab=" << ws.cfg.vocab_size << ","
     << ws.cfg.min_freq << ";enc=" << encoder_key(ws.encoder_cfg) << ";train="
     << ws.cfg.train_cfg.cache_key() << ";stop=" << ws.cfg.stopping_so << "|"
     << ws.cfg.stopping_dat << "|" << ws.cfg.stopping_udalm;
  return os.str();
}

int full_target_size(const Workspace& ws) {
  return static_cast<int>(ws.splits.target_unlabeled_all.size());
}

train::StoppingCriterion criterion_for(const Workspace& ws, const std::string& regime) {
  if (regime == "so" || regime == "dpt")
    return train::StoppingCriterion::parse(ws.cfg.stopping_so);
  if (regime == "dat") return train::StoppingCriterion::parse(ws.cfg.stopping_dat);
  return train::StoppingCriterion::parse(ws.cfg.stopping_udalm);
}

// When a run degenerated to source-only, the mixed loss is untracked and the
// mixed criterion falls back to the source-loss one.
train::StoppingCriterion map_criterion_for_record(const train::RunRecord& record,
                                                  train::StoppingCriterion c) {
  if (c.kind == train::StoppingCriterion::Kind::kMinMixedLoss && !record.epochs.empty() &&
      std::isnan(record.epochs.front().mixed_val))
    return train::StoppingCriterion::min_source_loss(c.patience);
  return c;
}

std::mutex g_stage_mutex;  // guards concurrent builders of one shared stage file

}  // namespace

std::string hash_hex(const std::string& key) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  Paths paths(out_dir);
  paths.ensure();

  std::vector<data::LabeledExample> source, target_unlabeled, target_test;
  if (cfg.corpus_kind == "synthetic") {
    data::SplitSet s = data::generate_synthetic_pair(cfg.shift_spec, cfg.n_source,
                                                     cfg.n_target, cfg.n_target_test,
                                                     cfg.master_seed);
    source = s.source_all;
    target_unlabeled = s.target_unlabeled_all;
    target_test = s.target_test;
  } else {
    source = data::load_records(cfg.source_path);
    target_unlabeled = data::load_records(cfg.target_path);
    target_test = data::load_records(cfg.target_test_path);
    for (auto& ex : target_unlabeled) ex.label = data::kLabelAbsent;
  }

  data::save_records(source, (paths.corpus / "source.tsv").string());
  data::save_records(target_unlabeled, (paths.corpus / "target_unlabeled.tsv").string());
  data::save_records(target_test, (paths.corpus / "target_test.tsv").string());

  std::ostringstream manifest;
  manifest << "udalm-corpus-manifest\tv1\n";
  manifest << "hash\t" << hash_hex(cfg.corpus_hash_key()) << "\n";
  manifest << "kind\t" << cfg.corpus_kind << "\n";
  if (cfg.corpus_kind == "synthetic") {
    manifest << "shift\t" << fmt_double(cfg.shift_spec.shift) << "\n";
    manifest << "spec\t" << cfg.shift_spec.cache_key() << "\n";
    manifest << "seed\t" << cfg.master_seed << "\n";
  }
  manifest << "n_source\t" << source.size() << "\n";
  manifest << "n_target_unlabeled\t" << target_unlabeled.size() << "\n";
  manifest << "n_target_test\t" << target_test.size() << "\n";
  write_text_atomic((paths.corpus / "manifest.tsv").string(), manifest.str());
}

Workspace prepare_workspace(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  Paths paths(out_dir);
  if (!fs::exists(paths.corpus / "manifest.tsv"))
    throw DataError("corpus stage missing under " + (paths.corpus).string() +
                    "; run the generate subcommand first");
  paths.ensure();

  Workspace ws;
  ws.cfg = cfg;
  ws.out_dir = out_dir;

  auto source = data::load_records((paths.corpus / "source.tsv").string());
  auto target_unlabeled = data::load_records((paths.corpus / "target_unlabeled.tsv").string());
  auto target_test = data::load_records((paths.corpus / "target_test.tsv").string());
  ws.splits = data::make_splits(std::move(source), std::move(target_unlabeled),
                                std::move(target_test), 0.2,
                                derive_seed(cfg.master_seed, "splits"));

  // vocabulary from training text only; test text is quarantined
  std::string vocab_key = "vocab;" + cfg.corpus_hash_key() + ";" +
                          std::to_string(cfg.vocab_size) + ";" + std::to_string(cfg.min_freq);
  fs::path vocab_path = paths.cache / ("vocab_" + hash_hex(vocab_key) + ".tsv");
  if (fs::exists(vocab_path)) {
    ws.vocab = tok::Vocab::load(vocab_path.string());
  } else {
    std::vector<std::string> texts;
    for (const auto& ex : ws.splits.source_all) texts.push_back(ex.text);
    for (const auto& ex : ws.splits.target_unlabeled_all) texts.push_back(ex.text);
    ws.vocab = tok::build_vocab(texts, cfg.vocab_size, cfg.min_freq);
    ws.vocab.save(vocab_path.string());
  }

  ws.encoder_cfg = cfg.encoder;
  ws.encoder_cfg.vocab_size = ws.vocab.size();
  ws.encoder_cfg.max_len = cfg.max_len;
  ws.encoder_cfg.validate();

  ws.encoded = train::encode_splits(ws.splits, ws.vocab, cfg.max_len);
  return ws;
}

namespace {

// Domain-pretraining checkpoint shared by dpt, dat and udalm runs; cached on
// disk and built at most once per process.
nn::EncoderParams ensure_dpt(const Workspace& ws, const train::EncodedSplits& encoded,
                             std::uint64_t seed, int subsample_size,
                             std::vector<StageOutcome>* outcomes, std::mutex* outcome_mutex) {
  Paths paths(ws.out_dir);
  std::string key = dpt_stage_key(ws, seed, subsample_size);
  std::string h = hash_hex(key);
  fs::path ckpt = paths.cache / ("dpt_seed" + std::to_string(seed) + "_" + h + ".ckpt");
  fs::path record_path =
      paths.cache / ("dpt_stage_seed" + std::to_string(seed) + "_" + h + ".record");

  auto note = [&](bool hit) {
    if (!outcomes) return;
    std::lock_guard<std::mutex> lock(*outcome_mutex);
    outcomes->push_back({"dpt_stage seed=" + std::to_string(seed) + " sub=" +
                             std::to_string(subsample_size),
                         hit});
  };

  {
    std::lock_guard<std::mutex> lock(g_stage_mutex);
    if (fs::exists(ckpt) && fs::exists(record_path)) {
      note(true);
      return nn::load_params(ckpt.string());
    }
  }

  train::TrainConfig cfg = ws.cfg.train_cfg;
  cfg.seed = seed;
  nn::EncoderParams init = nn::init_params(ws.encoder_cfg, derive_seed(seed, "init"));
  train::TrainResult res = train::train_dpt(std::move(init), encoded, cfg);
  res.record.pair = ws.splits.source_domain + "->" + ws.splits.target_domain;

  std::lock_guard<std::mutex> lock(g_stage_mutex);
  if (!(fs::exists(ckpt) && fs::exists(record_path))) {
    nn::save_params(res.params, ckpt.string());
    res.record.save(record_path.string());
    note(false);
  } else {
    note(true);
  }
  return std::move(res.params);
}

}  // namespace

train::TrainResult run_regime_cell(const Workspace& ws, const std::string& regime,
                                   std::uint64_t seed, bool keep_epoch_params) {
  train::TrainConfig cfg = ws.cfg.train_cfg;
  cfg.seed = seed;
  const int sub = full_target_size(ws);
  nn::EncoderParams start = regime == "so"
                                ? nn::init_params(ws.encoder_cfg, derive_seed(seed, "init"))
                                : ensure_dpt(ws, ws.encoded, seed, sub, nullptr, nullptr);

  train::TrainResult res;
  if (regime == "so") {
    res = train::train_source_only(std::move(start), ws.encoded, cfg,
                                   criterion_for(ws, "so"), keep_epoch_params);
  } else if (regime == "dpt") {
    res = train::train_source_only(std::move(start), ws.encoded, cfg,
                                   criterion_for(ws, "dpt"), keep_epoch_params);
    res.record.regime = "dpt";
  } else if (regime == "dat") {
    res = train::train_dat(std::move(start), ws.encoded, cfg, criterion_for(ws, "dat"),
                           keep_epoch_params);
  } else if (regime == "udalm") {
    // Train the full epoch budget and select post hoc: the selected epoch is
    // identical to a patience-halted run and one trajectory serves every
    // stopping criterion.
    train::StoppingCriterion configured = criterion_for(ws, "udalm");
    res = train::train_udalm(std::move(start), ws.encoded, cfg,
                             train::StoppingCriterion::fixed(cfg.epochs), true);
    if (!res.record.epochs.empty()) {
      train::StoppingCriterion applied = map_criterion_for_record(res.record, configured);
      int chosen = train::select_epoch(res.record, applied);
      res.record.chosen_epoch = chosen;
      res.record.stopping = applied.name();
      if (chosen >= 1 && chosen <= static_cast<int>(res.epoch_params.size()))
        res.params = res.epoch_params[chosen - 1];
    }
    if (!keep_epoch_params) res.epoch_params.clear();
  } else {
    throw UsageError("unknown regime '" + regime + "'");
  }
  res.record.pair = ws.splits.source_domain + "->" + ws.splits.target_domain;
  res.record.seed = seed;
  return res;
}

namespace {

struct CriteriaChoice {
  std::string tag;       // fixed | min_source_loss | min_mixed_loss
  std::string criterion; // printable name
  int chosen_epoch = 0;
  std::string ckpt_file;
};

std::string criteria_tsv(const std::vector<CriteriaChoice>& choices) {
  std::ostringstream os;
  os << "udalm-criteria\tv1\n";
  for (const auto& c : choices)
    os << c.tag << "\t" << c.criterion << "\t" << c.chosen_epoch << "\t" << c.ckpt_file
       << "\n";
  return os.str();
}

}  // namespace

TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  Workspace ws = prepare_workspace(cfg, out_dir);
  Paths paths(out_dir);
  TrainOutcome outcome;
  std::mutex outcome_mutex;

  write_text_atomic((paths.runs / "experiment.config").string(), cfg.canonical());

  const int sub = full_target_size(ws);
  bool need_dpt = false;
  for (const auto& r : cfg.regimes)
    if (r != "so") need_dpt = true;

  if (need_dpt) {
    parallel_for(static_cast<int>(cfg.seeds.size()), cfg.jobs, [&](int i) {
      ensure_dpt(ws, ws.encoded, cfg.seeds[i], sub, &outcome.stages, &outcome_mutex);
    });
  }

  struct Cell {
    std::string regime;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& regime : cfg.regimes)
    for (std::uint64_t seed : cfg.seeds) cells.push_back({regime, seed});

  parallel_for(static_cast<int>(cells.size()), cfg.jobs, [&](int i) {
    const Cell& cell = cells[i];
    std::string h = hash_hex(config_key(ws));
    std::string stem = cell.regime + "_seed" + std::to_string(cell.seed) + "_" + h;
    fs::path record_path = paths.runs / (stem + ".record");
    fs::path ckpt_path = paths.runs / ("ckpt_" + stem + ".ckpt");
    fs::path criteria_path = paths.runs / ("criteria_seed" + std::to_string(cell.seed) +
                                           "_" + h + ".tsv");
    const bool want_criteria = cell.regime == "udalm" && cfg.criteria_compare;

    bool have = fs::exists(record_path) && fs::exists(ckpt_path) &&
                (!want_criteria || fs::exists(criteria_path));
    if (have) {
      std::lock_guard<std::mutex> lock(outcome_mutex);
      outcome.stages.push_back({stem, true});
      return;
    }

    train::TrainResult res = run_regime_cell(ws, cell.regime, cell.seed, want_criteria);

    if (want_criteria && !res.record.epochs.empty()) {
      const train::TrainConfig& t = ws.cfg.train_cfg;
      std::vector<train::StoppingCriterion> options = {
          train::StoppingCriterion::fixed(static_cast<int>(res.record.epochs.size())),
          train::StoppingCriterion::min_source_loss(t.patience),
          train::StoppingCriterion::min_mixed_loss(t.patience),
      };
      std::vector<CriteriaChoice> choices;
      for (const auto& option : options) {
        train::StoppingCriterion applied = map_criterion_for_record(res.record, option);
        CriteriaChoice choice;
        choice.tag = option.kind == train::StoppingCriterion::Kind::kFixedEpochs
                         ? "fixed"
                         : (option.kind == train::StoppingCriterion::Kind::kMinSourceLoss
                                ? "min_source_loss"
                                : "min_mixed_loss");
        choice.criterion = option.name();
        choice.chosen_epoch = train::select_epoch(res.record, applied);
        std::string ckpt_file = "ckpt_crit_" + choice.tag + "_seed" +
                                std::to_string(cell.seed) + "_" + h + ".ckpt";
        nn::save_params(res.epoch_params[choice.chosen_epoch - 1],
                        (paths.runs / ckpt_file).string());
        choice.ckpt_file = ckpt_file;
        choices.push_back(std::move(choice));
      }
      write_text_atomic(criteria_path.string(), criteria_tsv(choices));
    }

    nn::save_params(res.params, ckpt_path.string());
    res.record.save(record_path.string());
    std::lock_guard<std::mutex> lock(outcome_mutex);
    outcome.stages.push_back({stem, false});
  });

  std::sort(outcome.stages.begin(), outcome.stages.end(),
            [](const StageOutcome& a, const StageOutcome& b) { return a.name < b.name; });
  return outcome;
}

namespace {

struct RecordFile {
  fs::path path;
  train::RunRecord record;
  std::string hash;
  std::string stem;
};

std::vector<RecordFile> load_run_records(const Paths& paths) {
  std::vector<RecordFile> out;
  if (!fs::exists(paths.runs)) return out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(paths.runs)) {
    if (entry.path().extension() != ".record") continue;
    // sweep cells carry their own size-dependent hashes; the results table
    // covers the main regime runs only
    if (entry.path().filename().string().rfind("sweep_", 0) == 0) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    RecordFile rf;
    rf.path = f;
    rf.record = train::RunRecord::load(f.string());
    std::string stem = f.stem().string();
    auto us = stem.rfind('_');
    if (us == std::string::npos || stem.size() - us - 1 != 16)
      throw DataError("report: unexpected record name " + f.filename().string());
    rf.hash = stem.substr(us + 1);
    rf.stem = stem;
    out.push_back(std::move(rf));
  }
  return out;
}

}  // namespace

std::string cmd_report(const std::string& out_dir) {
  Paths paths(out_dir);
  fs::path config_path = paths.runs / "experiment.config";
  if (!fs::exists(config_path))
    throw DataError("report: no training artifacts under " + paths.runs.string() +
                    "; run the train subcommand first");
  ExperimentConfig cfg = parse_config_text(read_text(config_path.string()));
  Workspace ws = prepare_workspace(cfg, out_dir);

  std::vector<RecordFile> records = load_run_records(paths);
  if (records.empty()) throw DataError("report: no run records found");

  // one experiment per directory: every artifact must share one config hash
  for (const auto& rf : records)
    if (rf.hash != records.front().hash)
      throw DataError("report: mixed experiment configs in " + paths.runs.string() +
                      " (" + rf.hash + " vs " + records.front().hash + ")");

  // fill missing test accuracies from the stored checkpoints, then persist
  for (auto& rf : records) {
    if (!std::isnan(rf.record.target_test_acc)) continue;
    fs::path ckpt = paths.runs / ("ckpt_" + rf.stem + ".ckpt");
    if (!fs::exists(ckpt))
      throw DataError("report: missing checkpoint for " + rf.stem);
    nn::EncoderParams params = nn::load_params(ckpt.string());
    rf.record.target_test_acc = train::evaluate(params, ws.encoded.target_test).accuracy;
    rf.record.save(rf.path.string());
  }

  std::vector<train::RunRecord> plain;
  for (const auto& rf : records) plain.push_back(rf.record);
  ResultsTable table = ResultsTable::from_records(plain);

  // stopping-criteria table from the udalm criteria artifacts
  std::vector<CriteriaRow> criteria_rows;
  {
    std::map<std::string, std::vector<double>> by_criterion;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(paths.runs))
      if (entry.path().filename().string().rfind("criteria_seed", 0) == 0)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::istringstream in(read_text(f.string()));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line.rfind("udalm-criteria", 0) == 0) continue;
        auto fields = split_tabs(line);
        if (fields.size() < 4) throw DataError("report: short criteria row in " + f.string());
        nn::EncoderParams params = nn::load_params((paths.runs / fields[3]).string());
        double acc = train::evaluate(params, ws.encoded.target_test).accuracy;
        by_criterion[fields[1]].push_back(acc);
      }
    }
    for (const auto& [criterion, accs] : by_criterion) {
      CriteriaRow row;
      row.criterion = criterion;
      row.mean = analysis::mean_of(accs);
      row.stddev = analysis::population_std(accs);
      row.seeds = static_cast<int>(accs.size());
      criteria_rows.push_back(std::move(row));
    }
  }

  // bound tables written by the adist subcommand, if any
  std::vector<BoundRow> bound_rows;
  {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(paths.runs))
      if (entry.path().filename().string().rfind("bound_", 0) == 0)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      BoundRow row;
      std::istringstream in(read_text(f.string()));
      std::string line;
      while (std::getline(in, line)) {
        auto fields = split_tabs(line);
        if (fields.size() < 2) continue;
        if (fields[0] == "regime") row.regime = fields[1];
        else if (fields[0] == "seed") row.seed = std::stoull(fields[1]);
        else if (fields[0] == "epsilon_s") row.report.epsilon_s = parse_double(fields[1]);
        else if (fields[0] == "d_a") row.report.d_a = parse_double(fields[1]);
        else if (fields[0] == "bound_value") row.report.bound_value = parse_double(fields[1]);
        else if (fields[0] == "epsilon_t") row.report.epsilon_t = parse_double(fields[1]);
        else if (fields[0] == "c_note") row.report.c_note = fields[1];
      }
      bound_rows.push_back(std::move(row));
    }
  }

  std::vector<analysis::SweepCell> sweep;
  fs::path sweep_path = paths.root / "sweep.tsv";
  if (fs::exists(sweep_path)) sweep = parse_sweep_tsv(read_text(sweep_path.string()));

  std::string text = render_report(table, criteria_rows, bound_rows, sweep);
  write_text_atomic((paths.root / "report.txt").string(), text);
  return text;
}

void cmd_adist(const ExperimentConfig& cfg, const std::string& out_dir,
               const std::string& checkpoint_path, const std::string& out_file) {
  Workspace ws = prepare_workspace(cfg, out_dir);
  nn::EncoderParams params = nn::load_params(checkpoint_path);
  if (params.config.vocab_size != ws.encoder_cfg.vocab_size)
    throw DataError("adist: checkpoint vocab_size " +
                    std::to_string(params.config.vocab_size) + " does not match corpus vocab " +
                    std::to_string(ws.encoder_cfg.vocab_size));
  if (!(params.config == ws.encoder_cfg))
    throw DataError("adist: checkpoint encoder config does not match the experiment config");

  analysis::FeatureSet fs_src =
      analysis::cls_features(params, ws.encoded.source_val, 0, "source_val");
  analysis::FeatureSet fs_tgt =
      analysis::cls_features(params, ws.encoded.target_val, 1, "target_val");
  analysis::ADistanceResult ad = analysis::proxy_a_distance(
      fs_src, fs_tgt, cfg.adist_train_per_domain, derive_seed(cfg.master_seed, "adist"));

  train::EvalResult src = train::evaluate(params, ws.encoded.source_val);
  train::EvalResult tgt = train::evaluate(params, ws.encoded.target_test);
  analysis::BoundReport bound =
      analysis::make_bound_report(1.0 - src.accuracy, ad.d_a, 1.0 - tgt.accuracy);

  std::ostringstream os;
  os << "udalm-bound-report\tv1\n";
  os << "checkpoint\t" << fs::path(checkpoint_path).filename().string() << "\n";
  os << "epsilon_s\t" << fmt_double(bound.epsilon_s) << "\n";
  os << "epsilon_d\t" << fmt_double(ad.epsilon_d) << "\n";
  os << "d_a\t" << fmt_double(bound.d_a) << "\n";
  os << "bound_value\t" << fmt_double(bound.bound_value) << "\n";
  os << "epsilon_t\t" << fmt_double(bound.epsilon_t) << "\n";
  os << "adist_train_per_domain\t" << ad.train_per_domain << "\n";
  os << "adist_heldout_per_domain\t" << ad.heldout_per_domain << "\n";
  os << "epsilon_d_convention\theld-out 50% split error, domains balanced\n";
  os << "c_note\t" << bound.c_note << "\n";
  write_text_atomic(out_file, os.str());
}

void cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  Workspace ws = prepare_workspace(cfg, out_dir);
  Paths paths(out_dir);
  const int avail = full_target_size(ws);
  for (int size : cfg.sweep_sizes)
    if (size > avail)
      throw UsageError("sweep: size " + std::to_string(size) + " exceeds available target " +
                       std::to_string(avail));

  struct Cell {
    int size;
    std::string regime;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int size : cfg.sweep_sizes)
    for (const auto& regime : cfg.sweep_regimes)
      for (std::uint64_t seed : cfg.seeds) cells.push_back({size, regime, seed});

  // per-(size, seed) sub-workspaces; nested subsets come from the seed-keyed
  // permutation inside subsample_target
  std::map<std::pair<int, std::uint64_t>, Workspace> subspaces;
  std::mutex sub_mutex;
  auto get_subspace = [&](int size, std::uint64_t seed) -> const Workspace& {
    std::lock_guard<std::mutex> lock(sub_mutex);
    auto key = std::make_pair(size, seed);
    auto it = subspaces.find(key);
    if (it == subspaces.end()) {
      Workspace sub = ws;
      sub.splits = data::subsample_target(ws.splits, size, derive_seed(seed, "sweep"));
      sub.encoded = train::encode_splits(sub.splits, sub.vocab, sub.cfg.max_len);
      it = subspaces.emplace(key, std::move(sub)).first;
    }
    return it->second;
  };

  std::vector<double> accs(cells.size(), 0.0);
  parallel_for(static_cast<int>(cells.size()), std::max(1, cfg.jobs), [&](int i) {
    const Cell& cell = cells[i];
    const Workspace& sub = get_subspace(cell.size, cell.seed);
    std::string h = hash_hex(config_key(ws));
    fs::path record_path =
        paths.runs / ("sweep_" + cell.regime + "_size" + std::to_string(cell.size) +
                      "_seed" + std::to_string(cell.seed) + "_" + h + ".record");

    std::string main_stem = cell.regime + "_seed" + std::to_string(cell.seed) + "_" + h;
    fs::path main_record_path = paths.runs / (main_stem + ".record");
    fs::path main_ckpt_path = paths.runs / ("ckpt_" + main_stem + ".ckpt");
    bool full_size = cell.size == avail;

    train::RunRecord record;
    if (fs::exists(record_path)) {
      record = train::RunRecord::load(record_path.string());
    } else if (full_size && fs::exists(main_record_path) && fs::exists(main_ckpt_path)) {
      // a full-size cell is the same computation as the main training run
      record = train::RunRecord::load(main_record_path.string());
      if (std::isnan(record.target_test_acc)) {
        nn::EncoderParams params = nn::load_params(main_ckpt_path.string());
        record.target_test_acc =
            train::evaluate(params, sub.encoded.target_test).accuracy;
      }
      record.save(record_path.string());
    } else {
      train::TrainResult res = run_regime_cell(sub, cell.regime, cell.seed, false);
      record = res.record;
      record.target_test_acc = train::evaluate(res.params, sub.encoded.target_test).accuracy;
      record.save(record_path.string());
    }
    accs[i] = record.target_test_acc;
  });

  std::vector<analysis::SweepCell> table;
  for (int size : cfg.sweep_sizes) {
    for (const auto& regime : cfg.sweep_regimes) {
      analysis::SweepCell c;
      c.size = size;
      c.regime = regime;
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].size == size && cells[i].regime == regime)
          c.per_seed.push_back(accs[i]);
      c.mean_accuracy = analysis::mean_of(c.per_seed);
      c.std_accuracy = analysis::population_std(c.per_seed);
      table.push_back(std::move(c));
    }
  }
  write_text_atomic((paths.root / "sweep.tsv").string(), render_sweep_tsv(table));
}

}  // namespace udalm::cli
