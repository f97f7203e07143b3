#include "udalm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "udalm/errors.hpp"
#include "udalm/textio.hpp"

namespace udalm::cli {

namespace {

std::string pct2(double frac) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", frac * 100.0);
  return buf;
}

std::string fixed4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

const std::vector<std::string> kRegimeOrder = {"so", "dpt", "dat", "udalm"};

int regime_rank(const std::string& r) {
  for (std::size_t i = 0; i < kRegimeOrder.size(); ++i)
    if (kRegimeOrder[i] == r) return static_cast<int>(i);
  return static_cast<int>(kRegimeOrder.size());
}

}  // namespace

ResultsTable ResultsTable::from_records(const std::vector<train::RunRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : records) {
    if (std::isnan(r.target_test_acc))
      throw DataError("results table: record for regime " + r.regime + " seed " +
                      std::to_string(r.seed) + " has no test accuracy");
    groups[{r.pair, r.regime}].push_back(r.target_test_acc);
  }

  ResultsTable t;
  for (const auto& [key, accs] : groups) {
    ResultsRow row;
    row.pair = key.first;
    row.regime = key.second;
    row.mean = analysis::mean_of(accs);
    row.stddev = analysis::population_std(accs);
    row.seeds = static_cast<int>(accs.size());
    t.rows.push_back(std::move(row));
  }
  std::sort(t.rows.begin(), t.rows.end(), [](const ResultsRow& a, const ResultsRow& b) {
    if (a.pair != b.pair) return a.pair < b.pair;
    if (regime_rank(a.regime) != regime_rank(b.regime))
      return regime_rank(a.regime) < regime_rank(b.regime);
    return a.regime < b.regime;
  });

  // macro average: unweighted over pairs, per regime
  std::map<std::string, std::vector<double>> by_regime;
  for (const auto& row : t.rows) by_regime[row.regime].push_back(row.mean);
  for (const auto& [regime, means] : by_regime) {
    ResultsRow row;
    row.pair = "macro";
    row.regime = regime;
    row.mean = analysis::mean_of(means);
    row.stddev = analysis::population_std(means);
    row.seeds = static_cast<int>(means.size());
    t.macro.push_back(std::move(row));
  }
  std::sort(t.macro.begin(), t.macro.end(), [](const ResultsRow& a, const ResultsRow& b) {
    if (regime_rank(a.regime) != regime_rank(b.regime))
      return regime_rank(a.regime) < regime_rank(b.regime);
    return a.regime < b.regime;
  });
  return t;
}

std::string render_report(const ResultsTable& table, const std::vector<CriteriaRow>& criteria,
                          const std::vector<BoundRow>& bounds,
                          const std::vector<analysis::SweepCell>& sweep) {
  std::ostringstream os;
  os << "udalm benchmark report\n";
  os << "accuracies in percent; mean and population std over seeds\n";
  os << "\n[results]\n";
  os << "pair\tregime\tmean\tstd\tseeds\n";
  for (const auto& r : table.rows)
    os << r.pair << "\t" << r.regime << "\t" << pct2(r.mean) << "\t" << pct2(r.stddev)
       << "\t" << r.seeds << "\n";
  os << "\n[macro]\n";
  os << "regime\tmean\tstd\tpairs\n";
  for (const auto& r : table.macro)
    os << r.regime << "\t" << pct2(r.mean) << "\t" << pct2(r.stddev) << "\t" << r.seeds
       << "\n";

  if (!criteria.empty()) {
    os << "\n[stopping_criteria]\n";
    os << "criterion\tmean\tstd\tseeds\n";
    for (const auto& c : criteria)
      os << c.criterion << "\t" << pct2(c.mean) << "\t" << pct2(c.stddev) << "\t"
         << c.seeds << "\n";
  }

  if (!bounds.empty()) {
    os << "\n[bound_terms]\n";
    os << "regime\tseed\tepsilon_s\td_a\tbound_value\tepsilon_t\n";
    for (const auto& b : bounds)
      os << b.regime << "\t" << b.seed << "\t" << fixed4(b.report.epsilon_s) << "\t"
         << fixed4(b.report.d_a) << "\t" << fixed4(b.report.bound_value) << "\t"
         << fixed4(b.report.epsilon_t) << "\n";
    os << "note\t" << bounds.front().report.c_note << "\n";
  }

  if (!sweep.empty()) {
    os << "\n[sample_efficiency]\n";
    std::set<std::string> regimes;
    for (const auto& c : sweep) regimes.insert(c.regime);
    for (const auto& regime : regimes) {
      os << "series\t" << regime << "\n";
      os << "x\ty\tsigma\n";
      for (const auto& c : sweep)
        if (c.regime == regime)
          os << c.size << "\t" << pct2(c.mean_accuracy) << "\t" << pct2(c.std_accuracy)
             << "\n";
    }
  }
  return os.str();
}

std::string render_sweep_tsv(const std::vector<analysis::SweepCell>& sweep) {
  std::ostringstream os;
  std::set<std::string> regimes;
  for (const auto& c : sweep) regimes.insert(c.regime);
  for (const auto& regime : regimes) {
    os << "series\t" << regime << "\n";
    os << "x\ty\tsigma\tper_seed\n";
    for (const auto& c : sweep) {
      if (c.regime != regime) continue;
      os << c.size << "\t" << fmt_double(c.mean_accuracy) << "\t"
         << fmt_double(c.std_accuracy) << "\t";
      for (std::size_t i = 0; i < c.per_seed.size(); ++i)
        os << (i ? "," : "") << fmt_double(c.per_seed[i]);
      os << "\n";
    }
  }
  return os.str();
}

std::vector<analysis::SweepCell> parse_sweep_tsv(const std::string& text) {
  std::vector<analysis::SweepCell> out;
  std::istringstream in(text);
  std::string line;
  std::string regime;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields[0] == "series") {
      if (fields.size() < 2) throw DataError("sweep tsv: series line missing regime");
      regime = fields[1];
      continue;
    }
    if (fields[0] == "x") continue;  // header
    if (regime.empty()) throw DataError("sweep tsv: data before series header");
    if (fields.size() < 4) throw DataError("sweep tsv: short row");
    analysis::SweepCell c;
    c.regime = regime;
    c.size = std::stoi(fields[0]);
    c.mean_accuracy = parse_double(fields[1]);
    c.std_accuracy = parse_double(fields[2]);
    const std::string& rest = fields[3];
    std::size_t start = 0;
    while (start < rest.size()) {
      auto comma = rest.find(',', start);
      std::string piece = comma == std::string::npos ? rest.substr(start)
                                                     : rest.substr(start, comma - start);
      if (!piece.empty()) c.per_seed.push_back(parse_double(piece));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace udalm::cli
