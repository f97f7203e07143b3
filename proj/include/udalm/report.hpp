#ifndef UDALM_REPORT_HPP
#define UDALM_REPORT_HPP

#include <string>
#include <vector>

#include "udalm/analysis.hpp"
#include "udalm/trainer.hpp"

namespace udalm::cli {

struct ResultsRow {
  std::string pair;
  std::string regime;
  double mean = 0.0;
  double stddev = 0.0;  // population
  int seeds = 0;
};

// Per-(pair, regime) accuracy table with an unweighted macro-average footer.
struct ResultsTable {
  std::vector<ResultsRow> rows;
  std::vector<ResultsRow> macro;  // pair = "macro"

  static ResultsTable from_records(const std::vector<train::RunRecord>& records);
};

struct CriteriaRow {
  std::string criterion;
  double mean = 0.0;
  double stddev = 0.0;
  int seeds = 0;
};

struct BoundRow {
  std::string regime;
  std::uint64_t seed = 0;
  analysis::BoundReport report;
};

// Deterministic plain-text report: accuracies in percent, two decimals,
// population standard deviation.
std::string render_report(const ResultsTable& table, const std::vector<CriteriaRow>& criteria,
                          const std::vector<BoundRow>& bounds,
                          const std::vector<analysis::SweepCell>& sweep);

std::string render_sweep_tsv(const std::vector<analysis::SweepCell>& sweep);
std::vector<analysis::SweepCell> parse_sweep_tsv(const std::string& text);

}  // namespace udalm::cli

#endif
