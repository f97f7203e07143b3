#ifndef UDALM_ANALYSIS_HPP
#define UDALM_ANALYSIS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "udalm/corpus.hpp"
#include "udalm/encoder.hpp"
#include "udalm/trainer.hpp"

namespace udalm::analysis {

struct FeatureVector {
  std::vector<double> values;
  int domain = 0;  // 0 source, 1 target
  int label = data::kLabelAbsent;
};

struct FeatureSet {
  std::vector<FeatureVector> vectors;
  int dim = 0;
  std::string provenance;

  void push(std::vector<double> values, int domain, int label = data::kLabelAbsent);
};

struct ADistanceResult {
  double d_a = 0.0;       // clamped to [0, 2]
  double epsilon_d = 0.0; // held-out domain-classification error
  int train_per_domain = 0;
  int heldout_per_domain = 0;
};

// Proxy A-distance d_A = 2(1 - 2 eps_D) from a regularized linear max-margin
// domain classifier (hinge loss). Domains are balanced by subsampling to the
// smaller count, split 50/50 into train and held-out halves, and eps_D is the
// held-out error. Training error of a separable linear model would saturate
// the proxy at 2, so held-out error is used throughout.
ADistanceResult proxy_a_distance(const FeatureSet& source_features,
                                 const FeatureSet& target_features,
                                 int train_count_per_domain, std::uint64_t seed);

// Pure arithmetic form, clamped: 2(1 - 2 eps) into [0, 2].
double a_distance_from_error(double epsilon_d);

struct BoundReport {
  double epsilon_s = 0.0;   // source validation error
  double d_a = 0.0;         // proxy A-distance between validation feature sets
  double bound_value = 0.0; // epsilon_s + d_a / 2
  double epsilon_t = 0.0;   // target test error
  std::string c_note;       // fixed caveat for the unobservable joint term
};

BoundReport make_bound_report(double epsilon_s, double d_a, double epsilon_t);

// Extracts CLS features for both validation sets and assembles the report
// against the quarantined target test split.
BoundReport bound_report(const nn::EncoderParams& params, const train::EncodedSplits& splits,
                         int adist_train_per_domain, std::uint64_t seed);

FeatureSet cls_features(const nn::EncoderParams& params,
                        const std::vector<train::Encoded>& set, int domain,
                        const std::string& provenance);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  int domain = 0;
  int label = data::kLabelAbsent;
};

enum class ProjectionMethod { kPca, kTsne };

struct ProjectionOptions {
  ProjectionMethod method = ProjectionMethod::kPca;
  std::uint64_t seed = 0;
  double perplexity = 30.0;  // t-SNE only
  int iterations = 500;      // t-SNE only
};

// 2-D projection of a feature set. PCA is deterministic with the sign of each
// axis fixed so the largest-magnitude loading is positive; t-SNE is
// deterministic given the seed. Output is centered at the origin.
std::vector<ProjectedPoint> project_2d(const FeatureSet& features,
                                       const ProjectionOptions& options);

struct SweepCell {
  int size = 0;
  std::string regime;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population
  std::vector<double> per_seed;
};

// Callback runs one full train/eval cell and returns target test accuracy.
using TrainCellFn = std::function<double(const data::SplitSet& splits,
                                         const std::string& regime, std::uint64_t seed)>;

// One full train/eval per (size, regime, seed). Subsets nest across sizes for
// a given seed via seeded permutation prefixes.
std::vector<SweepCell> sample_efficiency_sweep(const data::SplitSet& splits,
                                               const std::vector<int>& sizes,
                                               const std::vector<std::string>& regimes,
                                               const std::vector<std::uint64_t>& seeds,
                                               const TrainCellFn& run_cell);

double mean_of(const std::vector<double>& xs);
double population_std(const std::vector<double>& xs);

}  // namespace udalm::analysis

#endif
