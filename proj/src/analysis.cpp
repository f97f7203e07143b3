#include "udalm/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "udalm/errors.hpp"
#include "udalm/rng.hpp"

namespace udalm::analysis {

namespace {

struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const std::vector<const FeatureVector*>& rows, int dim) {
    Standardizer s;
    s.mean.assign(dim, 0.0);
    s.scale.assign(dim, 1.0);
    if (rows.empty()) return s;
    for (const auto* r : rows)
      for (int j = 0; j < dim; ++j) s.mean[j] += r->values[j];
    for (int j = 0; j < dim; ++j) s.mean[j] /= static_cast<double>(rows.size());
    std::vector<double> var(dim, 0.0);
    for (const auto* r : rows)
      for (int j = 0; j < dim; ++j) {
        double c = r->values[j] - s.mean[j];
        var[j] += c * c;
      }
    for (int j = 0; j < dim; ++j) {
      double sd = std::sqrt(var[j] / static_cast<double>(rows.size()));
      s.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
  }

  std::vector<double> apply(const FeatureVector& r) const {
    std::vector<double> out(mean.size());
    for (std::size_t j = 0; j < mean.size(); ++j)
      out[j] = (r.values[j] - mean[j]) * scale[j];
    return out;
  }
};

// Full-batch subgradient descent on L2-regularized hinge loss with a
// Pegasos-style step size. Deterministic.
struct HingeClassifier {
  std::vector<double> w;  // last entry is the bias
  static constexpr double kReg = 1e-3;
  static constexpr int kIters = 400;

  void train(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys) {
    const std::size_t dim = xs.front().size() + 1;
    w.assign(dim, 0.0);
    std::vector<double> grad(dim);
    for (int t = 0; t < kIters; ++t) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double y = ys[i] == 1 ? 1.0 : -1.0;
        double margin = w[dim - 1];
        for (std::size_t j = 0; j + 1 < dim; ++j) margin += w[j] * xs[i][j];
        if (y * margin < 1.0) {
          for (std::size_t j = 0; j + 1 < dim; ++j) grad[j] -= y * xs[i][j];
          grad[dim - 1] -= y;
        }
      }
      const double inv_n = 1.0 / static_cast<double>(xs.size());
      const double lr = 1.0 / (kReg * static_cast<double>(t + 10));
      for (std::size_t j = 0; j + 1 < dim; ++j)
        w[j] -= lr * (grad[j] * inv_n + kReg * w[j]);
      w[dim - 1] -= lr * grad[dim - 1] * inv_n;  // bias unregularized
    }
  }

  int predict(const std::vector<double>& x) const {
    double margin = w.back();
    for (std::size_t j = 0; j + 1 < w.size(); ++j) margin += w[j] * x[j];
    return margin >= 0.0 ? 1 : 0;
  }
};

}  // namespace

void FeatureSet::push(std::vector<double> values, int domain, int label) {
  if (vectors.empty())
    dim = static_cast<int>(values.size());
  else if (static_cast<int>(values.size()) != dim)
    throw DataError("feature set: inconsistent dimensionality");
  FeatureVector fv;
  fv.values = std::move(values);
  fv.domain = domain;
  fv.label = label;
  vectors.push_back(std::move(fv));
}

double a_distance_from_error(double epsilon_d) {
  double d = 2.0 * (1.0 - 2.0 * epsilon_d);
  if (d < 0.0) d = 0.0;
  if (d > 2.0) d = 2.0;
  return d;
}

ADistanceResult proxy_a_distance(const FeatureSet& source_features,
                                 const FeatureSet& target_features,
                                 int train_count_per_domain, std::uint64_t seed) {
  if (source_features.vectors.size() < 2 || target_features.vectors.size() < 2)
    throw DataError("proxy_a_distance: need at least 2 examples per domain");
  if (source_features.dim != target_features.dim)
    throw DataError("proxy_a_distance: feature dimensionality mismatch");

  // balance domains, then split each half-and-half into train and held-out
  const int per_domain = static_cast<int>(
      std::min(source_features.vectors.size(), target_features.vectors.size()));
  auto pick = [&](const FeatureSet& fs, const std::string& tag) {
    std::vector<int> idx(fs.vectors.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(derive_seed(seed, "adist_" + tag));
    rng.shuffle(idx);
    idx.resize(per_domain);
    return idx;
  };
  std::vector<int> src_idx = pick(source_features, "source");
  std::vector<int> tgt_idx = pick(target_features, "target");

  const int half = per_domain / 2;
  if (half < 1) throw DataError("proxy_a_distance: not enough samples for a held-out split");
  const int train_n = std::min(half, train_count_per_domain > 0 ? train_count_per_domain : half);

  std::vector<const FeatureVector*> train_rows;
  std::vector<std::pair<const FeatureVector*, int>> heldout;
  std::vector<int> train_labels;
  for (int i = 0; i < per_domain; ++i) {
    const FeatureVector* src = &source_features.vectors[src_idx[i]];
    const FeatureVector* tgt = &target_features.vectors[tgt_idx[i]];
    if (i < half) {
      if (i < train_n) {
        train_rows.push_back(src);
        train_labels.push_back(0);
        train_rows.push_back(tgt);
        train_labels.push_back(1);
      }
    } else {
      heldout.emplace_back(src, 0);
      heldout.emplace_back(tgt, 1);
    }
  }

  Standardizer stz = Standardizer::fit(train_rows, source_features.dim);
  std::vector<std::vector<double>> xs;
  xs.reserve(train_rows.size());
  for (const auto* r : train_rows) xs.push_back(stz.apply(*r));

  HingeClassifier clf;
  clf.train(xs, train_labels);

  long wrong = 0;
  for (const auto& [row, domain] : heldout)
    if (clf.predict(stz.apply(*row)) != domain) ++wrong;

  ADistanceResult res;
  res.epsilon_d = static_cast<double>(wrong) / static_cast<double>(heldout.size());
  res.d_a = a_distance_from_error(res.epsilon_d);
  res.train_per_domain = train_n;
  res.heldout_per_domain = per_domain - half;
  return res;
}

BoundReport make_bound_report(double epsilon_s, double d_a, double epsilon_t) {
  BoundReport r;
  r.epsilon_s = epsilon_s;
  r.d_a = d_a;
  r.bound_value = epsilon_s + d_a / 2.0;
  r.epsilon_t = epsilon_t;
  r.c_note =
      "ideal joint hypothesis term is unobservable without joint labels and is "
      "not estimated; the reported bound omits it";
  return r;
}

FeatureSet cls_features(const nn::EncoderParams& params,
                        const std::vector<train::Encoded>& set, int domain,
                        const std::string& provenance) {
  FeatureSet fs;
  fs.provenance = provenance;
  for (const auto& e : set) {
    Tensor cls = nn::eval_cls_feature(params, e.seq);
    fs.push(std::move(cls.v), domain, e.label);
  }
  return fs;
}

BoundReport bound_report(const nn::EncoderParams& params, const train::EncodedSplits& splits,
                         int adist_train_per_domain, std::uint64_t seed) {
  double src_acc = 0.0;
  train::EvalResult src = train::evaluate(params, splits.source_val);
  src_acc = src.accuracy;
  train::EvalResult tgt = train::evaluate(params, splits.target_test);

  FeatureSet fs_src = cls_features(params, splits.source_val, 0, "source_val");
  FeatureSet fs_tgt = cls_features(params, splits.target_val, 1, "target_val");
  ADistanceResult ad = proxy_a_distance(fs_src, fs_tgt, adist_train_per_domain, seed);

  return make_bound_report(1.0 - src_acc, ad.d_a, 1.0 - tgt.accuracy);
}

namespace {

// Cyclic Jacobi eigen decomposition of a symmetric matrix; deterministic.
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
  eigvecs.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigvecs[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return eigvecs[static_cast<std::size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-22) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (int i = 0; i < n; ++i) eigvals[i] = A(i, i);
}

std::vector<ProjectedPoint> pca_2d(const FeatureSet& features) {
  const int n = static_cast<int>(features.vectors.size());
  const int d = features.dim;
  std::vector<double> mean(d, 0.0);
  for (const auto& fv : features.vectors)
    for (int j = 0; j < d; ++j) mean[j] += fv.values[j];
  for (int j = 0; j < d; ++j) mean[j] /= n;

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& fv : features.vectors) {
    for (int i = 0; i < d; ++i) {
      const double ci = fv.values[i] - mean[i];
      for (int j = i; j < d; ++j)
        cov[static_cast<std::size_t>(i) * d + j] += ci * (fv.values[j] - mean[j]);
    }
  }
  const double inv = 1.0 / std::max(1, n - 1);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      cov[static_cast<std::size_t>(i) * d + j] *= inv;
      cov[static_cast<std::size_t>(j) * d + i] = cov[static_cast<std::size_t>(i) * d + j];
    }

  std::vector<double> eigvals, eigvecs;
  jacobi_eigen(cov, d, eigvals, eigvecs);

  // top-2 components, sign fixed so the largest-magnitude loading is positive
  std::vector<int> order(d);
  for (int i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (eigvals[a] != eigvals[b]) return eigvals[a] > eigvals[b];
    return a < b;
  });
  std::vector<std::vector<double>> comps(2, std::vector<double>(d));
  for (int c = 0; c < 2; ++c) {
    int col = order[c];
    int arg = 0;
    for (int i = 0; i < d; ++i) {
      comps[c][i] = eigvecs[static_cast<std::size_t>(i) * d + col];
      if (std::abs(comps[c][i]) > std::abs(comps[c][arg])) arg = i;
    }
    if (comps[c][arg] < 0.0)
      for (int i = 0; i < d; ++i) comps[c][i] = -comps[c][i];
  }

  std::vector<ProjectedPoint> out;
  out.reserve(n);
  for (const auto& fv : features.vectors) {
    ProjectedPoint p;
    for (int j = 0; j < d; ++j) {
      const double c = fv.values[j] - mean[j];
      p.x += c * comps[0][j];
      p.y += c * comps[1][j];
    }
    p.domain = fv.domain;
    p.label = fv.label;
    out.push_back(p);
  }
  return out;
}

std::vector<ProjectedPoint> tsne_2d(const FeatureSet& features, const ProjectionOptions& opt) {
  const int n = static_cast<int>(features.vectors.size());
  const int d = features.dim;

  std::vector<double> dist2(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        double c = features.vectors[i].values[k] - features.vectors[j].values[k];
        s += c * c;
      }
      dist2[static_cast<std::size_t>(i) * n + j] = s;
      dist2[static_cast<std::size_t>(j) * n + i] = s;
    }

  const double perplexity = std::min(opt.perplexity, (n - 1) / 3.0);
  const double target_entropy = std::log(std::max(2.0, perplexity));
  std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);

  for (int i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = 1e12;
    std::vector<double> row(n, 0.0);
    for (int iter = 0; iter < 60; ++iter) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * dist2[static_cast<std::size_t>(i) * n + j]);
        sum += row[j];
      }
      double entropy = 0.0;
      for (int j = 0; j < n; ++j) {
        if (row[j] <= 0.0) continue;
        double pj = row[j] / sum;
        entropy -= pj * std::log(pj);
      }
      if (std::abs(entropy - target_entropy) < 1e-5) break;
      if (entropy > target_entropy) {
        beta_lo = beta;
        beta = beta_hi > 1e11 ? beta * 2.0 : (beta + beta_hi) / 2.0;
      } else {
        beta_hi = beta;
        beta = (beta + beta_lo) / 2.0;
      }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += row[j];
    for (int j = 0; j < n; ++j)
      p[static_cast<std::size_t>(i) * n + j] = row[j] / std::max(sum, 1e-300);
  }

  // symmetrize
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double v = (p[static_cast<std::size_t>(i) * n + j] +
                  p[static_cast<std::size_t>(j) * n + i]) /
                 (2.0 * n);
      v = std::max(v, 1e-12);
      p[static_cast<std::size_t>(i) * n + j] = v;
      p[static_cast<std::size_t>(j) * n + i] = v;
    }

  Rng rng(derive_seed(opt.seed, "tsne_init"));
  std::vector<double> y(static_cast<std::size_t>(n) * 2);
  for (double& v : y) v = rng.normal(0.0, 1e-4);
  std::vector<double> vel(static_cast<std::size_t>(n) * 2, 0.0);
  std::vector<double> grad(static_cast<std::size_t>(n) * 2);
  std::vector<double> q(static_cast<std::size_t>(n) * n);

  const double lr = 200.0;
  for (int iter = 0; iter < opt.iterations; ++iter) {
    const double exaggeration = iter < 100 ? 12.0 : 1.0;
    const double momentum = iter < 250 ? 0.5 : 0.8;

    double qsum = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        double dx = y[2 * i] - y[2 * j];
        double dy = y[2 * i + 1] - y[2 * j + 1];
        double t = 1.0 / (1.0 + dx * dx + dy * dy);
        q[static_cast<std::size_t>(i) * n + j] = t;
        q[static_cast<std::size_t>(j) * n + i] = t;
        qsum += 2.0 * t;
      }
    qsum = std::max(qsum, 1e-300);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        double t = q[static_cast<std::size_t>(i) * n + j];
        double coeff =
            4.0 * (exaggeration * p[static_cast<std::size_t>(i) * n + j] - t / qsum) * t;
        grad[2 * i] += coeff * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += coeff * (y[2 * i + 1] - y[2 * j + 1]);
      }

    for (std::size_t k = 0; k < y.size(); ++k) {
      vel[k] = momentum * vel[k] - lr * grad[k];
      y[k] += vel[k];
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= n;
    my /= n;
    for (int i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }

  std::vector<ProjectedPoint> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    ProjectedPoint pt;
    pt.x = y[2 * i];
    pt.y = y[2 * i + 1];
    pt.domain = features.vectors[i].domain;
    pt.label = features.vectors[i].label;
    out.push_back(pt);
  }
  return out;
}

}  // namespace

std::vector<ProjectedPoint> project_2d(const FeatureSet& features,
                                       const ProjectionOptions& options) {
  if (features.dim < 2) throw DataError("project_2d: feature dimension below 2");
  if (features.vectors.size() < 3) throw DataError("project_2d: need at least 3 vectors");
  if (options.method == ProjectionMethod::kPca) return pca_2d(features);
  return tsne_2d(features, options);
}

std::vector<SweepCell> sample_efficiency_sweep(const data::SplitSet& splits,
                                               const std::vector<int>& sizes,
                                               const std::vector<std::string>& regimes,
                                               const std::vector<std::uint64_t>& seeds,
                                               const TrainCellFn& run_cell) {
  std::vector<SweepCell> out;
  for (int size : sizes) {
    for (const auto& regime : regimes) {
      SweepCell cell;
      cell.size = size;
      cell.regime = regime;
      for (std::uint64_t seed : seeds) {
        // one permutation per seed: prefixes nest across sizes
        data::SplitSet sub = data::subsample_target(splits, size, seed);
        cell.per_seed.push_back(run_cell(sub, regime, seed));
      }
      cell.mean_accuracy = mean_of(cell.per_seed);
      cell.std_accuracy = population_std(cell.per_seed);
      out.push_back(std::move(cell));
    }
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace udalm::analysis
