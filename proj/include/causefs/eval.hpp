#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/regression.hpp"

namespace causefs {

struct ClusteringResult {
  std::vector<int> assignments;
  double inertia = 0.0;
  int restarts = 1;
};

namespace detail {

/// One k-means run: D^2-weighted seeding then Lloyd sweeps, at most 300 or
/// until the assignment fixpoint. Ties in seeding scans, assignment, and the
/// empty-cluster farthest-point rule all resolve to the smallest index.
/// Consumes exactly K draws from rng regardless of data.
inline ClusteringResult kmeans_single(const Matrix& points, int K, Rng& rng,
                                      std::vector<double>* inertia_trace = nullptr) {
  const Index n = points.rows();
  const Index p = points.cols();
  Matrix centers(K, p);

  centers.row(0) = points.row(static_cast<Index>(rng.integer(static_cast<std::uint64_t>(n))));
  Vector d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < K; ++c) {
    const double total = d2.sum();
    const double r = rng.uniform() * total;
    Index pick = n - 1;
    if (total > 0.0) {
      double cum = 0.0;
      for (Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(c % n);  // all remaining points coincide
    }
    centers.row(c) = points.row(pick);
    d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> prev_assign;
  double inertia = 0.0;
  for (int sweep = 0; sweep < 300; ++sweep) {
    inertia = 0.0;
    Vector nearest(n);
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = (points.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < K; ++c) {
        const double dc = (points.row(i) - centers.row(c)).squaredNorm();
        if (dc < bd) {
          bd = dc;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
      nearest[i] = bd;
      inertia += bd;
    }
    if (inertia_trace) inertia_trace->push_back(inertia);
    if (assign == prev_assign) break;
    prev_assign = assign;

    Matrix sums = Matrix::Zero(K, p);
    std::vector<Index> count(static_cast<std::size_t>(K), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < K; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(count[static_cast<std::size_t>(c)]);
      } else {
        // Reseed an empty cluster at the point farthest from its center.
        Index far = 0;
        for (Index i = 1; i < n; ++i)
          if (nearest[i] > nearest[far]) far = i;
        centers.row(c) = points.row(far);
        nearest[far] = 0.0;
      }
    }
  }

  ClusteringResult out;
  out.assignments = std::move(assign);
  out.inertia = inertia;
  return out;
}

/// Minimum-cost perfect matching on a square cost matrix (potentials
/// method), O(s^3). Returns the column matched to each row.
inline std::vector<int> hungarian(const Matrix& cost) {
  const int s = static_cast<int>(cost.rows());
  std::vector<double> u(static_cast<std::size_t>(s + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(s + 1), 0.0);
  std::vector<int> match(static_cast<std::size_t>(s + 1), 0);  // column -> row
  std::vector<int> way(static_cast<std::size_t>(s + 1), 0);
  for (int i = 1; i <= s; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(s + 1),
                             std::numeric_limits<double>::infinity());
    std::vector<bool> used(static_cast<std::size_t>(s + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = 0;
      for (int j = 1; j <= s; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= s; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(s), -1);
  for (int j = 1; j <= s; ++j)
    row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

inline void check_label_vectors(const std::vector<int>& a, const std::vector<int>& b) {
  require(!a.empty() && a.size() == b.size(),
          "label vectors must be non-empty and the same length");
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i] >= 0 && b[i] >= 0, "labels must be nonnegative");
}

}  // namespace detail

/// Best-of-restarts k-means on row-vector points. Restart r of a larger
/// budget reproduces restart r of a smaller one for the same seed, so the
/// best inertia is non-increasing in the restart count.
inline ClusteringResult kmeans(const Matrix& points, int K, int restarts,
                               std::uint64_t seed) {
  const Index n = points.rows();
  require(K >= 1, "kmeans: K must be at least 1");
  require(n >= K, "kmeans: need at least K points");
  require(restarts >= 1, "kmeans: restarts must be at least 1");
  Rng rng(seed);
  ClusteringResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    ClusteringResult cur = detail::kmeans_single(points, K, rng);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  best.restarts = restarts;
  return best;
}

/// Clustering accuracy: the best one-to-one cluster-to-class relabeling
/// (rectangular cases padded), matched fraction of samples.
inline double acc(const std::vector<int>& predicted, const std::vector<int>& truth) {
  detail::check_label_vectors(predicted, truth);
  const int kp = *std::max_element(predicted.begin(), predicted.end()) + 1;
  const int kt = *std::max_element(truth.begin(), truth.end()) + 1;
  const int s = std::max(kp, kt);
  Matrix confusion = Matrix::Zero(s, s);
  for (std::size_t i = 0; i < predicted.size(); ++i)
    confusion(predicted[i], truth[i]) += 1.0;
  const auto matching = detail::hungarian(-confusion);
  double matched = 0.0;
  for (int r = 0; r < s; ++r) matched += confusion(r, matching[static_cast<std::size_t>(r)]);
  return matched / static_cast<double>(predicted.size());
}

/// Normalized mutual information with the geometric-mean normalizer.
/// Two single-cluster partitions are identical, hence 1; a single-cluster
/// partition against a split one carries no information, hence 0.
inline double nmi(const std::vector<int>& predicted, const std::vector<int>& truth) {
  detail::check_label_vectors(predicted, truth);
  const int kp = *std::max_element(predicted.begin(), predicted.end()) + 1;
  const int kt = *std::max_element(truth.begin(), truth.end()) + 1;
  const double n = static_cast<double>(predicted.size());
  Matrix joint = Matrix::Zero(kp, kt);
  for (std::size_t i = 0; i < predicted.size(); ++i) joint(predicted[i], truth[i]) += 1.0;
  joint /= n;
  const Vector pp = joint.rowwise().sum();
  const Vector pt = joint.colwise().sum();

  auto entropy = [](const Vector& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
      if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
  };
  const double hp = entropy(pp);
  const double ht = entropy(pt);
  if (hp == 0.0 && ht == 0.0) return 1.0;
  if (hp == 0.0 || ht == 0.0) return 0.0;

  double mi = 0.0;
  for (int a = 0; a < kp; ++a)
    for (int b = 0; b < kt; ++b)
      if (joint(a, b) > 0.0) mi += joint(a, b) * std::log(joint(a, b) / (pp[a] * pt[b]));
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

/// Fraction of the top-ranked features that are truly causal.
inline double causal_precision(const FeatureRanking& ranking,
                               const std::vector<Index>& causal, int top) {
  require(top >= 1 && top <= static_cast<int>(ranking.order.size()),
          "causal_precision: top out of range");
  const std::set<Index> truth(causal.begin(), causal.end());
  int hits = 0;
  for (int i = 0; i < top; ++i)
    if (truth.count(ranking.order[static_cast<std::size_t>(i)])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(top);
}

/// Ranking by per-feature sample variance, the classical unsupervised
/// baseline.
inline FeatureRanking variance_baseline(const DataMatrix& data, int rho) {
  data.validate();
  require(rho >= 1 && rho <= data.feature_count(),
          "variance_baseline: rho out of range");
  const Index n = data.sample_count();
  FeatureRanking out;
  out.scores.resize(data.feature_count());
  for (Index r = 0; r < data.feature_count(); ++r) {
    const double mean = data.values.row(r).mean();
    out.scores[r] =
        (data.values.row(r).array() - mean).matrix().squaredNorm() /
        static_cast<double>(n - 1);
  }
  out.order = argsort_descending(out.scores);
  out.rho = rho;
  return out;
}

struct MetricsRow {
  int rho = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double nmi_mean = 0.0, nmi_std = 0.0;
};

/// Clustering protocol on a feature subset: `runs` independent single-restart
/// k-means runs with seeds seed, seed+1, ..., scored against the labels.
/// Reported spreads are sample standard deviations over the runs.
inline MetricsRow evaluate_selection(const DataMatrix& data,
                                     const std::vector<Index>& features, int runs,
                                     std::uint64_t seed) {
  data.validate();
  require(data.has_labels(), "evaluation requires labels");
  require(!features.empty(), "evaluate_selection: empty feature subset");
  require(runs >= 1, "evaluate_selection: runs must be at least 1");
  for (Index f : features)
    require(f >= 0 && f < data.feature_count(), "evaluate_selection: feature out of range");

  const Matrix points = data.values(features, Eigen::all).transpose();
  std::vector<double> accs, nmis;
  accs.reserve(static_cast<std::size_t>(runs));
  nmis.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r) {
    const ClusteringResult res =
        kmeans(points, data.n_classes, 1, seed + static_cast<std::uint64_t>(r));
    accs.push_back(acc(res.assignments, data.labels));
    nmis.push_back(nmi(res.assignments, data.labels));
  }
  auto mean_std = [&](const std::vector<double>& xs) {
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) /
                     static_cast<double>(xs.size());
    if (xs.size() < 2) return std::pair<double, double>(m, 0.0);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::pair<double, double>(m, std::sqrt(ss / static_cast<double>(xs.size() - 1)));
  };
  MetricsRow row;
  row.rho = static_cast<int>(features.size());
  std::tie(row.acc_mean, row.acc_std) = mean_std(accs);
  std::tie(row.nmi_mean, row.nmi_std) = mean_std(nmis);
  return row;
}

}  // namespace causefs
