#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/regression.hpp"

namespace causefs {

/// Feature-side grouping. assignments maps each feature to a group in
/// [0, M); groups are numbered by their smallest member index. nu holds the
/// per-group importance weights (simplex). degenerate marks a grouping the
/// quality index could not discriminate (e.g. identical points).
struct GranularityPartition {
  IntVector assignments;
  int M = 0;
  Vector nu;
  bool degenerate = false;
};

namespace detail {

/// Average-linkage agglomeration on a precomputed distance matrix with a
/// cached nearest neighbor per cluster. Merge choice is the globally closest
/// pair; distance ties break on the lexicographically smallest index pair,
/// and merged clusters keep the smaller index. Returns canonical assignments
/// for every cluster count in [m_min, m_max], ascending.
inline std::vector<IntVector> agglomerative_cuts(const Matrix& dist, int m_min, int m_max) {
  const Index d = dist.rows();
  require(dist.cols() == d, "agglomerative_cuts: distance matrix must be square");
  require(m_min >= 1 && m_min <= m_max && m_max <= d,
          "agglomerative_cuts: need 1 <= m_min <= m_max <= d");

  Matrix D = dist;
  std::vector<bool> active(static_cast<std::size_t>(d), true);
  std::vector<Index> size(static_cast<std::size_t>(d), 1);
  std::vector<Index> parent(static_cast<std::size_t>(d));
  std::iota(parent.begin(), parent.end(), Index{0});
  std::vector<Index> best_j(static_cast<std::size_t>(d), -1);
  std::vector<double> best_d(static_cast<std::size_t>(d),
                             std::numeric_limits<double>::infinity());

  auto recompute_best = [&](Index i) {
    best_j[static_cast<std::size_t>(i)] = -1;
    best_d[static_cast<std::size_t>(i)] = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < d; ++j) {
      if (j == i || !active[static_cast<std::size_t>(j)]) continue;
      if (D(i, j) < best_d[static_cast<std::size_t>(i)]) {
        best_d[static_cast<std::size_t>(i)] = D(i, j);
        best_j[static_cast<std::size_t>(i)] = j;
      }
    }
  };
  for (Index i = 0; i < d; ++i) recompute_best(i);

  auto find_root = [&](Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };

  std::vector<IntVector> cuts;
  Index clusters = d;
  auto snapshot = [&]() {
    std::vector<Index> roots;
    for (Index i = 0; i < d; ++i)
      if (active[static_cast<std::size_t>(i)]) roots.push_back(i);
    IntVector assign(d);
    for (Index i = 0; i < d; ++i) {
      const Index r = find_root(i);
      const auto it = std::lower_bound(roots.begin(), roots.end(), r);
      assign[i] = static_cast<int>(it - roots.begin());
    }
    return assign;
  };

  if (clusters <= m_max) cuts.push_back(snapshot());
  while (clusters > m_min) {
    Index a = -1, b = -1;
    double md = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < d; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      const Index j = best_j[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      const double dij = best_d[static_cast<std::size_t>(i)];
      const Index lo = std::min(i, j), hi = std::max(i, j);
      if (dij < md || (dij == md && (lo < a || (lo == a && hi < b)))) {
        md = dij;
        a = lo;
        b = hi;
      }
    }
    require(a >= 0, "agglomerative_cuts: no mergeable pair found");

    const Index na = size[static_cast<std::size_t>(a)];
    const Index nb = size[static_cast<std::size_t>(b)];
    for (Index o = 0; o < d; ++o) {
      if (!active[static_cast<std::size_t>(o)] || o == a || o == b) continue;
      const double v = (static_cast<double>(na) * D(a, o) +
                        static_cast<double>(nb) * D(b, o) ) /
                       static_cast<double>(na + nb);
      D(a, o) = v;
      D(o, a) = v;
    }
    active[static_cast<std::size_t>(b)] = false;
    size[static_cast<std::size_t>(a)] = na + nb;
    parent[static_cast<std::size_t>(b)] = a;
    --clusters;

    recompute_best(a);
    for (Index o = 0; o < d; ++o) {
      if (!active[static_cast<std::size_t>(o)] || o == a) continue;
      const Index bj = best_j[static_cast<std::size_t>(o)];
      if (bj == a || bj == b) {
        recompute_best(o);
      } else if (D(o, a) < best_d[static_cast<std::size_t>(o)] ||
                 (D(o, a) == best_d[static_cast<std::size_t>(o)] && a < bj)) {
        best_d[static_cast<std::size_t>(o)] = D(o, a);
        best_j[static_cast<std::size_t>(o)] = a;
      }
    }

    if (clusters >= m_min && clusters <= m_max) cuts.push_back(snapshot());
  }
  std::reverse(cuts.begin(), cuts.end());
  return cuts;
}

/// Pairwise Euclidean distances between the rows of points.
inline Matrix row_distance_matrix(const Matrix& points) {
  const Vector sq = points.rowwise().squaredNorm();
  Matrix D = -2.0 * (points * points.transpose());
  D.colwise() += sq;
  D.rowwise() += sq.transpose();
  D = D.cwiseMax(0.0).cwiseSqrt();
  D.diagonal().setZero();
  return D;
}

}  // namespace detail

/// Variance-ratio quality of a grouping of the rows of points: between-group
/// dispersion over within-group dispersion, scaled by (p - M) / (M - 1).
/// Zero within-dispersion with separated groups scores +inf; zero
/// between-dispersion scores 0.
inline double ch_index(const Matrix& points, const IntVector& assignments, int M) {
  const Index p = points.rows();
  require(assignments.size() == p, "ch_index: assignment size mismatch");
  require(M >= 2 && M <= p - 1, "ch_index: need 2 <= M <= p-1");

  const Eigen::RowVectorXd overall = points.colwise().mean();
  Matrix centroids = Matrix::Zero(M, points.cols());
  std::vector<Index> count(static_cast<std::size_t>(M), 0);
  for (Index i = 0; i < p; ++i) {
    const int g = assignments[i];
    require(g >= 0 && g < M, "ch_index: assignment out of range");
    centroids.row(g) += points.row(i);
    ++count[static_cast<std::size_t>(g)];
  }
  for (int g = 0; g < M; ++g) {
    require(count[static_cast<std::size_t>(g)] > 0, "ch_index: empty group");
    centroids.row(g) /= static_cast<double>(count[static_cast<std::size_t>(g)]);
  }

  double between = 0.0, within = 0.0;
  for (int g = 0; g < M; ++g)
    between += static_cast<double>(count[static_cast<std::size_t>(g)]) *
               (centroids.row(g) - overall).squaredNorm();
  for (Index i = 0; i < p; ++i)
    within += (points.row(i) - centroids.row(assignments[i])).squaredNorm();

  const double total = between + within;
  const double tiny = 1e-12 * std::max(total, 1e-300);
  if (within <= tiny)
    return between > tiny ? std::numeric_limits<double>::infinity() : 0.0;
  if (between <= tiny) return 0.0;
  return (between / (M - 1)) / (within / static_cast<double>(p - M));
}

/// Groups the rows of points by average-linkage agglomeration on dist,
/// choosing the cluster count in [2, min(m_cap, p-1)] that maximizes the
/// variance-ratio index (ties pick the smallest count). nu is left empty.
inline GranularityPartition cluster_features(const Matrix& points, const Matrix& dist,
                                             int m_cap = 10) {
  const Index p = points.rows();
  require(p >= 2, "cluster_features: need at least 2 points");
  GranularityPartition part;
  if (p == 2) {
    part.assignments = IntVector(2);
    part.assignments << 0, 1;
    part.M = 2;
    return part;
  }
  const int m_max = static_cast<int>(std::min<Index>(m_cap, p - 1));
  const auto cuts = detail::agglomerative_cuts(dist, 2, m_max);
  double best = -std::numeric_limits<double>::infinity();
  int best_m = 2;
  for (std::size_t c = 0; c < cuts.size(); ++c) {
    const int M = 2 + static_cast<int>(c);
    const double score = ch_index(points, cuts[c], M);
    if (score > best) {
      best = score;
      best_m = M;
    }
  }
  part.assignments = cuts[static_cast<std::size_t>(best_m - 2)];
  part.M = best_m;
  part.degenerate = !(best > 0.0);
  return part;
}

inline GranularityPartition cluster_features(const Matrix& points, int m_cap = 10) {
  return cluster_features(points, detail::row_distance_matrix(points), m_cap);
}

/// Correlation distance 1 - |pearson| between features. Constant features
/// are at distance 1 from everything else.
inline Matrix correlation_distance_matrix(const DataMatrix& data) {
  const Index d = data.feature_count();
  const Index n = data.sample_count();
  Matrix centered = data.values;
  centered.colwise() -= data.values.rowwise().mean();
  Vector norm = centered.rowwise().norm();
  std::vector<bool> constant(static_cast<std::size_t>(d));
  for (Index r = 0; r < d; ++r) {
    const double scale = 1.0 + data.values.row(r).cwiseAbs().maxCoeff();
    constant[static_cast<std::size_t>(r)] =
        norm[r] <= 1e-12 * scale * std::sqrt(static_cast<double>(n));
  }
  Matrix D(d, d);
  for (Index i = 0; i < d; ++i) {
    D(i, i) = 0.0;
    for (Index j = i + 1; j < d; ++j) {
      double dist;
      if (constant[static_cast<std::size_t>(i)] || constant[static_cast<std::size_t>(j)]) {
        dist = 1.0;
      } else {
        const double r = centered.row(i).dot(centered.row(j)) / (norm[i] * norm[j]);
        dist = 1.0 - std::min(std::abs(r), 1.0);
      }
      D(i, j) = dist;
      D(j, i) = dist;
    }
  }
  return D;
}

/// Correlation-driven feature grouping used before any model is available.
inline GranularityPartition initial_partition(const DataMatrix& data) {
  data.validate();
  const Matrix D = correlation_distance_matrix(data);
  return cluster_features(D, D);
}

/// Feature grouping by the rows of the selection matrix.
inline GranularityPartition causal_partition(const SelectionMatrix& sel) {
  require(sel.W.rows() >= 2, "causal_partition: need at least 2 features");
  return cluster_features(sel.W);
}

/// Group weights proportional to the selection energy captured by each
/// group; uniform when W carries no energy at all.
inline GranularityPartition compute_nu(const SelectionMatrix& sel, GranularityPartition part) {
  require(part.M >= 1, "compute_nu: partition has no groups");
  require(part.assignments.size() == sel.W.rows(), "compute_nu: size mismatch");
  Vector energy = Vector::Zero(part.M);
  const Vector row_sq = sel.W.rowwise().squaredNorm();
  for (Index i = 0; i < part.assignments.size(); ++i) {
    const int g = part.assignments[i];
    require(g >= 0 && g < part.M, "compute_nu: assignment out of range");
    energy[g] += row_sq[i];
  }
  const double total = energy.sum();
  part.nu = total > 0.0 ? Vector(energy / total)
                        : Vector(Vector::Constant(part.M, 1.0 / part.M));
  return part;
}

}  // namespace causefs
