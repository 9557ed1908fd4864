#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "causefs/common.hpp"

namespace causefs {

/// Sample-affinity graph. Each column lies on the probability simplex, has at
/// most k nonzeros and a zero diagonal. gamma holds the per-column
/// regularizer weight fixed by the closed-form update that produced the
/// column (zero where the column fell back to a uniform tie split).
struct SimilarityGraph {
  Matrix S;  // n x n
  int k = 0;
  Vector gamma;  // size n
};

struct Laplacian {
  Matrix L;  // n x n, symmetric PSD
};

/// Minimizer of tau's + gamma ||s||^2 over the probability simplex with at
/// most k nonzeros, where gamma is chosen so exactly the k smallest tau
/// entries stay active. Entries equal to +inf are excluded (self-affinity
/// masking). Ties are ordered by ascending index; if the (k+1)-th smallest
/// value ties the k-th, its weight is zero by construction. gamma_out
/// receives the induced regularizer weight.
inline Vector simplex_sparse_solve(const Vector& tau, int k, double* gamma_out = nullptr) {
  const Index n = tau.size();
  std::vector<Index> finite;
  finite.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    if (std::isfinite(tau[j])) {
      finite.push_back(j);
    } else {
      require(tau[j] > 0, "simplex_sparse_solve: entries must be finite or +inf");
    }
  }
  const Index nf = static_cast<Index>(finite.size());
  require(k >= 1, "simplex_sparse_solve: k must be at least 1");
  require(k <= nf, "simplex_sparse_solve: k exceeds the number of finite entries");

  std::sort(finite.begin(), finite.end(), [&](Index a, Index b) {
    return tau[a] < tau[b] || (tau[a] == tau[b] && a < b);
  });

  Vector s = Vector::Zero(n);
  if (k == nf) {
    // No (k+1)-th value exists; the sparsity penalty vanishes in the limit.
    for (Index p = 0; p < k; ++p) s[finite[static_cast<std::size_t>(p)]] = 1.0 / k;
    if (gamma_out) *gamma_out = 0.0;
    return s;
  }

  const double t_next = tau[finite[static_cast<std::size_t>(k)]];
  double head_sum = 0.0;
  for (int p = 0; p < k; ++p) head_sum += tau[finite[static_cast<std::size_t>(p)]];
  const double denom = k * t_next - head_sum;
  if (gamma_out) *gamma_out = std::max(denom, 0.0) / 2.0;

  // Spread below roundoff scale means the k+1 smallest are numerically tied.
  if (denom <= 1e-12 * std::max(1.0, std::abs(t_next))) {
    for (int p = 0; p < k; ++p) s[finite[static_cast<std::size_t>(p)]] = 1.0 / k;
    if (gamma_out) *gamma_out = 0.0;
    return s;
  }

  double mass = 0.0;
  std::vector<double> num(static_cast<std::size_t>(k));
  for (int p = 0; p < k; ++p) {
    num[static_cast<std::size_t>(p)] =
        std::max(t_next - tau[finite[static_cast<std::size_t>(p)]], 0.0);
    mass += num[static_cast<std::size_t>(p)];
  }
  for (int p = 0; p < k; ++p)
    s[finite[static_cast<std::size_t>(p)]] = num[static_cast<std::size_t>(p)] / mass;
  return s;
}

namespace detail {

/// tau' s + gamma ||s||^2 restricted to the support of s; entries where s is
/// zero are skipped so +inf masks never poison the value.
inline double column_value(const Vector& tau, const Vector& s, double gamma) {
  double v = gamma * s.squaredNorm();
  for (Index j = 0; j < s.size(); ++j)
    if (s[j] > 0.0) v += tau[j] * s[j];
  return v;
}

}  // namespace detail

/// Column-wise graph refresh shared by the per-granularity and fused graphs.
/// Column i minimizes sum_j tau_j s_j + gamma ||s||^2 over the k-sparse
/// simplex with tau_j = 0.5 ||y_j - y_i||^2 - coupling_weight * coupling(j, i)
/// on the columns y of points. Pass a zero coupling for a plain kNN graph.
/// With an incumbent graph, a column keeps the incumbent's weights and
/// stored regularizer whenever the refreshed column would score worse under
/// this call's tau, which keeps alternating sweeps monotone even though the
/// stored regularizer weight moves between refreshes.
inline SimilarityGraph adaptive_graph_update(const Matrix& points, const Matrix& coupling,
                                             double coupling_weight, int k,
                                             const SimilarityGraph* incumbent = nullptr) {
  const Index n = points.cols();
  require(n >= 3, "adaptive_graph_update: need at least 3 samples");
  require(k >= 1 && k <= n - 2, "adaptive_graph_update: k out of range, need 1 <= k <= n-2");
  require(coupling.rows() == n && coupling.cols() == n,
          "adaptive_graph_update: coupling must be n x n");
  if (incumbent)
    require(incumbent->S.rows() == n && incumbent->S.cols() == n &&
                incumbent->gamma.size() == n,
            "adaptive_graph_update: incumbent size mismatch");

  const Vector sq = points.colwise().squaredNorm();
  const Matrix gram = points.transpose() * points;

  SimilarityGraph g;
  g.S.resize(n, n);
  g.k = k;
  g.gamma.resize(n);
  Vector tau(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double dist2 = std::max(sq[i] + sq[j] - 2.0 * gram(j, i), 0.0);
      tau[j] = 0.5 * dist2 - coupling_weight * coupling(j, i);
    }
    tau[i] = std::numeric_limits<double>::infinity();
    double gamma = 0.0;
    Vector s = simplex_sparse_solve(tau, k, &gamma);
    if (incumbent) {
      const double fresh = detail::column_value(tau, s, gamma);
      const double kept = detail::column_value(tau, incumbent->S.col(i),
                                               incumbent->gamma[i]);
      if (kept < fresh) {
        s = incumbent->S.col(i);
        gamma = incumbent->gamma[i];
      }
    }
    g.S.col(i) = s;
    g.gamma[i] = gamma;
  }
  return g;
}

/// Plain kNN affinity graph on the columns of features (rows are dimensions).
inline SimilarityGraph knn_init(const Matrix& features, int k) {
  const Index n = features.cols();
  require(n >= 3, "knn_init: need at least 3 samples");
  return adaptive_graph_update(features, Matrix::Zero(n, n), 0.0, k);
}

/// Unnormalized graph Laplacian of the symmetrized affinities.
inline Laplacian laplacian(const SimilarityGraph& g) {
  const Matrix A = 0.5 * (g.S + g.S.transpose());
  Laplacian lap;
  lap.L = Matrix(A.rowwise().sum().asDiagonal()) - A;
  return lap;
}

}  // namespace causefs
