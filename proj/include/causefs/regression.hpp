#pragma once

#include <string>
#include <vector>

#include "causefs/common.hpp"
#include "causefs/graphs.hpp"

namespace causefs {

/// Feature selection matrix W (d x h) with the diagonal IRLS weights D that
/// smooth its row-sparsity penalty.
struct SelectionMatrix {
  Matrix W;
  Vector D;  // size d, strictly positive
};

/// Feature ranking by row energy of W. order holds all d features, best
/// first; rho is the requested selection size.
struct FeatureRanking {
  Vector scores;              // size d, nonnegative
  std::vector<Index> order;   // size d, descending score, ties by index
  int rho = 0;

  std::vector<Index> top() const {
    return std::vector<Index>(order.begin(), order.begin() + rho);
  }
};

namespace detail {

inline std::vector<std::vector<Index>> group_indices(const IntVector& assignments,
                                                     int groups) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(groups));
  for (Index i = 0; i < assignments.size(); ++i) {
    const int g = assignments[i];
    require(g >= 0 && g < groups, "group assignment out of range");
    out[static_cast<std::size_t>(g)].push_back(i);
  }
  return out;
}

inline double row_sparsity_norm(const Matrix& W) {
  return W.rowwise().norm().sum();
}

/// Smoothed row-sparsity penalty sum_i sqrt(||W_i.||^2 + epsilon); the
/// quantity the IRLS weights actually descend. Coincides with the plain
/// row-sparsity norm as epsilon -> 0.
inline double smoothed_row_penalty(const Matrix& W, double epsilon) {
  return (W.rowwise().squaredNorm().array() + epsilon).sqrt().sum();
}

}  // namespace detail

/// Coefficient matrix of the W system: alpha Xw Xw' + lambda diag(D) plus,
/// for every feature group, the group's weighted-projection smoothness block
/// Xw_m L_m Xw_m' scattered into the group's rows and columns. Xw = X
/// diag(mu). Symmetric positive definite for lambda > 0.
inline Matrix selection_system_matrix(const Matrix& X, const Vector& mu, const Vector& D,
                                      const std::vector<SimilarityGraph>& graphs,
                                      const IntVector& assignments, double alpha,
                                      double lambda) {
  const Index d = X.rows();
  require(mu.size() == X.cols(), "selection_system_matrix: mu size mismatch");
  require(D.size() == d, "selection_system_matrix: D size mismatch");
  require(alpha > 0.0, "selection_system_matrix: alpha must be positive");
  require(lambda > 0.0, "selection_system_matrix: lambda must be positive");
  require((D.array() > 0.0).all(), "selection_system_matrix: D must be positive");

  const Matrix Xw = X * mu.asDiagonal();
  Matrix lhs = alpha * (Xw * Xw.transpose());
  lhs += Matrix((lambda * D).asDiagonal());
  if (!graphs.empty()) {
    require(assignments.size() == d,
            "selection_system_matrix: assignments size mismatch");
    const auto groups = detail::group_indices(assignments, static_cast<int>(graphs.size()));
    for (std::size_t m = 0; m < graphs.size(); ++m) {
      const auto& idx = groups[m];
      if (idx.empty()) continue;
      const Matrix Xm = Xw(idx, Eigen::all);
      const Matrix block = Xm * laplacian(graphs[m]).L * Xm.transpose();
      lhs(idx, idx) += block;
    }
  }
  return 0.5 * (lhs + lhs.transpose());
}

/// Solves the stationarity system of the smoothed row-sparse objective for
/// fixed D: (alpha Xw Xw' + lambda diag(D) + graph blocks) W = alpha Xw F.
/// One refinement step keeps the residual within 1e-8 of the right-hand
/// side norm; a larger residual raises.
inline SelectionMatrix update_W(const Matrix& X, const Vector& mu, const Vector& D,
                                const Matrix& F, const std::vector<SimilarityGraph>& graphs,
                                const IntVector& assignments, double alpha, double lambda) {
  require(F.rows() == X.cols(), "update_W: F must have one row per sample");
  const Matrix lhs = selection_system_matrix(X, mu, D, graphs, assignments, alpha, lambda);
  const Matrix rhs = alpha * (X * mu.asDiagonal()) * F;

  Eigen::LDLT<Matrix> ldlt(lhs);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error(
        "update_W: factorization failed; the system requires lambda > 0 and "
        "positive IRLS weights");
  Matrix W = ldlt.solve(rhs);
  W += ldlt.solve(rhs - lhs * W);

  const double resid = (lhs * W - rhs).norm();
  const double bound = 1e-8 * rhs.norm();
  if (resid > bound && rhs.norm() > 0.0)
    throw std::runtime_error("update_W: solve residual " + std::to_string(resid) +
                             " exceeds 1e-8 * ||rhs|| = " + std::to_string(bound));
  SelectionMatrix out;
  out.W = std::move(W);
  out.D = D;
  return out;
}

/// IRLS refresh: D_i = 1 / (2 sqrt(||W_i.||^2 + epsilon)).
inline SelectionMatrix refresh_D(SelectionMatrix sel, double epsilon) {
  require(epsilon > 0.0, "refresh_D: epsilon must be positive");
  sel.D = (2.0 * (sel.W.rowwise().squaredNorm().array() + epsilon).sqrt()).inverse().matrix();
  return sel;
}

/// Ranks features by row norm of W, descending, stable in the feature index.
inline FeatureRanking rank_features(const SelectionMatrix& sel, int rho) {
  const Index d = sel.W.rows();
  require(rho >= 1 && rho <= d, "rank_features: rho out of range, need 1 <= rho <= d");
  FeatureRanking out;
  out.scores = sel.W.rowwise().norm();
  out.order = argsort_descending(out.scores);
  out.rho = rho;
  return out;
}

}  // namespace causefs
