#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/granularity.hpp"
#include "causefs/graphs.hpp"
#include "causefs/regression.hpp"

namespace causefs {

/// Sample reweighting vector on the probability simplex.
struct SampleWeights {
  Vector mu;
};

/// Quadratic program min mu' H mu + a' mu + constant over the simplex.
struct QpProblem {
  Matrix H;
  Vector a;
  double constant = 0.0;
};

struct QpSolution {
  SampleWeights weights;
  double objective = 0.0;  // mu' H mu + a' mu at the solution, constant excluded
  int iterations = 0;
  double kkt_residual = 0.0;
};

/// Euclidean projection onto the probability simplex (sorting form).
inline Vector project_simplex(const Vector& v) {
  const Index n = v.size();
  require(n >= 1, "project_simplex: empty input");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumulative = 0.0, theta = 0.0;
  for (Index j = 0; j < n; ++j) {
    cumulative += u[static_cast<std::size_t>(j)];
    const double candidate = (1.0 - cumulative) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] + candidate > 0.0) theta = candidate;
  }
  return (v.array() + theta).max(0.0).matrix();
}

/// Weighted mean discrepancy for one feature's treatment split: the squared
/// norm of X (mu o e_r) where e_r carries +1/|treated| on treated samples
/// and -1/|control| on controls. Computed without materializing weighted
/// copies; always nonnegative.
inline double mmd_value(const DataMatrix& data, const TreatmentDesign& design,
                        const SampleWeights& weights, Index feature) {
  const Index d = data.feature_count();
  const Index n = data.sample_count();
  require(feature >= 0 && feature < d, "mmd_value: feature out of range");
  require(weights.mu.size() == n, "mmd_value: mu size mismatch");
  if (design.is_degenerate(feature))
    throw std::invalid_argument("mmd_value: empty treatment or control group for feature " +
                                std::to_string(feature));
  const double tc = static_cast<double>(design.treated_count[static_cast<std::size_t>(feature)]);
  const double cc = static_cast<double>(design.control_count[static_cast<std::size_t>(feature)]);
  const Vector e = design.E.row(feature).transpose() / tc -
                   design.C.row(feature).transpose() / cc;
  const Vector w = weights.mu.cwiseProduct(e);
  const Vector v = data.values * w;
  const double val = v.squaredNorm() - std::pow(data.values.row(feature).dot(w), 2);
  return std::max(val, 0.0);
}

namespace detail {

/// Quadratic form of the summed discrepancy over non-degenerate features:
/// sum_r mmd_r(mu) = mu' Q mu with Q = K o (e'e) - (e o X)'(e o X), K = X'X.
/// Row r of e is the signed group-indicator row, zeroed when degenerate.
inline Matrix mmd_quadratic(const DataMatrix& data, const TreatmentDesign& design) {
  const Index d = data.feature_count();
  Matrix e(d, data.sample_count());
  for (Index r = 0; r < d; ++r) {
    if (design.is_degenerate(r)) {
      e.row(r).setZero();
      continue;
    }
    const double tc = static_cast<double>(design.treated_count[static_cast<std::size_t>(r)]);
    const double cc = static_cast<double>(design.control_count[static_cast<std::size_t>(r)]);
    e.row(r) = design.E.row(r) / tc - design.C.row(r) / cc;
  }
  const Matrix K = data.values.transpose() * data.values;
  const Matrix ex = e.cwiseProduct(data.values);
  Matrix Q = K.cwiseProduct(e.transpose() * e) - ex.transpose() * ex;
  return 0.5 * (Q + Q.transpose());
}

/// Diagonal of the reweighted-regression quadratic: entry i is
/// ||W' X_.i||^2.
inline Vector regression_diagonal(const Matrix& X, const Matrix& W) {
  return (W.transpose() * X).colwise().squaredNorm().transpose();
}

/// Linear part of the reweighted-regression term: a_i = -2 alpha
/// <W' X_.i, F_i.>.
inline Vector regression_linear(const Matrix& X, const Matrix& W, const Matrix& F,
                                double alpha) {
  const Matrix U = W.transpose() * X;  // h x n
  return -2.0 * alpha * (U.transpose().cwiseProduct(F)).rowwise().sum();
}

/// Graph-smoothness quadratic in mu for one feature group: with projections
/// V = W_m' X_m and symmetrized affinities A, the term
/// 0.5 sum_ij ||mu_i V_.i - mu_j V_.j||^2 S_ij equals mu' Q mu with
/// Q = diag(p o A1) - P o A, p_i = ||V_.i||^2, P = V'V.
inline Matrix graph_quadratic(const Matrix& V, const SimilarityGraph& g) {
  const Index n = V.cols();
  const Matrix A = 0.5 * (g.S + g.S.transpose());
  const Vector p = V.colwise().squaredNorm();
  const Matrix P = V.transpose() * V;
  Matrix Q = -P.cwiseProduct(A);
  Q += Matrix(p.cwiseProduct(A * Vector::Ones(n)).asDiagonal());
  return 0.5 * (Q + Q.transpose());
}

inline double trace_product(const Matrix& A, const Matrix& B) {
  return A.cwiseProduct(B).sum();
}

}  // namespace detail

/// Quadratizes the full objective in the sample weights. H collects the
/// regression, graph-smoothness, and discrepancy blocks (each PSD); a is the
/// regression cross term; constant gathers every mu-free term so that
/// mu' H mu + a' mu + constant reproduces the full objective exactly.
inline QpProblem assemble_qp(const DataMatrix& data, const TreatmentDesign& design,
                             const Matrix& W, const Matrix& F,
                             const std::vector<SimilarityGraph>& graphs,
                             const SimilarityGraph& fused,
                             const GranularityPartition& partition, double alpha,
                             double beta, double lambda, double epsilon) {
  const Index n = data.sample_count();
  require(alpha > 0.0 && beta >= 0.0 && lambda > 0.0 && epsilon > 0.0,
          "assemble_qp: need alpha > 0, beta >= 0, lambda > 0, epsilon > 0");
  require(partition.nu.size() == static_cast<Index>(graphs.size()),
          "assemble_qp: nu size must match the number of graphs");

  QpProblem qp;
  qp.a = detail::regression_linear(data.values, W, F, alpha);
  qp.H = Matrix(alpha * detail::regression_diagonal(data.values, W).asDiagonal());

  const auto groups = detail::group_indices(partition.assignments,
                                            static_cast<int>(graphs.size()));
  double stored_quadratic = 0.0;
  double coupling = 0.0;
  for (std::size_t m = 0; m < graphs.size(); ++m) {
    const auto& idx = groups[m];
    require(!idx.empty(), "assemble_qp: empty feature group");
    const Matrix V = W(idx, Eigen::all).transpose() * data.values(idx, Eigen::all);
    qp.H += detail::graph_quadratic(V, graphs[m]);
    stored_quadratic += graphs[m].gamma.dot(graphs[m].S.colwise().squaredNorm().transpose());
    coupling += partition.nu[static_cast<Index>(m)] *
                detail::trace_product(fused.S, graphs[m].S);
  }
  if (beta > 0.0) qp.H += beta * detail::mmd_quadratic(data, design);
  qp.H = 0.5 * (qp.H + qp.H.transpose());

  qp.constant = lambda * detail::smoothed_row_penalty(W, epsilon) +
                detail::trace_product(F, laplacian(fused).L * F) +
                alpha * F.squaredNorm() + stored_quadratic - coupling +
                fused.gamma.dot(fused.S.colwise().squaredNorm().transpose());
  require(qp.H.rows() == n && qp.a.size() == n, "assemble_qp: dimension mismatch");
  return qp;
}

/// Projected gradient on the simplex with the fixed step 1/||2H||_inf.
/// Monotone in the objective; stops on relative objective change below tol.
/// kkt_residual reports max stationarity violation over the active and
/// inactive sets at exit.
inline QpSolution solve_simplex_qp(const QpProblem& qp, const SampleWeights& start,
                                   int max_iter = 1000, double tol = 1e-10) {
  const Index n = qp.H.rows();
  require(qp.H.cols() == n && qp.a.size() == n, "solve_simplex_qp: dimension mismatch");
  require(max_iter >= 1, "solve_simplex_qp: max_iter must be at least 1");
  Vector mu = start.mu;
  require(mu.size() == n, "solve_simplex_qp: start size mismatch");
  require(std::abs(mu.sum() - 1.0) <= 1e-8 && mu.minCoeff() >= -1e-12,
          "solve_simplex_qp: start must lie on the simplex");

  auto value = [&](const Vector& x) { return x.dot(qp.H * x) + qp.a.dot(x); };
  auto kkt = [&](const Vector& x) {
    const Vector g = 2.0 * (qp.H * x) + qp.a;
    const double theta = g.dot(x);
    double res = 0.0;
    for (Index i = 0; i < n; ++i)
      res = std::max(res, x[i] > 1e-12 ? std::abs(g[i] - theta)
                                       : std::max(theta - g[i], 0.0));
    return res;
  };

  QpSolution sol;
  const double lip = 2.0 * qp.H.cwiseAbs().rowwise().sum().maxCoeff();
  if (lip <= 0.0) {
    // Pure linear objective: a vertex minimizes.
    Index best = 0;
    for (Index i = 1; i < n; ++i)
      if (qp.a[i] < qp.a[best]) best = i;
    if (qp.a[best] < qp.a.dot(mu)) {
      mu.setZero();
      mu[best] = 1.0;
    }
    sol.weights.mu = mu;
    sol.objective = value(mu);
    sol.iterations = 0;
    sol.kkt_residual = kkt(mu);
    return sol;
  }

  double prev = value(mu);
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = 2.0 * (qp.H * mu) + qp.a;
    mu = project_simplex(mu - g / lip);
    const double cur = value(mu);
    if (!std::isfinite(cur))
      throw std::runtime_error("solve_simplex_qp: non-finite objective");
    sol.iterations = it + 1;
    if (std::abs(cur - prev) <= tol * std::max(std::abs(prev), 1e-12)) {
      prev = cur;
      break;
    }
    prev = cur;
  }
  sol.weights.mu = mu;
  sol.objective = prev;
  sol.kkt_residual = kkt(mu);
  return sol;
}

}  // namespace causefs
