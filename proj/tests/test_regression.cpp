#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace causefs;
using Catch::Approx;

namespace {

/// Fully loop-based assembly of the quadratic system the selection step
/// solves: alpha Xw Xw' + per-group Laplacian scatter + lambda diag(D), with
/// right-hand side alpha Xw F.
struct NaiveSystem {
  Matrix lhs;
  Matrix rhs;
};

NaiveSystem naive_system(const Matrix& X, const Vector& mu, const Vector& D,
                         const Matrix& F, const std::vector<SimilarityGraph>& graphs,
                         const IntVector& assignments, double alpha, double lambda) {
  const Index d = X.rows();
  const Index n = X.cols();
  Matrix Xw(d, n);
  for (Index r = 0; r < d; ++r)
    for (Index i = 0; i < n; ++i) Xw(r, i) = X(r, i) * mu[i];

  NaiveSystem sys;
  sys.lhs = Matrix::Zero(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c)
      for (Index i = 0; i < n; ++i) sys.lhs(r, c) += alpha * Xw(r, i) * Xw(c, i);
  for (Index r = 0; r < d; ++r) sys.lhs(r, r) += lambda * D[r];

  for (std::size_t m = 0; m < graphs.size(); ++m) {
    // Symmetrized Laplacian by loops.
    const Matrix& S = graphs[m].S;
    Matrix L = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double a = 0.5 * (S(i, j) + S(j, i));
        L(i, j) -= a;
        L(i, i) += a;
      }
    std::vector<Index> idx;
    for (Index r = 0; r < d; ++r)
      if (assignments[r] == static_cast<int>(m)) idx.push_back(r);
    for (Index a : idx)
      for (Index b : idx)
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j)
            sys.lhs(a, b) += Xw(a, i) * L(i, j) * Xw(b, j);
  }

  sys.rhs = Matrix::Zero(d, F.cols());
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < F.cols(); ++c)
      for (Index i = 0; i < n; ++i) sys.rhs(r, c) += alpha * Xw(r, i) * F(i, c);
  return sys;
}

/// The fixed-D quadratic the selection step minimizes (constants dropped).
double quad_objective(const NaiveSystem& sys, const Matrix& W) {
  return (W.transpose() * sys.lhs * W).trace() - 2.0 * (W.transpose() * sys.rhs).trace();
}

/// Steepest descent with exact line search on the quadratic.
Matrix descend(const NaiveSystem& sys, Matrix W, int iters) {
  for (int it = 0; it < iters; ++it) {
    const Matrix g = 2.0 * (sys.lhs * W - sys.rhs);
    const double gg = g.squaredNorm();
    if (gg < 1e-24) break;
    const double curvature = 2.0 * (g.cwiseProduct(sys.lhs * g)).sum();
    W -= (gg / curvature) * g;
  }
  return W;
}

struct Instance {
  Matrix X, F;
  Vector mu, D;
  std::vector<SimilarityGraph> graphs;
  IntVector assignments;
  double alpha, lambda;
};

Instance random_instance(std::mt19937_64& eng, Index d, Index n, int h, int groups) {
  Instance ins;
  ins.X = oracle::random_gaussian(eng, d, n);
  ins.F = oracle::random_orthonormal(eng, n, h);
  ins.mu = oracle::random_simplex_point(eng, n);
  ins.D = Vector::Ones(d) + oracle::random_simplex_point(eng, d);
  ins.assignments = IntVector(d);
  for (Index r = 0; r < d; ++r) ins.assignments[r] = static_cast<int>(r % groups);
  for (int m = 0; m < groups; ++m)
    ins.graphs.push_back(knn_init(oracle::random_gaussian(eng, 2, n), 2));
  ins.alpha = 1.3;
  ins.lambda = 0.7;
  return ins;
}

}  // namespace

TEST_CASE("selection system: matches the loop-based assembly", "[regression]") {
  std::mt19937_64 eng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const Instance ins = random_instance(eng, 7, 9, 2, 2);
    const Matrix lhs = selection_system_matrix(ins.X, ins.mu, ins.D, ins.graphs,
                                               ins.assignments, ins.alpha, ins.lambda);
    const NaiveSystem sys = naive_system(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                         ins.assignments, ins.alpha, ins.lambda);
    REQUIRE((lhs - sys.lhs).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE((lhs - lhs.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("selection step: stationarity against the loop-based system", "[regression]") {
  std::mt19937_64 eng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance ins = random_instance(eng, 5, 8, 2, 2);
    const SelectionMatrix sel = update_W(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                         ins.assignments, ins.alpha, ins.lambda);
    const NaiveSystem sys = naive_system(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                         ins.assignments, ins.alpha, ins.lambda);
    const double grad = (2.0 * (sys.lhs * sel.W - sys.rhs)).norm();
    REQUIRE(grad <= 1e-7 * (1.0 + sys.rhs.norm()));
  }
}

TEST_CASE("selection step: agrees with a generic descent minimizer", "[regression]") {
  std::mt19937_64 eng(47);
  const Instance ins = random_instance(eng, 5, 8, 2, 2);
  const SelectionMatrix sel = update_W(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                       ins.assignments, ins.alpha, ins.lambda);
  const NaiveSystem sys = naive_system(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                       ins.assignments, ins.alpha, ins.lambda);
  const Matrix W_ref = descend(sys, Matrix::Zero(5, 2), 20000);
  REQUIRE((sel.W - W_ref).norm() < 1e-5);
  REQUIRE(quad_objective(sys, sel.W) <= quad_objective(sys, W_ref) + 1e-9);
}

TEST_CASE("selection step: huge sparsity weight drives W to zero", "[regression]") {
  std::mt19937_64 eng(53);
  Instance ins = random_instance(eng, 6, 9, 2, 2);
  ins.lambda = 1e9;
  const SelectionMatrix sel = update_W(ins.X, ins.mu, ins.D, ins.F, ins.graphs,
                                       ins.assignments, ins.alpha, ins.lambda);
  REQUIRE(sel.W.norm() < 1e-6);
}

TEST_CASE("selection cycle: smoothed objective never increases", "[regression]") {
  std::mt19937_64 eng(59);
  const double epsilon = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    Instance ins = random_instance(eng, 6, 9, 2, 2);
    // Quadratic terms with a zero ridge, plus the exact smoothed row penalty
    // and the constant alpha ||F||^2 completing the square.
    auto smoothed = [&](const Matrix& W) {
      const NaiveSystem sys = naive_system(ins.X, ins.mu, Vector::Zero(6), ins.F,
                                           ins.graphs, ins.assignments, ins.alpha, 1.0);
      double value = quad_objective(sys, W) + ins.alpha * ins.F.squaredNorm();
      for (Index r = 0; r < W.rows(); ++r)
        value += ins.lambda * std::sqrt(W.row(r).squaredNorm() + epsilon);
      return value;
    };
    SelectionMatrix sel;
    sel.W = 0.5 * oracle::random_gaussian(eng, 6, 2);
    sel = refresh_D(sel, epsilon);
    const double before = smoothed(sel.W);
    const SelectionMatrix next = update_W(ins.X, ins.mu, sel.D, ins.F, ins.graphs,
                                          ins.assignments, ins.alpha, ins.lambda);
    const double after = smoothed(next.W);
    REQUIRE(after <= before + 1e-9 * std::max(1.0, std::abs(before)));
  }
}

TEST_CASE("IRLS weights: closed-form values and positivity", "[regression]") {
  SelectionMatrix sel;
  sel.W = Matrix::Zero(3, 2);
  sel.W.row(1) << 0.3, 0.4;  // row norm 0.5
  sel = refresh_D(sel, 1e-6);
  REQUIRE(sel.D[0] == Approx(500.0).margin(1e-9));
  REQUIRE(sel.D[2] == Approx(500.0).margin(1e-9));

  SelectionMatrix tight = sel;
  tight = refresh_D(tight, 1e-12);
  REQUIRE(tight.D[1] == Approx(1.0).margin(1e-9));

  std::mt19937_64 eng(61);
  SelectionMatrix rnd;
  rnd.W = oracle::random_gaussian(eng, 10, 3);
  rnd = refresh_D(rnd, 1e-6);
  REQUIRE((rnd.D.array() > 0.0).all());
}

TEST_CASE("feature ranking: row norms sort descending with index ties", "[regression]") {
  SelectionMatrix sel;
  sel.W = Matrix::Zero(3, 2);
  sel.W.row(0) << 3.0, 0.0;
  sel.W.row(1) << 0.0, 1.0;
  sel.W.row(2) << 2.0, 0.0;
  const FeatureRanking ranking = rank_features(sel, 2);
  REQUIRE(ranking.order == std::vector<Index>{0, 2, 1});
  REQUIRE(ranking.top() == std::vector<Index>{0, 2});
  REQUIRE(ranking.scores[0] == Approx(3.0));

  SelectionMatrix zero;
  zero.W = Matrix::Zero(4, 2);
  const FeatureRanking tied = rank_features(zero, 4);
  REQUIRE(tied.order == std::vector<Index>{0, 1, 2, 3});
}

TEST_CASE("smoothed row penalty: matches the loop definition", "[regression]") {
  std::mt19937_64 eng(67);
  const Matrix W = oracle::random_gaussian(eng, 6, 3);
  const double eps = 1e-4;
  double ref = 0.0;
  for (Index r = 0; r < 6; ++r) {
    double sq = eps;
    for (Index c = 0; c < 3; ++c) sq += W(r, c) * W(r, c);
    ref += std::sqrt(sq);
  }
  REQUIRE(causefs::detail::smoothed_row_penalty(W, eps) == Approx(ref).margin(1e-12));
}
