#pragma once

#include <chrono>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "causefs/balance.hpp"
#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/embedding.hpp"
#include "causefs/granularity.hpp"
#include "causefs/graphs.hpp"
#include "causefs/regression.hpp"

namespace causefs {

/// full: the complete alternating objective. no_causal_regression: drops the
/// reweighted regression, embedding and balancing blocks (sample weights stay
/// uniform, distances unweighted). no_multigranular: a single fixed affinity
/// graph, no feature groups, no graph refinement.
enum class Variant { full, no_causal_regression, no_multigranular };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_causal_regression: return "no_causal_regression";
    case Variant::no_multigranular: return "no_multigranular";
  }
  return "full";
}

inline std::optional<Variant> variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_causal_regression") return Variant::no_causal_regression;
  if (s == "no_multigranular") return Variant::no_multigranular;
  return std::nullopt;
}

struct HyperParams {
  double alpha = 1.0;
  double beta = 1e7;
  double lambda = 1.0;
  int k = 5;
  int h = 0;        // 0 derives h from the label count at fit time
  int rho = 20;
  double epsilon = 1e-6;
  int max_outer = 50;
  double outer_tol = 1e-5;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  bool freeze_partition = false;  // keep the initial feature grouping
  int gpi_max_iter = 100;
  double gpi_tol = 1e-8;
  int qp_max_iter = 1000;
  double qp_tol = 1e-10;

  void validate() const {
    require(alpha > 0.0, "hyperparams: alpha must be positive");
    require(beta > 0.0, "hyperparams: beta must be positive");
    require(lambda > 0.0, "hyperparams: lambda must be positive");
    require(k >= 1, "hyperparams: k must be at least 1");
    require(h >= 0, "hyperparams: h must be nonnegative");
    require(rho >= 1, "hyperparams: rho must be at least 1");
    require(epsilon > 0.0, "hyperparams: epsilon must be positive");
    require(max_outer >= 1, "hyperparams: max_outer must be at least 1");
    require(outer_tol > 0.0, "hyperparams: outer_tol must be positive");
    require(gpi_max_iter >= 1 && qp_max_iter >= 1,
            "hyperparams: inner iteration budgets must be at least 1");
    require(gpi_tol > 0.0 && qp_tol > 0.0, "hyperparams: inner tolerances must be positive");
  }
};

struct ModelState {
  SelectionMatrix selection;                 // W, D
  Embedding embedding;                       // F
  SampleWeights weights;                     // mu
  std::vector<SimilarityGraph> graphs;       // one per feature group
  SimilarityGraph fused;                     // consensus graph G
  GranularityPartition partition;            // feature groups and nu
  int iteration = 0;
  std::vector<double> objective_trace;
};

struct FitResult {
  ModelState state;
  FeatureRanking ranking;
  double wall_seconds = 0.0;
};

/// Relative change between the last two trace entries below tol.
inline bool converged(const std::vector<double>& trace, double tol) {
  if (trace.size() < 2) return false;
  const double last = trace.back();
  const double prev = trace[trace.size() - 2];
  return std::abs(last - prev) <= tol * std::max(std::abs(prev), 1e-12);
}

namespace detail {

inline int resolve_h(const DataMatrix& data, const HyperParams& hyper) {
  const int h = hyper.h > 0 ? hyper.h : data.n_classes;
  require(h >= 1, "fit: subspace dimension h is required when the data has no labels");
  require(h <= data.sample_count(), "fit: h cannot exceed the sample count");
  return h;
}

/// X restricted to one feature group, columns weighted by mu, projected by
/// the group's selection rows: returns W_m' X_m diag(mu), one point per
/// sample.
inline Matrix group_projection(const Matrix& X, const Matrix& W,
                               const std::vector<Index>& idx, const Vector& mu) {
  Matrix Y = W(idx, Eigen::all).transpose() * X(idx, Eigen::all);
  Y *= mu.asDiagonal();
  return Y;
}

/// 0.5 sum_ij ||y_i - y_j||^2 S_ij for column points y, plus the stored
/// per-column quadratic regularizer.
inline double graph_smoothness_term(const Matrix& Y, const SimilarityGraph& g) {
  const Vector sq = Y.colwise().squaredNorm();
  const Matrix gram = Y.transpose() * Y;
  const double cross = gram.cwiseProduct(g.S).sum();
  const double row_part = sq.dot(g.S * Vector::Ones(Y.cols()));
  const double col_part = sq.sum();  // columns sum to one
  const double dist_part = 0.5 * (row_part + col_part - 2.0 * cross);
  const double stored = g.gamma.dot(g.S.colwise().squaredNorm().transpose());
  return dist_part + stored;
}

inline void check_term(double value, const char* name) {
  if (!std::isfinite(value))
    throw std::runtime_error(std::string("objective term '") + name + "' is non-finite");
}

}  // namespace detail

/// Evaluates the variant's objective at the current state. Graph
/// regularizer weights are the stored per-column values fixed by the last
/// graph refresh.
inline double objective_value(const DataMatrix& data, const ModelState& state,
                              const HyperParams& hyper, const TreatmentDesign& design) {
  const Matrix& X = data.values;
  const Matrix& W = state.selection.W;
  double total = 0.0;

  if (hyper.variant != Variant::no_causal_regression) {
    const Matrix Xw = X * state.weights.mu.asDiagonal();
    const double regression =
        hyper.alpha * (Xw.transpose() * W - state.embedding.F).squaredNorm();
    detail::check_term(regression, "reweighted regression");
    total += regression;

    const double smooth = detail::trace_product(
        state.embedding.F, laplacian(state.fused).L * state.embedding.F);
    detail::check_term(smooth, "embedding smoothness");
    total += smooth;

    double discrepancy = 0.0;
    for (Index r = 0; r < data.feature_count(); ++r) {
      if (design.is_degenerate(r)) continue;
      discrepancy += mmd_value(data, design, state.weights, r);
    }
    discrepancy *= hyper.beta;
    detail::check_term(discrepancy, "distribution balancing");
    total += discrepancy;
  }

  const double sparsity = hyper.lambda * detail::smoothed_row_penalty(W, hyper.epsilon);
  detail::check_term(sparsity, "row sparsity");
  total += sparsity;

  if (hyper.variant != Variant::no_multigranular) {
    const auto groups = detail::group_indices(state.partition.assignments,
                                              static_cast<int>(state.graphs.size()));
    const Vector& mu = state.weights.mu;
    const Vector ones = Vector::Ones(data.sample_count());
    double granular = 0.0, coupling = 0.0;
    for (std::size_t m = 0; m < state.graphs.size(); ++m) {
      const Vector& colw =
          hyper.variant == Variant::no_causal_regression ? ones : mu;
      const Matrix Y = detail::group_projection(X, W, groups[m], colw);
      granular += detail::graph_smoothness_term(Y, state.graphs[m]);
      coupling += state.partition.nu[static_cast<Index>(m)] *
                  detail::trace_product(state.fused.S, state.graphs[m].S);
    }
    detail::check_term(granular, "multigranular smoothness");
    total += granular;

    const double fused_reg =
        state.fused.gamma.dot(state.fused.S.colwise().squaredNorm().transpose());
    detail::check_term(coupling, "graph fusion coupling");
    detail::check_term(fused_reg, "fused graph regularizer");
    total += fused_reg - coupling;
  }

  detail::check_term(total, "total");
  return total;
}

/// Builds the starting state: correlation-driven feature groups, kNN graphs,
/// spectral embedding, uniform sample and group weights, W = 0.
inline ModelState initialize(const DataMatrix& data, const HyperParams& hyper) {
  data.validate();
  hyper.validate();
  const Index d = data.feature_count();
  const Index n = data.sample_count();
  const int h = detail::resolve_h(data, hyper);
  require(hyper.k <= n - 2, "fit: k out of range, need k <= n-2");
  require(hyper.rho <= d, "fit: rho cannot exceed the feature count");

  ModelState st;
  if (hyper.variant == Variant::no_multigranular) {
    st.partition.assignments = IntVector::Zero(d);
    st.partition.M = 1;
    st.partition.nu = Vector::Ones(1);
    st.fused = knn_init(data.values, hyper.k);
  } else {
    st.partition = initial_partition(data);
    st.partition.nu = Vector::Constant(st.partition.M, 1.0 / st.partition.M);
    const auto groups = detail::group_indices(st.partition.assignments, st.partition.M);
    st.graphs.reserve(groups.size());
    for (const auto& idx : groups)
      st.graphs.push_back(knn_init(data.values(idx, Eigen::all), hyper.k));
    st.fused = knn_init(data.values, hyper.k);
  }
  st.embedding = spectral_init(laplacian(st.fused), h);
  st.weights.mu = Vector::Constant(n, 1.0 / static_cast<double>(n));
  st.selection.W = Matrix::Zero(d, h);
  st.selection.D = Vector::Ones(d);
  st.iteration = 0;
  return st;
}

/// W step. The ablation without the regression block has a zero right-hand
/// side, so its W is exactly zero; the weighted variants solve the full
/// system.
inline void step_selection(ModelState& state, const DataMatrix& data,
                           const HyperParams& hyper) {
  const Vector& mu = state.weights.mu;
  switch (hyper.variant) {
    case Variant::full:
      state.selection = update_W(data.values, mu, state.selection.D, state.embedding.F,
                                 state.graphs, state.partition.assignments, hyper.alpha,
                                 hyper.lambda);
      break;
    case Variant::no_causal_regression:
      // The system keeps its positive definite form but the right-hand side
      // is identically zero without the regression block, so W = 0 exactly.
      state.selection.W.setZero();
      break;
    case Variant::no_multigranular:
      state.selection = update_W(data.values, mu, state.selection.D, state.embedding.F,
                                 {}, IntVector(), hyper.alpha, hyper.lambda);
      break;
  }
}

inline void step_irls(ModelState& state, const HyperParams& hyper) {
  state.selection = refresh_D(std::move(state.selection), hyper.epsilon);
}

/// Refreshes every per-group graph against the current consensus graph. The
/// previous graph stands in as the incumbent so a column never regresses
/// under its stored regularizer weight.
inline void step_granularity_graphs(ModelState& state, const DataMatrix& data,
                                    const HyperParams& hyper) {
  const auto groups = detail::group_indices(state.partition.assignments,
                                            static_cast<int>(state.graphs.size()));
  const Vector colw = hyper.variant == Variant::no_causal_regression
                          ? Vector(Vector::Ones(data.sample_count()))
                          : state.weights.mu;
  for (std::size_t m = 0; m < state.graphs.size(); ++m) {
    const Matrix Y = detail::group_projection(data.values, state.selection.W,
                                              groups[m], colw);
    state.graphs[m] = adaptive_graph_update(Y, state.fused.S,
                                            state.partition.nu[static_cast<Index>(m)],
                                            hyper.k, &state.graphs[m]);
  }
}

/// Refreshes the consensus graph against the weighted sum of group graphs
/// and the embedding geometry, with the previous consensus as incumbent.
inline void step_fused_graph(ModelState& state, const HyperParams& hyper) {
  const Index n = state.fused.S.rows();
  Matrix coupled = Matrix::Zero(n, n);
  for (std::size_t m = 0; m < state.graphs.size(); ++m)
    coupled += state.partition.nu[static_cast<Index>(m)] * state.graphs[m].S;
  const Matrix points = hyper.variant == Variant::no_causal_regression
                            ? Matrix::Zero(1, n)
                            : Matrix(state.embedding.F.transpose());
  state.fused = adaptive_graph_update(points, coupled, 1.0, hyper.k, &state.fused);
}

inline void step_embedding(ModelState& state, const DataMatrix& data,
                           const HyperParams& hyper) {
  Matrix A = laplacian(state.fused).L;
  A.diagonal().array() += hyper.alpha;
  const Matrix B = hyper.alpha * (data.values * state.weights.mu.asDiagonal()).transpose() *
                   state.selection.W;
  state.embedding = gpi_solve(A, B, state.embedding, hyper.gpi_max_iter, hyper.gpi_tol);
}

inline void step_sample_weights(ModelState& state, const DataMatrix& data,
                                const HyperParams& hyper, const TreatmentDesign& design) {
  QpProblem qp;
  if (hyper.variant == Variant::no_multigranular) {
    qp.a = detail::regression_linear(data.values, state.selection.W, state.embedding.F,
                                     hyper.alpha);
    qp.H = Matrix(
        (hyper.alpha * detail::regression_diagonal(data.values, state.selection.W))
            .asDiagonal());
    qp.H += hyper.beta * detail::mmd_quadratic(data, design);
    qp.H = 0.5 * (qp.H + qp.H.transpose());
  } else {
    qp = assemble_qp(data, design, state.selection.W, state.embedding.F, state.graphs,
                     state.fused, state.partition, hyper.alpha, hyper.beta, hyper.lambda,
                     hyper.epsilon);
  }
  const QpSolution sol = solve_simplex_qp(qp, state.weights, hyper.qp_max_iter,
                                          hyper.qp_tol);
  state.weights = sol.weights;
}

/// Regroups features by the selection rows and refreshes the group weights.
/// When the chosen group count changes, the per-group graphs restart from
/// kNN on the regrouped features; otherwise existing graphs carry over group
/// by group. The refreshed grouping is kept only when it does not increase
/// the objective, so the alternation stays monotone even though the grouping
/// heuristic is not itself a descent step.
inline void step_partition(ModelState& state, const DataMatrix& data,
                           const HyperParams& hyper, const TreatmentDesign& design) {
  const double current = objective_value(data, state, hyper, design);

  GranularityPartition old_partition = state.partition;
  std::vector<SimilarityGraph> old_graphs;

  if (hyper.freeze_partition) {
    state.partition = compute_nu(state.selection, std::move(state.partition));
  } else {
    GranularityPartition next = causal_partition(state.selection);
    const bool regroup = next.M != state.partition.M;
    state.partition.assignments = next.assignments;
    state.partition.M = next.M;
    state.partition.degenerate = next.degenerate;
    if (regroup) {
      const auto groups = detail::group_indices(state.partition.assignments,
                                                state.partition.M);
      old_graphs = std::move(state.graphs);
      state.graphs.clear();
      state.graphs.reserve(groups.size());
      for (const auto& idx : groups)
        state.graphs.push_back(knn_init(data.values(idx, Eigen::all), hyper.k));
    }
    state.partition = compute_nu(state.selection, std::move(state.partition));
  }

  const double refreshed = objective_value(data, state, hyper, design);
  if (refreshed > current) {
    state.partition = std::move(old_partition);
    if (!old_graphs.empty()) state.graphs = std::move(old_graphs);
  }
}

/// Alternating minimization. Each outer iteration refreshes W and its IRLS
/// weights, the group and consensus graphs, the embedding, the sample
/// weights, and the feature grouping, in that order. The objective trace
/// must not rise by more than 1e-7 relative per iteration.
inline FitResult fit(const DataMatrix& data, const HyperParams& hyper) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelState st = initialize(data, hyper);
  TreatmentDesign design;
  if (hyper.variant != Variant::no_causal_regression) design = derive_treatment(data);

  st.objective_trace.push_back(objective_value(data, st, hyper, design));
  for (int it = 1; it <= hyper.max_outer; ++it) {
    st.iteration = it;
    step_selection(st, data, hyper);
    step_irls(st, hyper);
    if (hyper.variant != Variant::no_multigranular) {
      step_granularity_graphs(st, data, hyper);
      step_fused_graph(st, hyper);
    }
    if (hyper.variant != Variant::no_causal_regression) {
      step_embedding(st, data, hyper);
      step_sample_weights(st, data, hyper, design);
    }
    if (hyper.variant != Variant::no_multigranular)
      step_partition(st, data, hyper, design);

    const double obj = objective_value(data, st, hyper, design);
    const double prev = st.objective_trace.back();
    st.objective_trace.push_back(obj);
    if (obj > prev + 1e-7 * std::max(std::abs(prev), 1e-12)) {
      std::ostringstream oss;
      oss << "descent violation at iteration " << it << ": objective rose from " << prev
          << " to " << obj << "; trace:";
      for (double v : st.objective_trace) oss << ' ' << v;
      throw std::runtime_error(oss.str());
    }
    if (converged(st.objective_trace, hyper.outer_tol)) break;
  }

  FitResult result;
  result.ranking = rank_features(st.selection, hyper.rho);
  result.state = std::move(st);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace causefs
