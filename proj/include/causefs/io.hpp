#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causefs/common.hpp"
#include "causefs/dataset.hpp"
#include "causefs/eval.hpp"
#include "causefs/graphs.hpp"
#include "causefs/regression.hpp"
#include "causefs/solver.hpp"

namespace causefs {

using json = nlohmann::json;

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace detail

/// Ranking as a JSON array, best feature first. rank is the 0-based position.
inline void write_ranking_json(const std::string& path, const FeatureRanking& ranking,
                               const std::vector<std::string>& feature_ids) {
  require(feature_ids.size() == ranking.order.size(),
          "write_ranking_json: feature id count mismatch");
  json arr = json::array();
  for (std::size_t pos = 0; pos < ranking.order.size(); ++pos) {
    const Index f = ranking.order[pos];
    arr.push_back({{"rank", pos},
                   {"feature_id", feature_ids[static_cast<std::size_t>(f)]},
                   {"feature_index", f},
                   {"score", ranking.scores[f]}});
  }
  detail::write_json(path, arr);
}

/// Reads a ranking back; feature_index drives the order, scores carry over.
inline FeatureRanking read_ranking_json(const std::string& path, int rho) {
  const json arr = detail::read_json(path);
  require(arr.is_array() && !arr.empty(), "ranking file is not a JSON array: " + path);
  FeatureRanking out;
  const std::size_t d = arr.size();
  out.scores = Vector::Zero(static_cast<Index>(d));
  out.order.resize(d);
  std::vector<bool> seen(d, false);
  for (std::size_t pos = 0; pos < d; ++pos) {
    const auto& item = arr[pos];
    const Index f = item.at("feature_index").get<Index>();
    require(f >= 0 && f < static_cast<Index>(d), "feature_index out of range in " + path);
    require(!seen[static_cast<std::size_t>(f)], "duplicate feature_index in " + path);
    seen[static_cast<std::size_t>(f)] = true;
    out.order[pos] = f;
    out.scores[f] = item.at("score").get<double>();
  }
  require(rho >= 1 && rho <= static_cast<int>(d), "rho out of range for ranking " + path);
  out.rho = rho;
  return out;
}

inline void write_partition_json(const std::string& path,
                                 const GranularityPartition& partition,
                                 const std::vector<std::string>& feature_ids) {
  require(feature_ids.size() == static_cast<std::size_t>(partition.assignments.size()),
          "write_partition_json: feature id count mismatch");
  json j;
  j["group_count"] = partition.M;
  j["degenerate"] = partition.degenerate;
  j["nu"] = std::vector<double>(partition.nu.data(),
                                partition.nu.data() + partition.nu.size());
  json arr = json::array();
  for (Index f = 0; f < partition.assignments.size(); ++f)
    arr.push_back({{"feature_id", feature_ids[static_cast<std::size_t>(f)]},
                   {"feature_index", f},
                   {"group", partition.assignments[f]}});
  j["features"] = arr;
  detail::write_json(path, j);
}

inline json hyperparams_json(const HyperParams& hyper) {
  return json{{"alpha", hyper.alpha},
              {"beta", hyper.beta},
              {"lambda", hyper.lambda},
              {"k", hyper.k},
              {"h", hyper.h},
              {"rho", hyper.rho},
              {"epsilon", hyper.epsilon},
              {"max_outer", hyper.max_outer},
              {"outer_tol", hyper.outer_tol},
              {"seed", hyper.seed},
              {"variant", to_string(hyper.variant)},
              {"freeze_partition", hyper.freeze_partition}};
}

inline void write_fit_report_json(const std::string& path, const HyperParams& hyper,
                                  const FitResult& result) {
  json j;
  j["hyperparams"] = hyperparams_json(hyper);
  j["iterations"] = result.state.iteration;
  j["objective_trace"] = result.state.objective_trace;
  j["final_objective"] = result.state.objective_trace.back();
  j["wall_seconds"] = result.wall_seconds;
  j["group_count"] = result.state.partition.M;
  j["degenerate_partition"] = result.state.partition.degenerate;
  detail::write_json(path, j);
}

inline void write_trace_csv(const std::string& path, const std::vector<double>& trace) {
  std::string text = "iteration,objective\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    text += std::to_string(i) + "," + detail::format_double(trace[i]) + "\n";
  detail::write_text(path, text);
}

inline void write_metrics_json(const std::string& path,
                               const std::vector<MetricsRow>& rows, int runs,
                               std::uint64_t seed) {
  json j;
  j["runs"] = runs;
  j["seed"] = seed;
  json arr = json::array();
  for (const auto& row : rows)
    arr.push_back({{"rho", row.rho},
                   {"acc_mean", row.acc_mean},
                   {"acc_std", row.acc_std},
                   {"nmi_mean", row.nmi_mean},
                   {"nmi_std", row.nmi_std}});
  j["metrics"] = arr;
  detail::write_json(path, j);
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsRow>& rows) {
  std::string text = "rho,acc_mean,acc_std,nmi_mean,nmi_std\n";
  for (const auto& row : rows)
    text += std::to_string(row.rho) + "," + detail::format_double(row.acc_mean) + "," +
            detail::format_double(row.acc_std) + "," + detail::format_double(row.nmi_mean) +
            "," + detail::format_double(row.nmi_std) + "\n";
  detail::write_text(path, text);
}

inline void write_ground_truth_json(const std::string& path, const SyntheticData& synth,
                                    const SyntheticSpec& spec) {
  json j;
  j["n_samples"] = spec.n_samples;
  j["n_clusters"] = spec.n_clusters;
  j["confound_strength"] = spec.confound_strength;
  j["noise_sigma"] = spec.noise_sigma;
  j["seed"] = spec.seed;
  j["causal"] = synth.causal;
  j["spurious"] = synth.spurious;
  j["noise"] = synth.noise;
  detail::write_json(path, j);
}

inline std::vector<Index> read_ground_truth_causal(const std::string& path) {
  const json j = detail::read_json(path);
  return j.at("causal").get<std::vector<Index>>();
}

/// Sparse triplet dump "row col value", one affinity per line, column order.
inline void write_graph_triplets(const std::string& path, const SimilarityGraph& g) {
  std::string text;
  for (Index c = 0; c < g.S.cols(); ++c)
    for (Index r = 0; r < g.S.rows(); ++r)
      if (g.S(r, c) != 0.0)
        text += std::to_string(r) + " " + std::to_string(c) + " " +
                detail::format_double(g.S(r, c)) + "\n";
  detail::write_text(path, text);
}

}  // namespace causefs
