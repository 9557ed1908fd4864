#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "causefs/common.hpp"

namespace causefs {

/// Column-major sample storage: values is d x n with one feature per row and
/// one sample per column.
struct DataMatrix {
  Matrix values;                         // d x n
  std::vector<std::string> feature_ids;  // size d
  std::vector<int> labels;               // empty when unlabeled, else size n
  int n_classes = 0;                     // 0 when unlabeled

  Index feature_count() const { return values.rows(); }
  Index sample_count() const { return values.cols(); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    require(values.rows() >= 2, "dataset has fewer than 2 features");
    require(values.cols() >= 2, "dataset has fewer than 2 samples");
    require(values.allFinite(), "dataset contains non-finite values");
    require(feature_ids.size() == static_cast<std::size_t>(values.rows()),
            "feature_ids size does not match feature count");
    if (!labels.empty()) {
      require(labels.size() == static_cast<std::size_t>(values.cols()),
              "label count does not match sample count");
      require(n_classes >= 1, "labeled dataset must report n_classes >= 1");
      for (int y : labels)
        require(y >= 0 && y < n_classes, "label outside [0, n_classes)");
    }
  }
};

/// Median-split treatment designs, one per feature. Row r of E marks samples
/// strictly above feature r's median; C is its complement. Features whose
/// split leaves a group empty are listed in degenerate and take no part in
/// balancing.
struct TreatmentDesign {
  Matrix E;  // d x n, entries in {0, 1}
  Matrix C;  // d x n, C = 1 - E
  std::vector<Index> treated_count;  // per feature
  std::vector<Index> control_count;
  std::vector<Index> degenerate;     // features with an empty group, ascending

  bool is_degenerate(Index feature) const {
    return std::binary_search(degenerate.begin(), degenerate.end(), feature);
  }
};

struct SyntheticSpec {
  Index n_samples = 300;
  int n_clusters = 3;
  Index n_causal = 10;
  Index n_spurious = 10;
  Index n_noise = 80;
  double confound_strength = 2.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  DataMatrix data;
  std::vector<Index> causal;    // post-shuffle row indices, ascending
  std::vector<Index> spurious;
  std::vector<Index> noise;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline int label_from_double(double v, const std::string& where) {
  const double r = std::round(v);
  require(std::isfinite(v) && std::abs(v - r) <= 1e-9,
          "non-integer label value at " + where);
  return static_cast<int>(r);
}

/// Remap arbitrary integer label values onto [0, n_classes) by sorted order.
inline void remap_labels(std::vector<int>& labels, int& n_classes) {
  std::set<int> distinct(labels.begin(), labels.end());
  std::map<int, int> code;
  int next = 0;
  for (int v : distinct) code[v] = next++;
  for (int& y : labels) y = code[y];
  n_classes = next;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace detail

/// CSV with samples in rows. An optional header row names the features; a
/// trailing column named "label" (case-insensitive) carries class labels.
inline DataMatrix load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::runtime_error("no samples in " + path);

  auto first = detail::split_csv_line(lines[0]);
  bool header = false;
  for (const auto& tok : first) {
    double dummy;
    if (!detail::parse_double(tok, dummy)) {
      header = true;
      break;
    }
  }

  bool labeled = false;
  std::vector<std::string> names;
  std::size_t row0 = 0;
  if (header) {
    names = first;
    row0 = 1;
    if (!names.empty()) {
      std::string last = names.back();
      std::transform(last.begin(), last.end(), last.begin(), ::tolower);
      if (last == "label") {
        labeled = true;
        names.pop_back();
      }
    }
    if (lines.size() == 1) throw std::runtime_error("no samples in " + path);
  }

  const std::size_t n = lines.size() - row0;
  const std::size_t width = detail::split_csv_line(lines[row0]).size();
  require(width >= 1, "empty data row in " + path);
  const std::size_t d = labeled ? width - 1 : width;
  if (header)
    require(names.size() == d, "header width does not match data width in " + path);
  require(d >= 2, "dataset has fewer than 2 features: " + path);
  require(n >= 2, "dataset has fewer than 2 samples: " + path);

  DataMatrix out;
  out.values.resize(static_cast<Index>(d), static_cast<Index>(n));
  if (labeled) out.labels.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    auto fields = detail::split_csv_line(lines[row0 + i]);
    if (fields.size() != width)
      throw std::runtime_error("row " + std::to_string(i + 1) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(width) + " in " + path);
    for (std::size_t j = 0; j < d; ++j) {
      double v;
      if (!detail::parse_double(fields[j], v))
        throw std::runtime_error("failed to parse value '" + fields[j] + "' at row " +
                                 std::to_string(i + 1) + ", column " +
                                 std::to_string(j + 1) + " in " + path);
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite value at row " + std::to_string(i + 1) +
                                 ", column " + std::to_string(j + 1) + " in " + path);
      out.values(static_cast<Index>(j), static_cast<Index>(i)) = v;
    }
    if (labeled) {
      double v;
      if (!detail::parse_double(fields[d], v))
        throw std::runtime_error("failed to parse label at row " +
                                 std::to_string(i + 1) + " in " + path);
      out.labels[i] = detail::label_from_double(v, "row " + std::to_string(i + 1));
    }
  }

  if (header) {
    out.feature_ids = names;
  } else {
    out.feature_ids.reserve(d);
    for (std::size_t j = 0; j < d; ++j) out.feature_ids.push_back("f" + std::to_string(j));
  }
  if (labeled) detail::remap_labels(out.labels, out.n_classes);
  out.validate();
  return out;
}

/// LIBSVM format: "<label> idx:value ...", indices 1-based, absent entries 0.
inline DataMatrix load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);

  std::vector<std::vector<std::pair<Index, double>>> rows;
  std::vector<int> labels;
  Index d = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    ss >> tok;
    double lv;
    if (!detail::parse_double(tok, lv))
      throw std::runtime_error("failed to parse label '" + tok + "' at line " +
                               std::to_string(lineno) + " in " + path);
    labels.push_back(detail::label_from_double(lv, "line " + std::to_string(lineno)));
    std::vector<std::pair<Index, double>> entries;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw std::runtime_error("malformed entry '" + tok + "' at line " +
                                 std::to_string(lineno) + " in " + path);
      double iv, v;
      if (!detail::parse_double(tok.substr(0, colon), iv) ||
          !detail::parse_double(tok.substr(colon + 1), v))
        throw std::runtime_error("failed to parse entry '" + tok + "' at line " +
                                 std::to_string(lineno) + " in " + path);
      const Index idx = static_cast<Index>(iv);
      require(idx >= 1 && static_cast<double>(idx) == iv,
              "feature index must be a positive integer at line " + std::to_string(lineno));
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite value at line " + std::to_string(lineno) +
                                 " in " + path);
      entries.emplace_back(idx - 1, v);
      d = std::max(d, idx);
    }
    rows.push_back(std::move(entries));
  }
  if (rows.empty()) throw std::runtime_error("no samples in " + path);
  const Index n = static_cast<Index>(rows.size());
  require(d >= 2, "dataset has fewer than 2 features: " + path);
  require(n >= 2, "dataset has fewer than 2 samples: " + path);

  DataMatrix out;
  out.values = Matrix::Zero(d, n);
  for (Index i = 0; i < n; ++i)
    for (const auto& [j, v] : rows[static_cast<std::size_t>(i)]) out.values(j, i) = v;
  out.labels = labels;
  detail::remap_labels(out.labels, out.n_classes);
  out.feature_ids.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) out.feature_ids.push_back("f" + std::to_string(j));
  out.validate();
  return out;
}

enum class DataFormat { csv, libsvm };

inline DataMatrix load_dataset(const std::string& path, DataFormat format) {
  return format == DataFormat::csv ? load_csv(path) : load_libsvm(path);
}

/// Writes samples in rows with a header; labels go to a trailing "label"
/// column. Values use shortest round-trip formatting so save/load is exact.
inline void save_csv(const std::string& path, const DataMatrix& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  for (std::size_t j = 0; j < data.feature_ids.size(); ++j) {
    if (j) out << ',';
    out << data.feature_ids[j];
  }
  if (data.has_labels()) out << ",label";
  out << '\n';
  for (Index i = 0; i < data.sample_count(); ++i) {
    for (Index j = 0; j < data.feature_count(); ++j) {
      if (j) out << ',';
      out << detail::format_double(data.values(j, i));
    }
    if (data.has_labels()) out << ',' << data.labels[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Centers each feature and scales it to unit sample variance (ddof = 1).
/// Constant features become all-zero rows and are reported through
/// constant_features. Applying the transform twice is a fixpoint.
inline DataMatrix standardize(const DataMatrix& data,
                              std::vector<Index>* constant_features = nullptr) {
  data.validate();
  DataMatrix out = data;
  if (constant_features) constant_features->clear();
  const Index n = data.sample_count();
  for (Index r = 0; r < data.feature_count(); ++r) {
    const double mean = data.values.row(r).mean();
    Eigen::RowVectorXd centered = data.values.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(n - 1);
    const double sd = std::sqrt(var);
    const double scale = 1.0 + data.values.row(r).cwiseAbs().maxCoeff();
    if (sd <= 1e-12 * scale) {
      out.values.row(r).setZero();
      if (constant_features) constant_features->push_back(r);
    } else {
      out.values.row(r) = centered / sd;
    }
  }
  return out;
}

/// Per-feature median splits. Samples strictly above the median are treated;
/// ties go to control. Even sample counts use the midpoint of the two middle
/// order statistics.
inline TreatmentDesign derive_treatment(const DataMatrix& data) {
  data.validate();
  const Index d = data.feature_count();
  const Index n = data.sample_count();
  TreatmentDesign design;
  design.E.resize(d, n);
  design.C.resize(d, n);
  design.treated_count.resize(static_cast<std::size_t>(d));
  design.control_count.resize(static_cast<std::size_t>(d));
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (Index r = 0; r < d; ++r) {
    for (Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = data.values(r, i);
    std::sort(buf.begin(), buf.end());
    const std::size_t half = buf.size() / 2;
    const double median = (buf.size() % 2 == 1)
                              ? buf[half]
                              : 0.5 * (buf[half - 1] + buf[half]);
    Index treated = 0;
    for (Index i = 0; i < n; ++i) {
      const bool t = data.values(r, i) > median;
      design.E(r, i) = t ? 1.0 : 0.0;
      design.C(r, i) = t ? 0.0 : 1.0;
      treated += t ? 1 : 0;
    }
    design.treated_count[static_cast<std::size_t>(r)] = treated;
    design.control_count[static_cast<std::size_t>(r)] = n - treated;
    if (treated == 0 || treated == n) design.degenerate.push_back(r);
  }
  return design;
}

/// Confounded mixture generator. Cluster identity drives a latent confounder
/// u = cluster + noise; causal features get per-cluster mean shifts, spurious
/// features follow u linearly with a random sign, noise features are white.
/// Feature rows are shuffled so block position never encodes feature kind.
inline SyntheticData synthesize(const SyntheticSpec& spec) {
  require(spec.n_samples >= 2, "synthesize: need at least 2 samples");
  require(spec.n_clusters >= 1, "synthesize: need at least 1 cluster");
  require(spec.n_causal >= 0 && spec.n_spurious >= 0 && spec.n_noise >= 0,
          "synthesize: feature counts must be nonnegative");
  const Index d = spec.n_causal + spec.n_spurious + spec.n_noise;
  require(d >= 2, "synthesize: need at least 2 features in total");
  require(spec.noise_sigma > 0.0, "synthesize: noise_sigma must be positive");
  require(spec.confound_strength >= 0.0,
          "synthesize: confound_strength must be nonnegative");

  const Index n = spec.n_samples;
  const int K = spec.n_clusters;
  constexpr double kClusterShiftScale = 3.0;  // separation of causal cluster means
  Rng rng(spec.seed);

  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = static_cast<int>(rng.integer(static_cast<std::uint64_t>(K)));

  Vector u(n);
  for (Index i = 0; i < n; ++i)
    u[i] = static_cast<double>(labels[static_cast<std::size_t>(i)]) +
           spec.noise_sigma * rng.normal();

  Matrix block(d, n);
  Index row = 0;
  for (Index j = 0; j < spec.n_causal; ++j, ++row) {
    Vector means(K);
    for (int c = 0; c < K; ++c) means[c] = kClusterShiftScale * rng.normal();
    for (Index i = 0; i < n; ++i)
      block(row, i) = means[labels[static_cast<std::size_t>(i)]] +
                      spec.noise_sigma * rng.normal();
  }
  for (Index j = 0; j < spec.n_spurious; ++j, ++row) {
    const double sign = rng.integer(2) == 0 ? 1.0 : -1.0;
    for (Index i = 0; i < n; ++i)
      block(row, i) = spec.confound_strength * sign * u[i] +
                      spec.noise_sigma * rng.normal();
  }
  for (Index j = 0; j < spec.n_noise; ++j, ++row)
    for (Index i = 0; i < n; ++i) block(row, i) = rng.normal();

  // Fisher-Yates on row positions; position[j] = final row of original row j.
  std::vector<Index> position(static_cast<std::size_t>(d));
  std::iota(position.begin(), position.end(), Index{0});
  for (Index j = d - 1; j > 0; --j) {
    const Index p = static_cast<Index>(rng.integer(static_cast<std::uint64_t>(j + 1)));
    std::swap(position[static_cast<std::size_t>(j)], position[static_cast<std::size_t>(p)]);
  }

  SyntheticData out;
  out.data.values.resize(d, n);
  for (Index j = 0; j < d; ++j)
    out.data.values.row(position[static_cast<std::size_t>(j)]) = block.row(j);

  int width = 1;
  for (Index v = d - 1; v >= 10; v /= 10) ++width;
  width = std::min(width, 19);
  out.data.feature_ids.reserve(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "f%0*lld", width, static_cast<long long>(j));
    out.data.feature_ids.emplace_back(buf);
  }
  out.data.labels = labels;
  out.data.n_classes = K;

  for (Index j = 0; j < d; ++j) {
    const Index where = position[static_cast<std::size_t>(j)];
    if (j < spec.n_causal)
      out.causal.push_back(where);
    else if (j < spec.n_causal + spec.n_spurious)
      out.spurious.push_back(where);
    else
      out.noise.push_back(where);
  }
  std::sort(out.causal.begin(), out.causal.end());
  std::sort(out.spurious.begin(), out.spurious.end());
  std::sort(out.noise.begin(), out.noise.end());
  out.data.validate();
  return out;
}

}  // namespace causefs
