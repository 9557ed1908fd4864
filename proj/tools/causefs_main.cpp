// Command line front end: synth | fit | eval | sweep.
//
// Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage
// error. CAUSEFS_SEED in the environment overrides any --seed option.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "causefs/causefs.hpp"

namespace fs = std::filesystem;
using namespace causefs;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("CAUSEFS_SEED");
  if (!raw || !*raw) return std::nullopt;
  try {
    return std::stoull(raw);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string("CAUSEFS_SEED is not a valid seed: ") + raw);
  }
}

DataFormat parse_format(const std::string& name) {
  if (name == "csv") return DataFormat::csv;
  if (name == "libsvm") return DataFormat::libsvm;
  throw std::runtime_error("unknown data format: " + name);
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = causefs::detail::trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("invalid ") + what + " entry: " + tok);
    }
  }
  if (out.empty()) throw std::runtime_error(std::string("empty ") + what + " list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = causefs::detail::trim(tok);
    if (tok.empty()) continue;
    double v;
    if (!causefs::detail::parse_double(tok, v))
      throw std::runtime_error(std::string("invalid ") + what + " entry: " + tok);
    out.push_back(v);
  }
  if (out.empty()) throw std::runtime_error(std::string("empty ") + what + " list");
  return out;
}

struct FitOptions {
  std::string data_path;
  std::string format = "csv";
  std::string out_dir;
  bool raw = false;
  HyperParams hyper;
  std::string variant = "full";
};

void add_fit_options(CLI::App* cmd, FitOptions& opt) {
  // The subspace dimension flag is literally --h, so drop the default -h
  // help alias on this subcommand; --help stays.
  cmd->set_help_flag("--help", "print this help message and exit");
  cmd->add_option("--data", opt.data_path, "input dataset path")->required();
  cmd->add_option("--format", opt.format, "data format: csv or libsvm")
      ->check(CLI::IsMember({"csv", "libsvm"}));
  cmd->add_option("--out", opt.out_dir, "output directory")->required();
  cmd->add_flag("--raw", opt.raw, "skip feature standardization");
  cmd->add_option("--alpha", opt.hyper.alpha, "regression weight");
  cmd->add_option("--beta", opt.hyper.beta, "balancing weight");
  cmd->add_option("--lambda", opt.hyper.lambda, "row-sparsity weight");
  cmd->add_option("--k", opt.hyper.k, "graph neighbor count");
  cmd->add_option("--h", opt.hyper.h, "embedding dimension (default: class count)");
  cmd->add_option("--rho", opt.hyper.rho, "selected feature count");
  cmd->add_option("--epsilon", opt.hyper.epsilon, "row-sparsity smoothing");
  cmd->add_option("--max-outer", opt.hyper.max_outer, "outer iteration cap");
  cmd->add_option("--tol", opt.hyper.outer_tol, "outer relative tolerance");
  cmd->add_option("--seed", opt.hyper.seed, "random seed");
  cmd->add_option("--variant", opt.variant, "model variant")
      ->check(CLI::IsMember({"full", "no_causal_regression", "no_multigranular"}));
  cmd->add_flag("--freeze-partition", opt.hyper.freeze_partition,
                "keep the initial feature grouping");
}

DataMatrix load_for_run(const std::string& path, const std::string& format, bool raw) {
  DataMatrix data = load_dataset(path, parse_format(format));
  if (raw) return data;
  std::vector<Index> constants;
  DataMatrix out = standardize(data, &constants);
  if (!constants.empty())
    std::cerr << "note: " << constants.size()
              << " constant feature(s) standardized to zero\n";
  return out;
}

FitResult run_fit(const FitOptions& opt, const DataMatrix& data) {
  HyperParams hyper = opt.hyper;
  const auto variant = variant_from_string(opt.variant);
  if (!variant) throw std::runtime_error("unknown variant: " + opt.variant);
  hyper.variant = *variant;
  if (const auto seed = env_seed()) hyper.seed = *seed;

  if (hyper.variant != Variant::no_causal_regression) {
    const TreatmentDesign design = derive_treatment(data);
    if (!design.degenerate.empty())
      std::cerr << "note: " << design.degenerate.size()
                << " feature(s) have a degenerate median split and are excluded "
                   "from balancing\n";
  }
  return fit(data, hyper);
}

void write_fit_outputs(const FitOptions& opt, const HyperParams& hyper,
                       const DataMatrix& data, const FitResult& result,
                       const fs::path& dir) {
  fs::create_directories(dir);
  write_ranking_json((dir / "ranking.json").string(), result.ranking, data.feature_ids);
  write_partition_json((dir / "partition.json").string(), result.state.partition,
                       data.feature_ids);
  write_trace_csv((dir / "trace.csv").string(), result.state.objective_trace);
  write_fit_report_json((dir / "fit_report.json").string(), hyper, result);
}

int cmd_synth(const SyntheticSpec& spec_in, const std::string& out_dir) {
  SyntheticSpec spec = spec_in;
  if (const auto seed = env_seed()) spec.seed = *seed;
  const SyntheticData synth = synthesize(spec);
  fs::create_directories(out_dir);
  save_csv((fs::path(out_dir) / "data.csv").string(), synth.data);
  write_ground_truth_json((fs::path(out_dir) / "ground_truth.json").string(), synth, spec);
  std::cout << "wrote " << (fs::path(out_dir) / "data.csv").string() << " ("
            << synth.data.feature_count() << " features, " << synth.data.sample_count()
            << " samples)\n";
  return 0;
}

int cmd_fit(const FitOptions& opt) {
  const DataMatrix data = load_for_run(opt.data_path, opt.format, opt.raw);
  HyperParams hyper = opt.hyper;
  const auto variant = variant_from_string(opt.variant);
  if (!variant) throw std::runtime_error("unknown variant: " + opt.variant);
  hyper.variant = *variant;
  if (const auto seed = env_seed()) hyper.seed = *seed;
  const FitResult result = run_fit(opt, data);
  for (std::size_t t = 0; t < result.state.objective_trace.size(); ++t)
    std::cerr << "info: iteration " << t << " objective "
              << result.state.objective_trace[t] << "\n";
  write_fit_outputs(opt, hyper, data, result, opt.out_dir);
  std::cout << "fit converged after " << result.state.iteration << " iteration(s), "
            << "objective " << result.state.objective_trace.back() << ", outputs in "
            << opt.out_dir << "\n";
  return 0;
}

struct EvalOptions {
  std::string data_path;
  std::string format = "csv";
  std::string ranking_path;
  std::string rho_list = "20,40,60,80,100";
  int runs = 50;
  std::uint64_t seed = 0;
  bool raw = false;
  std::string out_dir;
};

std::vector<MetricsRow> evaluate_ranking_file(const DataMatrix& data,
                                              const std::string& ranking_path,
                                              const std::vector<int>& rhos, int runs,
                                              std::uint64_t seed) {
  if (!data.has_labels()) throw std::runtime_error("evaluation requires labels");
  std::vector<MetricsRow> rows;
  for (int rho : rhos) {
    if (rho < 1 || rho > data.feature_count())
      throw std::runtime_error("rho " + std::to_string(rho) +
                               " out of range for a dataset with " +
                               std::to_string(data.feature_count()) + " features");
    const FeatureRanking ranking = read_ranking_json(ranking_path, rho);
    require(static_cast<Index>(ranking.order.size()) == data.feature_count(),
            "ranking length does not match the dataset");
    rows.push_back(evaluate_selection(data, ranking.top(), runs, seed));
  }
  return rows;
}

int cmd_eval(const EvalOptions& opt) {
  const DataMatrix data = load_for_run(opt.data_path, opt.format, opt.raw);
  std::uint64_t seed = opt.seed;
  if (const auto env = env_seed()) seed = *env;
  const auto rhos = parse_int_list(opt.rho_list, "rho");
  const auto rows = evaluate_ranking_file(data, opt.ranking_path, rhos, opt.runs, seed);
  fs::create_directories(opt.out_dir);
  write_metrics_json((fs::path(opt.out_dir) / "metrics.json").string(), rows, opt.runs,
                     seed);
  write_metrics_csv((fs::path(opt.out_dir) / "metrics.csv").string(), rows);
  for (const auto& row : rows)
    std::cout << "rho=" << row.rho << " acc=" << row.acc_mean << "+/-" << row.acc_std
              << " nmi=" << row.nmi_mean << "+/-" << row.nmi_std << "\n";
  return 0;
}

struct SweepOptions {
  FitOptions base;
  std::string alpha_grid, beta_grid, lambda_grid;
  std::string rho_list = "20,40,60,80,100";
  int runs = 50;
  int jobs = 1;
};

struct SweepPoint {
  double alpha, beta, lambda;
  std::size_t index;
};

int cmd_sweep(const SweepOptions& opt) {
  const DataMatrix data = load_for_run(opt.base.data_path, opt.base.format, opt.base.raw);
  if (!data.has_labels()) throw std::runtime_error("evaluation requires labels");
  const auto alphas = opt.alpha_grid.empty() ? std::vector<double>{opt.base.hyper.alpha}
                                             : parse_double_list(opt.alpha_grid, "alpha");
  const auto betas = opt.beta_grid.empty() ? std::vector<double>{opt.base.hyper.beta}
                                           : parse_double_list(opt.beta_grid, "beta");
  const auto lambdas = opt.lambda_grid.empty()
                           ? std::vector<double>{opt.base.hyper.lambda}
                           : parse_double_list(opt.lambda_grid, "lambda");
  const auto rhos = parse_int_list(opt.rho_list, "rho");
  if (opt.jobs < 1) throw std::runtime_error("--jobs must be at least 1");

  std::vector<SweepPoint> points;
  for (double a : alphas)
    for (double b : betas)
      for (double l : lambdas) points.push_back({a, b, l, points.size()});

  const fs::path root(opt.base.out_dir);
  fs::create_directories(root);
  auto point_dir = [&](const SweepPoint& p) {
    std::ostringstream name;
    name << "point_" << p.index << "_a" << p.alpha << "_b" << p.beta << "_l" << p.lambda;
    return root / name.str();
  };

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(points.size());

  // Point failures are recorded (error file + log line) without stopping the
  // other grid points; only an all-failed sweep is a hard error.
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      const SweepPoint& p = points[i];
      const fs::path dir = point_dir(p);
      const fs::path done = dir / "done";
      try {
        if (fs::exists(done)) {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::cout << "skip " << dir.filename().string() << " (done)\n";
          continue;
        }
        FitOptions fopt = opt.base;
        fopt.hyper.alpha = p.alpha;
        fopt.hyper.beta = p.beta;
        fopt.hyper.lambda = p.lambda;
        HyperParams hyper = fopt.hyper;
        const auto variant = variant_from_string(fopt.variant);
        if (!variant) throw std::runtime_error("unknown variant: " + fopt.variant);
        hyper.variant = *variant;
        if (const auto seed = env_seed()) hyper.seed = *seed;
        const FitResult result = fit(data, hyper);
        fs::create_directories(dir);
        fs::remove(dir / "error.txt");
        write_ranking_json((dir / "ranking.json").string(), result.ranking,
                           data.feature_ids);
        write_fit_report_json((dir / "fit_report.json").string(), hyper, result);
        const auto rows = evaluate_ranking_file(data, (dir / "ranking.json").string(),
                                                rhos, opt.runs, hyper.seed);
        write_metrics_json((dir / "metrics.json").string(), rows, opt.runs, hyper.seed);
        write_metrics_csv((dir / "metrics.csv").string(), rows);
        std::ofstream(done.string()) << "ok\n";
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cout << "done " << dir.filename().string() << "\n";
      } catch (const std::exception& e) {
        errors[i] = e.what();
        std::error_code ec;
        fs::create_directories(dir, ec);
        std::ofstream((dir / "error.txt").string()) << e.what() << "\n";
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "point " << dir.filename().string() << " failed: " << e.what()
                  << "\n";
      }
    }
  };

  std::vector<std::thread> pool;
  const int thread_count = std::min<int>(opt.jobs, static_cast<int>(points.size()));
  for (int t = 0; t < thread_count; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  // Merge completed points in grid order so reruns are byte-identical.
  std::size_t completed = 0;
  std::string csv = "alpha,beta,lambda,rho,acc_mean,acc_std,nmi_mean,nmi_std\n";
  for (const auto& p : points) {
    if (!fs::exists(point_dir(p) / "done")) continue;
    ++completed;
    const json metrics = causefs::detail::read_json((point_dir(p) / "metrics.json").string());
    for (const auto& row : metrics.at("metrics")) {
      csv += causefs::detail::format_double(p.alpha) + "," +
             causefs::detail::format_double(p.beta) + "," +
             causefs::detail::format_double(p.lambda) + "," +
             std::to_string(row.at("rho").get<int>()) + "," +
             causefs::detail::format_double(row.at("acc_mean").get<double>()) + "," +
             causefs::detail::format_double(row.at("acc_std").get<double>()) + "," +
             causefs::detail::format_double(row.at("nmi_mean").get<double>()) + "," +
             causefs::detail::format_double(row.at("nmi_std").get<double>()) + "\n";
    }
  }
  if (completed == 0) {
    std::string first_error = "unknown";
    for (const auto& e : errors)
      if (!e.empty()) {
        first_error = e;
        break;
      }
    throw std::runtime_error("all sweep points failed; first error: " + first_error);
  }
  causefs::detail::write_text((root / "sweep.csv").string(), csv);
  if (completed < points.size())
    std::cerr << (points.size() - completed) << " of " << points.size()
              << " point(s) failed; see the per-point error files\n";
  std::cout << "sweep complete: " << completed << " of " << points.size()
            << " point(s), results in " << (root / "sweep.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causally aware unsupervised feature selection"};
  app.require_subcommand(1);

  // synth
  SyntheticSpec spec;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "generate a confounded synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--n", spec.n_samples, "sample count");
  synth_cmd->add_option("--clusters", spec.n_clusters, "cluster count");
  synth_cmd->add_option("--causal", spec.n_causal, "causal feature count");
  synth_cmd->add_option("--spurious", spec.n_spurious, "spurious feature count");
  synth_cmd->add_option("--noise", spec.n_noise, "noise feature count");
  synth_cmd->add_option("--confound-strength", spec.confound_strength,
                        "spurious feature coupling");
  synth_cmd->add_option("--noise-sigma", spec.noise_sigma, "observation noise level");
  synth_cmd->add_option("--seed", spec.seed, "random seed");

  // fit
  FitOptions fit_opt;
  auto* fit_cmd = app.add_subcommand("fit", "fit the model and rank features");
  add_fit_options(fit_cmd, fit_opt);

  // eval
  EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "cluster on selected features and score");
  eval_cmd->add_option("--data", eval_opt.data_path, "input dataset path")->required();
  eval_cmd->add_option("--format", eval_opt.format, "data format: csv or libsvm")
      ->check(CLI::IsMember({"csv", "libsvm"}));
  eval_cmd->add_option("--ranking", eval_opt.ranking_path, "ranking.json path")->required();
  eval_cmd->add_option("--rho-list", eval_opt.rho_list, "comma-separated selection sizes");
  eval_cmd->add_option("--runs", eval_opt.runs, "clustering repetitions per size");
  eval_cmd->add_option("--seed", eval_opt.seed, "base clustering seed");
  eval_cmd->add_flag("--raw", eval_opt.raw, "skip feature standardization");
  eval_cmd->add_option("--out", eval_opt.out_dir, "output directory")->required();

  // sweep
  SweepOptions sweep_opt;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid-search hyperparameters");
  add_fit_options(sweep_cmd, sweep_opt.base);
  sweep_cmd->add_option("--alpha-grid", sweep_opt.alpha_grid, "comma-separated alphas");
  sweep_cmd->add_option("--beta-grid", sweep_opt.beta_grid, "comma-separated betas");
  sweep_cmd->add_option("--lambda-grid", sweep_opt.lambda_grid, "comma-separated lambdas");
  sweep_cmd->add_option("--rho-list", sweep_opt.rho_list, "comma-separated selection sizes");
  sweep_cmd->add_option("--runs", sweep_opt.runs, "clustering repetitions per size");
  sweep_cmd->add_option("--jobs", sweep_opt.jobs, "parallel sweep workers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(spec, synth_out);
    if (fit_cmd->parsed()) return cmd_fit(fit_opt);
    if (eval_cmd->parsed()) return cmd_eval(eval_opt);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
