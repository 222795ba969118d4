// icfem: fit, simulate, study, icf and validate subcommands.
//
// Exit status: 0 on success, 1 on usage or input errors, 2 on numerical
// failures.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "icfem/config.hpp"
#include "icfem/dataset.hpp"
#include "icfem/report.hpp"
#include "icfem/rng.hpp"
#include "icfem/study.hpp"
#include "icfem/validation/suite.hpp"

namespace fs = std::filesystem;
using namespace icfem;

namespace {

constexpr int kUsage = 1;
constexpr int kNumerical = 2;

bool is_input_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseError:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::DiagonalZero:
    case ErrorCode::DuplicatePair:
    case ErrorCode::ValueOutOfRange:
    case ErrorCode::ScheduleError:
      return true;
    default:
      return false;
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

MatrixXd read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, "row " + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const auto q = static_cast<Index>(rows.size());
  if (q == 0) throw Error(ErrorCode::ParseError, "empty matrix file");
  MatrixXd m(q, q);
  for (Index i = 0; i < q; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != q) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(i + 1) + ": expected " + std::to_string(q) + " entries");
    }
    for (Index j = 0; j < q; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

FitSummary run_fit(const NlmeModel& model, const Dataset& data, const ZeroPattern& pattern, const RunConfig& cfg,
                   bool with_se) {
  FitSummary s;
  s.fit = fit(model, data, pattern, cfg.init, cfg.mcem);
  const std::uint64_t lik_seed = derive_seed(cfg.mcem.seed, 3);
  s.loglik = loglik_is(model, data, s.fit.state.params, cfg.loglik_samples, lik_seed);
  if (with_se) {
    FisherOptions fo;
    fo.n_samples = cfg.se_samples;
    fo.seed = derive_seed(cfg.mcem.seed, 4);
    s.se = fisher_se(model, data, s.fit.state.params, pattern, fo);
  }
  return s;
}

int cmd_fit(const fs::path& data_path, const fs::path& config_path, const fs::path& out_dir, bool no_se,
            int threads) {
  RunConfig cfg = load_config(config_path);
  if (threads > 0) cfg.mcem.threads = threads;
  const auto model = make_model(cfg.model);
  const Dataset data = read_dataset_csv(data_path);
  check_balanced(data, model->n_obs());
  const bool with_se = cfg.compute_se && !no_se;

  std::cerr << "fitting with " << cfg.pattern.size() << " zero constraint(s) on " << data.size()
            << " individuals\n";
  const FitSummary constrained = run_fit(*model, data, cfg.pattern, cfg, with_se);
  std::optional<FitSummary> unconstrained;
  std::optional<LrTestResult> lr;
  if (!cfg.pattern.empty()) {
    std::cerr << "fitting the unconstrained model\n";
    unconstrained = run_fit(*model, data, ZeroPattern(model->q(), {}), cfg, false);
    lr = lr_test(constrained.loglik.loglik, unconstrained->loglik.loglik, cfg.pattern);
  }

  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", fit_report_json(constrained, cfg.pattern, unconstrained, lr));
  {
    auto out = open_out(out_dir / "trace.csv");
    write_trace_csv(out, constrained.fit.state.trace);
  }
  if (unconstrained) {
    auto out = open_out(out_dir / "trace_unconstrained.csv");
    write_trace_csv(out, unconstrained->fit.state.trace);
  }
  std::cout << "loglik " << std::setprecision(10) << constrained.loglik.loglik << " (mc se "
            << constrained.loglik.mc_se << "), " << constrained.fit.iterations << " iterations, "
            << (constrained.fit.converged ? "converged" : "iteration cap reached") << "\n";
  if (lr) std::cout << "LR stat " << lr->stat << " df " << lr->df << " p " << lr->p_value << "\n";
  std::cout << "wrote " << (out_dir / "report.json").string() << "\n";
  return 0;
}

int cmd_simulate(const fs::path& config_path, bool example, int individuals, std::uint64_t seed,
                 const fs::path& out, const fs::path& config_out) {
  if (example) {
    const ExampleBundle bundle = cortisol_example();
    write_dataset_csv(out, bundle.data);
    if (!config_out.empty()) {
      auto c = open_out(config_out);
      c << cortisol_config_text();
    }
    std::cout << "wrote " << bundle.data.size() << " individuals to " << out.string() << "\n";
    return 0;
  }
  if (config_path.empty()) throw CLI::ValidationError("simulate", "--config is required unless --example is given");
  const RunConfig cfg = load_config(config_path);
  if (!cfg.has_study) throw Error(ErrorCode::ParseError, "config has no [study] section with the true parameters");
  const auto model = make_model(cfg.model);
  const int n = individuals > 0 ? individuals : cfg.study.individuals;
  const Dataset data = simulate_dataset(*model, cfg.study.truth.m, cfg.study.truth.sigma, cfg.study.truth.theta,
                                        static_cast<std::size_t>(n), seed);
  write_dataset_csv(out, data);
  std::cout << "wrote " << data.size() << " individuals to " << out.string() << "\n";
  return 0;
}

int cmd_study(const fs::path& config_path, const fs::path& out_dir, int replicates, int threads) {
  const RunConfig run = config_path.empty() ? [] {
    std::istringstream text(cortisol_config_text());
    return parse_config(text);
  }() : load_config(config_path);
  if (!run.has_study) throw Error(ErrorCode::ParseError, "config has no [study] section");
  SimStudyConfig cfg = study_config_from(run);
  if (replicates > 0) cfg.settings.replicates = replicates;
  if (threads > 0) cfg.settings.threads = threads;
  const auto model = make_model(run.model);
  std::cerr << "running " << cfg.settings.replicates << " replicates\n";
  const SimStudyReport rep = run_simulation_study(*model, cfg);

  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", study_report_json(rep));
  {
    auto out = open_out(out_dir / "table1.csv");
    write_table1_csv(out, rep);
  }
  {
    auto out = open_out(out_dir / "qq.csv");
    write_qq_csv(out, qq_data(rep.p_values));
  }
  for (const auto& line : rep.log) std::cerr << line << "\n";
  std::cout << "wrote " << out_dir.string() << "/{report.json,table1.csv,qq.csv}\n";
  return 0;
}

int cmd_icf(const fs::path& xtilde_path, const std::string& pairs, double n, double tol, int max_sweeps) {
  const MatrixXd x = read_matrix_csv(xtilde_path);
  const ZeroPattern pattern = ZeroPattern::from_one_based(x.rows(), parse_pairs(pairs));
  if (!is_positive_definite(0.5 * (x + x.transpose()))) {
    throw Error(ErrorCode::NotPositiveDefinite, "X~ is not positive definite");
  }
  const SufficientStats stats{0.5 * (x + x.transpose()), n};
  IcfOptions opts;
  opts.tol = tol;
  opts.max_sweeps = max_sweeps;
  const IcfResult res = icf_solve(stats, pattern, opts);
  nlohmann::json j;
  j["sigma"] = matrix_json(res.sigma.matrix());
  j["objective"] = res.diagnostics.final_objective;
  j["kkt_residual"] = res.diagnostics.kkt_residual;
  j["sweeps"] = res.diagnostics.sweeps;
  j["converged"] = res.diagnostics.converged;
  j["ridge_applied"] = res.diagnostics.ridge_applied;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_validate(bool full, int threads) {
  using namespace icfem::validation;
  std::vector<CheckResult> results = run_fast_checks();
  if (full) {
    results.push_back(check_linear_end_to_end());
    results.push_back(check_pattern_contract());
    results.push_back(check_study_directional(20, std::max(1, threads)));
  }
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  bool ok = true;
  for (const auto& r : results) {
    std::cout << format(r) << "\n";
    ok = ok && r.passed();
  }
  return ok ? 0 : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum likelihood for mixed effects models with a pattern of zeros in the random-effect covariance"};
  app.require_subcommand(1);

  fs::path data_path, config_path, out_dir, out_file, config_out, xtilde_path;
  bool no_se = false, example = false, full = false;
  int threads = 0, individuals = 0, replicates = 0, max_sweeps = 500;
  std::uint64_t seed = 1;
  std::string pairs;
  double n = 1.0, tol = 1e-8;

  auto* fit_cmd = app.add_subcommand("fit", "Fit the constrained and unconstrained models to a dataset");
  fit_cmd->add_option("--data", data_path, "Dataset CSV (id,obs_index,design_value,y)")->required();
  fit_cmd->add_option("--config", config_path, "Run configuration (INI)")->required();
  fit_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  fit_cmd->add_flag("--no-se", no_se, "Skip standard errors");
  fit_cmd->add_option("--threads", threads, "E-step worker threads");

  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a dataset from the [study] truth of a config");
  sim_cmd->add_option("--config", config_path, "Run configuration with a [study] section");
  sim_cmd->add_flag("--example", example, "Write the bundled cortisol example instead");
  sim_cmd->add_option("--config-out", config_out, "With --example: also write its configuration here");
  sim_cmd->add_option("-n,--individuals", individuals, "Number of individuals (default: study.individuals)");
  sim_cmd->add_option("--seed", seed, "Random seed");
  sim_cmd->add_option("--out", out_file, "Output CSV")->required();

  auto* study_cmd = app.add_subcommand("study", "Run the simulation study");
  study_cmd->add_option("--config", config_path, "Run configuration (default: bundled cortisol study)");
  study_cmd->add_option("--out-dir", out_dir, "Output directory")->required();
  study_cmd->add_option("--replicates", replicates, "Override the number of replicates");
  study_cmd->add_option("--threads", threads, "Replicates run in parallel");

  auto* icf_cmd = app.add_subcommand("icf", "Constrained covariance MLE from a second-moment matrix");
  icf_cmd->add_option("--xtilde", xtilde_path, "q x q matrix CSV")->required();
  icf_cmd->add_option("--pattern", pairs, "Zero pairs, one-based, e.g. \"(1,3)\"")->required();
  icf_cmd->add_option("--n", n, "Sample size behind X~");
  icf_cmd->add_option("--tol", tol, "Relative Frobenius tolerance per sweep");
  icf_cmd->add_option("--max-sweeps", max_sweeps, "Sweep cap");

  auto* val_cmd = app.add_subcommand("validate", "Run the oracle and property checks");
  val_cmd->add_flag("--full", full, "Include the slow end-to-end checks");
  val_cmd->add_option("--threads", threads, "Threads for the simulation study check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(data_path, config_path, out_dir, no_se, threads);
    if (*sim_cmd) return cmd_simulate(config_path, example, individuals, seed, out_file, config_out);
    if (*study_cmd) return cmd_study(config_path, out_dir, replicates, threads);
    if (*icf_cmd) return cmd_icf(xtilde_path, pairs, n, tol, max_sweeps);
    if (*val_cmd) return cmd_validate(full, threads);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_input_error(e.code()) ? kUsage : kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
