#pragma once

// Simulation study comparing unconstrained EM, EM+ICF and the zero-forced
// estimator on data simulated under a zero pattern.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "icfem/config.hpp"

namespace icfem {

struct SimStudyConfig {
  StudySettings settings;
  ZeroPattern pattern;
  FitParams init;
  FitConfig fit;
};

SimStudyConfig study_config_from(const RunConfig& run);

/// Mean, empirical standard deviation (divisor n) and sqrt(bias^2 + S.E.^2)
/// across the replicates an estimator completed.
struct Summary {
  double mean = 0.0;
  double se = 0.0;
  double rmqe = 0.0;
  int count = 0;
};

struct ParameterRow {
  std::string name;
  /// Absent for the log-likelihood row.
  std::optional<double> truth;
  std::map<Estimator, Summary> by_estimator;
};

struct EstimatorOutcome {
  bool ok = false;
  bool converged = false;
  bool rerun = false;
  int iterations = 0;
  /// Study-table ordered values (see `table_parameter_names`).
  std::vector<double> values;
  double loglik = 0.0;
  std::string error;
};

struct ReplicateRecord {
  int index = 0;
  std::uint64_t seed = 0;
  std::map<Estimator, EstimatorOutcome> outcomes;
  std::optional<LrTestResult> lr;
};

struct SimStudyReport {
  std::vector<ParameterRow> rows;
  std::vector<ReplicateRecord> replicates;
  std::vector<double> p_values;
  std::map<Estimator, int> excluded;
  std::vector<std::string> log;
};

/// Sigma_11, Sigma_12, Sigma_22, Sigma_13, ... (upper triangle column by
/// column), then m_1..m_q, then theta.
std::vector<std::string> table_parameter_names(Index q, Index theta_dim);
std::vector<double> table_parameter_values(const FitParams& params);

/// Summary statistics of `values` around `truth`.
Summary summarise(const std::vector<double>& values, double truth);

/// Runs every replicate: simulate N individuals from the truth, fit each
/// estimator, evaluate the log-likelihoods with common random numbers and
/// the LR test of the pattern. A replicate whose fit throws is re-run once
/// with a fresh seed; if it fails again it is excluded and counted.
SimStudyReport run_simulation_study(const NlmeModel& model, const SimStudyConfig& cfg);

/// Sorted p-values paired with the plotting positions (i - 0.5) / n.
/// Throws Error{ValueOutOfRange} for values outside [0, 1].
std::vector<std::pair<double, double>> qq_data(const std::vector<double>& p_values);

struct ExampleBundle {
  Dataset data;
  RunConfig config;
};

/// Synthetic stand-in for the cortisol data: 30 individuals simulated from
/// reference EM+ICF estimates with a fixed seed, plus the analysis
/// configuration.
ExampleBundle cortisol_example();

}  // namespace icfem
