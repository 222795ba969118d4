#pragma once

// JSON reports and CSV tables. Reals are written at full precision
// (shortest round-trip form in JSON, 17 significant digits in CSV).

#include <iosfwd>
#include <optional>

#include <json.hpp>

#include "icfem/inference.hpp"
#include "icfem/study.hpp"

namespace icfem {

nlohmann::json matrix_json(const MatrixXd& m);
nlohmann::json vector_json(const VectorXd& v);
nlohmann::json params_json(const FitParams& params);
nlohmann::json se_json(const StandardErrors& se);

struct FitSummary {
  FitReport fit;
  LikelihoodEstimate loglik;
  std::optional<StandardErrors> se;
};

/// {params, se, loglik, mc_se, converged, iterations, pattern, lr, unconstrained}
nlohmann::json fit_report_json(const FitSummary& constrained, const ZeroPattern& pattern,
                               const std::optional<FitSummary>& unconstrained,
                               const std::optional<LrTestResult>& lr);

/// One row per outer iteration: parameters flattened (Sigma lower triangle
/// row by row) and the acceptance-rate summary.
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

/// param,true,em_mean,em_se,em_rmqe,icf_mean,icf_se,icf_rmqe
void write_table1_csv(std::ostream& out, const SimStudyReport& report);

/// u,p
void write_qq_csv(std::ostream& out, const std::vector<std::pair<double, double>>& qq);

nlohmann::json study_report_json(const SimStudyReport& report);

}  // namespace icfem
