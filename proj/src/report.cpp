#include "icfem/report.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace icfem {

using nlohmann::json;

namespace {

// NaN and missing values become empty CSV cells.
void csv_cell(std::ostream& out, double v) {
  if (std::isfinite(v)) out << v;
}

}  // namespace

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const VectorXd& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json params_json(const FitParams& params) {
  return json{{"m", vector_json(params.m)}, {"sigma", matrix_json(params.sigma.matrix())},
              {"theta", vector_json(params.theta)}};
}

json se_json(const StandardErrors& se) {
  json out = json::object();
  for (std::size_t k = 0; k < se.names.size(); ++k) {
    out[se.names[k]] = se.se[k] ? json(*se.se[k]) : json(nullptr);
  }
  return out;
}

namespace {

json summary_json(const FitSummary& s) {
  json out{{"params", params_json(s.fit.state.params)},
           {"loglik", s.loglik.loglik},
           {"mc_se", s.loglik.mc_se},
           {"loglik_samples", s.loglik.n_samples},
           {"converged", s.fit.converged},
           {"iterations", s.fit.iterations}};
  if (s.se) {
    out["se"] = se_json(*s.se);
    out["hessian_pd"] = s.se->hessian_pd;
  } else {
    out["se"] = nullptr;
  }
  return out;
}

}  // namespace

json fit_report_json(const FitSummary& constrained, const ZeroPattern& pattern,
                     const std::optional<FitSummary>& unconstrained,
                     const std::optional<LrTestResult>& lr) {
  json out = summary_json(constrained);
  json pairs = json::array();
  for (auto [i, j] : pattern.one_based()) pairs.push_back({i, j});
  out["pattern"] = pairs;
  out["unconstrained"] = unconstrained ? summary_json(*unconstrained) : json(nullptr);
  if (lr) {
    out["lr"] = json{{"stat", lr->stat}, {"df", lr->df}, {"p", lr->p_value}};
  } else {
    out["lr"] = nullptr;
  }
  return out;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << std::setprecision(17);
  if (trace.empty()) {
    out << "iteration\n";
    return;
  }
  const Index q = trace.front().m.size();
  out << "iteration,gamma";
  for (Index i = 0; i < q; ++i) out << ",m" << i + 1;
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j <= i; ++j) out << ",Sigma" << i + 1 << j + 1;
  }
  for (Index p = 0; p < trace.front().theta.size(); ++p) out << ",theta" << p + 1;
  out << ",accept_mean,accept_min,accept_max,max_rel_change,icf_sweeps\n";
  for (const auto& row : trace) {
    out << row.iteration << ',' << row.gamma;
    for (Index i = 0; i < q; ++i) out << ',' << row.m(i);
    for (Index i = 0; i < q; ++i) {
      for (Index j = 0; j <= i; ++j) out << ',' << row.sigma(i, j);
    }
    for (Index p = 0; p < row.theta.size(); ++p) out << ',' << row.theta(p);
    out << ',' << row.accept_mean << ',' << row.accept_min << ',' << row.accept_max << ','
        << row.max_relative_change << ',' << row.icf_sweeps << '\n';
  }
}

void write_table1_csv(std::ostream& out, const SimStudyReport& report) {
  out << std::setprecision(17);
  out << "param,true,em_mean,em_se,em_rmqe,icf_mean,icf_se,icf_rmqe\n";
  for (const auto& row : report.rows) {
    out << row.name << ',';
    if (row.truth) out << *row.truth;
    for (Estimator est : {Estimator::Em, Estimator::EmIcf}) {
      auto it = row.by_estimator.find(est);
      for (int c = 0; c < 3; ++c) {
        out << ',';
        if (it == row.by_estimator.end()) continue;
        csv_cell(out, c == 0 ? it->second.mean : c == 1 ? it->second.se : it->second.rmqe);
      }
    }
    out << '\n';
  }
}

void write_qq_csv(std::ostream& out, const std::vector<std::pair<double, double>>& qq) {
  out << std::setprecision(17) << "u,p\n";
  for (const auto& [u, p] : qq) out << u << ',' << p << '\n';
}

json study_report_json(const SimStudyReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r{{"param", row.name}, {"true", row.truth ? json(*row.truth) : json(nullptr)}};
    for (const auto& [est, s] : row.by_estimator) {
      r[std::string(to_string(est))] = json{{"mean", s.mean},
                                            {"se", s.se},
                                            {"rmqe", std::isfinite(s.rmqe) ? json(s.rmqe) : json(nullptr)},
                                            {"n", s.count}};
    }
    rows.push_back(std::move(r));
  }
  json reps = json::array();
  for (const auto& rec : report.replicates) {
    json r{{"index", rec.index}, {"seed", rec.seed}};
    for (const auto& [est, o] : rec.outcomes) {
      json e{{"ok", o.ok}, {"converged", o.converged}, {"rerun", o.rerun}, {"iterations", o.iterations}};
      if (o.ok) {
        e["values"] = o.values;
        e["loglik"] = o.loglik;
      } else {
        e["error"] = o.error;
      }
      r[std::string(to_string(est))] = std::move(e);
    }
    r["lr"] = rec.lr ? json{{"stat", rec.lr->stat}, {"df", rec.lr->df}, {"p", rec.lr->p_value}} : json(nullptr);
    reps.push_back(std::move(r));
  }
  json excluded = json::object();
  for (const auto& [est, n] : report.excluded) excluded[std::string(to_string(est))] = n;
  return json{{"rows", rows}, {"replicates", reps}, {"p_values", report.p_values},
              {"excluded", excluded}, {"log", report.log}};
}

}  // namespace icfem
