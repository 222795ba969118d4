#include "icfem/study.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "icfem/rng.hpp"

namespace icfem {

SimStudyConfig study_config_from(const RunConfig& run) {
  SimStudyConfig cfg;
  cfg.settings = run.study;
  cfg.pattern = run.pattern;
  cfg.init = run.init;
  cfg.fit = run.mcem;
  return cfg;
}

std::vector<std::string> table_parameter_names(Index q, Index theta_dim) {
  std::vector<std::string> names;
  for (Index j = 0; j < q; ++j) {
    for (Index i = 0; i <= j; ++i) names.push_back("Sigma" + std::to_string(i + 1) + std::to_string(j + 1));
  }
  for (Index i = 0; i < q; ++i) names.push_back("m" + std::to_string(i + 1));
  if (theta_dim == 1) {
    names.emplace_back("sigma2");
  } else {
    for (Index p = 0; p < theta_dim; ++p) names.push_back("theta" + std::to_string(p + 1));
  }
  return names;
}

std::vector<double> table_parameter_values(const FitParams& params) {
  std::vector<double> out;
  const Index q = params.sigma.dim();
  for (Index j = 0; j < q; ++j) {
    for (Index i = 0; i <= j; ++i) out.push_back(params.sigma(i, j));
  }
  for (Index i = 0; i < q; ++i) out.push_back(params.m(i));
  for (Index p = 0; p < params.theta.size(); ++p) out.push_back(params.theta(p));
  return out;
}

Summary summarise(const std::vector<double>& values, double truth) {
  Summary s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.se = std::sqrt(ss / n);
  const double bias = s.mean - truth;
  s.rmqe = std::sqrt(bias * bias + s.se * s.se);
  return s;
}

namespace {

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kFitStream = 2;
constexpr std::uint64_t kLikStream = 3;

struct FittedEstimate {
  FitParams params;
  bool converged = false;
  int iterations = 0;
};

FittedEstimate fit_estimator(const NlmeModel& model, const Dataset& data, Estimator est,
                             const SimStudyConfig& cfg, std::uint64_t fit_seed) {
  FitConfig fc = cfg.fit;
  fc.seed = fit_seed;
  fc.threads = 1;
  const ZeroPattern unconstrained(model.q(), {});
  const ZeroPattern& pattern = est == Estimator::EmIcf ? cfg.pattern : unconstrained;
  FitParams init = cfg.init;
  const FitReport rep = fit(model, data, pattern, init, fc);
  return {rep.state.params, rep.converged, rep.iterations};
}

FitParams zero_forced_estimate(const FitParams& em, const ZeroPattern& pattern, std::size_t n) {
  FitParams out = em;
  const MatrixXd zf = zero_forced(em.sigma.matrix(), pattern);
  out.sigma = is_positive_definite(zf) ? SpdMatrix(zf) : min_eig_repair(zf, static_cast<double>(n));
  return out;
}

ReplicateRecord run_replicate(const NlmeModel& model, const SimStudyConfig& cfg, int index,
                              std::vector<std::string>& log) {
  const auto& s = cfg.settings;
  ReplicateRecord rec;
  rec.index = index;
  rec.seed = derive_seed(s.seed, static_cast<std::uint64_t>(index));
  const Dataset data = simulate_dataset(model, s.truth.m, s.truth.sigma, s.truth.theta,
                                        static_cast<std::size_t>(s.individuals), derive_seed(rec.seed, kDataStream));
  const std::uint64_t lik_seed = derive_seed(rec.seed, kLikStream);

  std::map<Estimator, FitParams> fitted;
  auto needs = [&](Estimator e) { return std::find(s.estimators.begin(), s.estimators.end(), e) != s.estimators.end(); };
  const bool want_zf = needs(Estimator::ZeroForced);
  for (Estimator est : {Estimator::Em, Estimator::EmIcf}) {
    if (!needs(est) && !(est == Estimator::Em && want_zf)) continue;
    EstimatorOutcome& out = rec.outcomes[est];
    for (int attempt = 0; attempt < 2 && !out.ok; ++attempt) {
      try {
        const auto fit_seed = derive_seed(rec.seed, kFitStream, static_cast<std::uint64_t>(attempt));
        FittedEstimate f = fit_estimator(model, data, est, cfg, fit_seed);
        out.converged = f.converged;
        out.iterations = f.iterations;
        out.rerun = attempt > 0;
        out.loglik = loglik_is(model, data, f.params, s.lr_samples, lik_seed).loglik;
        out.values = table_parameter_values(f.params);
        out.ok = true;
        fitted[est] = std::move(f.params);
      } catch (const Error& e) {
        out.error = e.what();
        std::ostringstream msg;
        msg << "replicate " << index << " estimator " << to_string(est) << " attempt " << attempt + 1
            << " failed: " << e.what();
        log.push_back(msg.str());
      }
    }
    if (out.ok && !out.converged) {
      log.push_back("replicate " + std::to_string(index) + " estimator " + std::string(to_string(est)) +
                    " reached the iteration cap (kept, flagged)");
    }
  }
  if (want_zf) {
    EstimatorOutcome& out = rec.outcomes[Estimator::ZeroForced];
    const auto em = rec.outcomes.find(Estimator::Em);
    if (em != rec.outcomes.end() && em->second.ok) {
      try {
        const FitParams zf = zero_forced_estimate(fitted[Estimator::Em], cfg.pattern, data.size());
        out.values = table_parameter_values(zf);
        out.loglik = loglik_is(model, data, zf, s.lr_samples, lik_seed).loglik;
        out.converged = em->second.converged;
        out.iterations = em->second.iterations;
        out.ok = true;
      } catch (const Error& e) {
        out.error = e.what();
        log.push_back("replicate " + std::to_string(index) + " zero-forced estimate failed: " + e.what());
      }
    } else {
      out.error = "unconstrained fit unavailable";
    }
    if (!needs(Estimator::Em)) rec.outcomes.erase(Estimator::Em);
  }
  const auto em = rec.outcomes.find(Estimator::Em);
  const auto icf = rec.outcomes.find(Estimator::EmIcf);
  if (em != rec.outcomes.end() && icf != rec.outcomes.end() && em->second.ok && icf->second.ok) {
    rec.lr = lr_test(icf->second.loglik, em->second.loglik, cfg.pattern);
  }
  return rec;
}

}  // namespace

SimStudyReport run_simulation_study(const NlmeModel& model, const SimStudyConfig& cfg) {
  const auto& s = cfg.settings;
  if (s.replicates < 1) throw Error(ErrorCode::ValueOutOfRange, "study: replicates must be >= 1");
  validate_pattern(cfg.pattern, model.q());
  if (!s.truth.sigma.conforms(cfg.pattern)) {
    throw Error(ErrorCode::ValueOutOfRange, "study: true Sigma does not conform to the zero pattern");
  }

  SimStudyReport report;
  report.replicates.resize(static_cast<std::size_t>(s.replicates));
  std::vector<std::vector<std::string>> logs(static_cast<std::size_t>(s.replicates));
  const int threads = std::max(1, std::min(s.threads, s.replicates));
  auto work = [&](int begin) {
    for (int r = begin; r < s.replicates; r += threads) {
      const auto ur = static_cast<std::size_t>(r);
      report.replicates[ur] = run_replicate(model, cfg, r, logs[ur]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  for (auto& l : logs) report.log.insert(report.log.end(), l.begin(), l.end());

  for (Estimator est : s.estimators) {
    int excluded = 0;
    for (const auto& rec : report.replicates) {
      auto it = rec.outcomes.find(est);
      if (it == rec.outcomes.end() || !it->second.ok) ++excluded;
    }
    report.excluded[est] = excluded;
  }
  for (const auto& rec : report.replicates) {
    if (rec.lr) report.p_values.push_back(rec.lr->p_value);
  }

  if (s.estimators.empty()) return report;
  const auto names = table_parameter_names(model.q(), model.theta_dim());
  const auto truth = table_parameter_values(s.truth);
  for (std::size_t k = 0; k <= names.size(); ++k) {
    ParameterRow row;
    const bool loglik_row = k == names.size();
    row.name = loglik_row ? "loglik" : names[k];
    if (!loglik_row) row.truth = truth[k];
    for (Estimator est : s.estimators) {
      std::vector<double> values;
      for (const auto& rec : report.replicates) {
        auto it = rec.outcomes.find(est);
        if (it == rec.outcomes.end() || !it->second.ok) continue;
        values.push_back(loglik_row ? it->second.loglik : it->second.values[k]);
      }
      Summary sum = summarise(values, loglik_row ? 0.0 : truth[k]);
      if (loglik_row) sum.rmqe = std::nan("");
      row.by_estimator[est] = sum;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<std::pair<double, double>> qq_data(const std::vector<double>& p_values) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::ValueOutOfRange, "qq_data: p-value " + std::to_string(p) + " outside [0, 1]");
    }
  }
  std::vector<double> sorted = p_values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> out;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out.emplace_back((static_cast<double>(i) + 0.5) / n, sorted[i]);
  }
  return out;
}

ExampleBundle cortisol_example() {
  std::istringstream text(cortisol_config_text());
  ExampleBundle bundle;
  bundle.config = parse_config(text);
  const CortisolModel model(bundle.config.model.doses);
  // Reference EM+ICF estimates of the cortisol analysis.
  VectorXd m(4);
  m << 48.84, 71.46, 1.47, 0.0840;
  MatrixXd sigma(4, 4);
  sigma << 19.50, -4.66, -0.29, 0.0,
           -4.66, 2.33, -0.095, -0.0024,
           -0.29, -0.095, 0.058, 0.0,
           0.0, -0.0024, 0.0, 0.0000144;
  VectorXd theta(1);
  theta << 0.0151;
  bundle.data = simulate_dataset(model, m, SpdMatrix(sigma), theta, 30, 20080125);
  return bundle;
}

}  // namespace icfem
