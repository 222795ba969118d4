#include "icfem/validation/suite.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "icfem/study.hpp"
#include "icfem/validation/oracles.hpp"

namespace icfem::validation {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool bitwise_equal(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) return false;
  }
  return true;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// X~ = sample second moment of n draws from N(0, C) with C random SPD.
MatrixXd random_xtilde(Rng& rng, Index q, Index n) {
  const MatrixXd c = random_spd(rng, q);
  const Eigen::LLT<MatrixXd> chol(c);
  MatrixXd x = MatrixXd::Zero(q, q);
  for (Index k = 0; k < n; ++k) {
    const VectorXd z = chol.matrixL() * standard_normal(rng, q);
    x += z * z.transpose();
  }
  x /= static_cast<double>(n);
  return 0.5 * (x + x.transpose());
}

std::vector<IndexPair> all_pairs(Index q) {
  std::vector<IndexPair> out;
  for (Index j = 1; j < q; ++j) {
    for (Index i = 0; i < j; ++i) out.push_back({i, j});
  }
  return out;
}

const char* status_word(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "PASS";
    case CheckStatus::Flagged: return "FLAG";
    case CheckStatus::Fail: return "FAIL";
  }
  return "FAIL";
}

}  // namespace

std::string format(const CheckResult& r) {
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.1f", r.seconds);
  return "criterion " + std::to_string(r.id) + " " + status_word(r.status) + " " + r.name + ": " + r.detail +
         " (" + secs + "s)";
}

CheckResult check_schur_identities(std::uint64_t seed, int count) {
  const auto start = Clock::now();
  CheckResult res{1, "schur identities", CheckStatus::Pass, "", 0.0};
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<Index> dim(2, 8);
  double worst_det = 0.0, worst_quad = 0.0;
  for (int t = 0; t < count; ++t) {
    const Index q = dim(rng);
    const SpdMatrix sigma(random_spd(rng, q));
    const Index j = std::uniform_int_distribution<Index>(0, q - 1)(rng);
    const SchurSplit split = schur_split(sigma, j);
    const VectorXd z = standard_normal(rng, q);

    const double det_ref = determinant_by_elimination(sigma.matrix());
    const double det_split = determinant_by_elimination(split.a) * split.s;
    const double quad_ref = z.dot(inverse_by_elimination(sigma.matrix()) * z);
    worst_det = std::max(worst_det, relative_gap(det_split, det_ref));
    worst_quad = std::max(worst_quad, relative_gap(split.quadratic_form(z), quad_ref));
  }
  if (worst_det > 1e-10 || worst_quad > 1e-10) res.status = CheckStatus::Fail;
  std::ostringstream d;
  d << count << " matrices, max rel err det " << worst_det << ", quadratic form " << worst_quad;
  res.detail = d.str();
  res.seconds = elapsed(start);
  if (res.seconds >= 5.0) {
    res.status = CheckStatus::Fail;
    res.detail += ", over the 5 s budget";
  }
  return res;
}

std::pair<CheckResult, CheckResult> check_icf_oracle(std::uint64_t seed, int per_pattern) {
  const auto start = Clock::now();
  CheckResult oracle{2, "icf oracle equivalence", CheckStatus::Pass, "", 0.0};
  CheckResult descent{3, "icf descent and preservation", CheckStatus::Pass, "", 0.0};
  Rng rng = make_rng(seed);

  std::vector<ZeroPattern> patterns;
  for (const auto& p : all_pairs(3)) patterns.emplace_back(3, std::vector<IndexPair>{p});
  {
    const auto pairs = all_pairs(4);
    const int full = (1 << pairs.size()) - 1;
    std::set<int> masks;
    std::uniform_int_distribution<int> pick(1, full - 1);
    while (masks.size() < 5) masks.insert(pick(rng));
    for (int mask : masks) {
      std::vector<IndexPair> chosen;
      for (std::size_t b = 0; b < pairs.size(); ++b) {
        if (mask & (1 << b)) chosen.push_back(pairs[b]);
      }
      patterns.emplace_back(4, chosen);
    }
  }

  double worst_gap = 0.0, worst_kkt = 0.0;
  int below_oracle = 0, updates = 0, violations = 0, runs = 0;
  for (const auto& pattern : patterns) {
    validate_pattern(pattern, pattern.dim());
    for (int t = 0; t < per_pattern; ++t) {
      const Index q = pattern.dim();
      const SufficientStats stats{random_xtilde(rng, q, q + 6), 1.0};
      IcfOptions opts;
      opts.observer = [&](const ColumnUpdateEvent& e) {
        ++updates;
        const Index j = e.column;
        const bool descends = e.objective_after <= e.objective_before + 1e-12 * (1.0 + std::abs(e.objective_before));
        const bool pd = is_positive_definite(e.after->matrix());
        const bool zeros = e.after->conforms(pattern);
        const bool a_fixed = bitwise_equal(drop_index(e.before->matrix(), j), drop_index(e.after->matrix(), j));
        if (!(descends && pd && zeros && a_fixed)) ++violations;
      };
      const IcfResult icf = icf_solve(stats, pattern, opts);
      ++runs;
      const MatrixXd start_point = stats.xtilde.diagonal().asDiagonal();
      const ConstrainedMle ref = brute_force_constrained_mle(stats.xtilde, pattern, start_point);
      const double f_icf = objective_by_elimination(icf.sigma.matrix(), stats.xtilde);
      worst_gap = std::max(worst_gap, std::abs(f_icf - ref.objective));
      if (ref.objective < f_icf - 1e-8) ++below_oracle;
      worst_kkt = std::max(worst_kkt, icf.diagnostics.kkt_residual);
      if (!icf.sigma.conforms(pattern)) ++violations;
    }
  }
  if (worst_gap > 1e-8 || worst_kkt >= 1e-6) oracle.status = CheckStatus::Fail;
  std::ostringstream d;
  d << runs << " problems over " << patterns.size() << " patterns, max |objective gap| " << worst_gap
    << " (oracle lower in " << below_oracle << "), max KKT residual " << worst_kkt;
  oracle.detail = d.str();
  oracle.seconds = elapsed(start);
  if (oracle.seconds >= 120.0) {
    oracle.status = CheckStatus::Fail;
    oracle.detail += ", over the 2 min budget";
  }

  if (violations > 0) descent.status = CheckStatus::Fail;
  descent.detail = std::to_string(updates) + " column updates, " + std::to_string(violations) + " violations";
  descent.seconds = oracle.seconds;
  return {oracle, descent};
}

CheckResult check_zero_forced_example() {
  const auto start = Clock::now();
  CheckResult res{4, "zero-forced example", CheckStatus::Pass, "", 0.0};
  MatrixXd uc(3, 3), expected(3, 3);
  uc << 4, -3, 3, -3, 4, -3, 3, -3, 4;
  expected << 4, -3, 0, -3, 4, -3, 0, -3, 4;
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const MatrixXd zf = zero_forced(uc, pattern);
  const bool exact = bitwise_equal(zf, expected);
  const double lambda = Eigen::SelfAdjointEigenSolver<MatrixXd>(zf).eigenvalues()(0);
  const double lambda_ref = 4.0 - 3.0 * std::sqrt(2.0);
  const bool eig_ok = lambda < 0.0 && std::abs(lambda - lambda_ref) < 1e-6;
  bool repair_ok = false;
  try {
    const SpdMatrix repaired = min_eig_repair(zf, 30.0);
    repair_ok = is_positive_definite(repaired.matrix()) && repaired.conforms(pattern);
  } catch (const Error&) {
    repair_ok = false;
  }
  if (!(exact && eig_ok && repair_ok)) res.status = CheckStatus::Fail;
  std::ostringstream d;
  d << "exact match " << (exact ? "yes" : "no") << ", lambda_min " << lambda << " (ref " << lambda_ref
    << "), repair PD with zeros " << (repair_ok ? "yes" : "no");
  res.detail = d.str();
  res.seconds = elapsed(start);
  return res;
}

CheckResult check_linear_end_to_end(std::uint64_t seed, int individuals) {
  const auto start = Clock::now();
  CheckResult res{5, "linear-gaussian end to end", CheckStatus::Pass, "", 0.0};
  // Two replicate measurements per component keep Sigma and sigma^2
  // separately identified, so the Hessian is invertible.
  const LinearGaussianModel model(3, 2);
  FitParams truth;
  truth.m = VectorXd(3);
  truth.m << 1.0, -2.0, 0.5;
  MatrixXd s(3, 3);
  s << 1.0, 0.3, 0.0, 0.3, 0.8, -0.2, 0.0, -0.2, 0.5;
  truth.sigma = SpdMatrix(s);
  truth.theta = VectorXd::Constant(1, 0.25);
  const Dataset data = simulate_dataset(model, truth.m, truth.sigma, truth.theta,
                                        static_cast<std::size_t>(individuals), derive_seed(seed, 1));

  const double closed = linear_gaussian_loglik(model, data, truth.m, truth.sigma.matrix(), truth.theta(0));
  const LikelihoodEstimate is = loglik_is(model, data, truth, 10000, derive_seed(seed, 2));
  const bool lik_ok = std::abs(is.loglik - closed) <= 3.0 * is.mc_se;

  const ZeroPattern none(3, {});
  FitParams init;
  init.m = VectorXd::Zero(3);
  init.sigma = SpdMatrix::identity(3);
  init.theta = VectorXd::Constant(1, 1.0);
  FitConfig fc;
  fc.seed = derive_seed(seed, 3);
  const FitReport fitted = fit(model, data, none, init, fc);
  FisherOptions fo;
  fo.seed = derive_seed(seed, 4);
  const StandardErrors se = fisher_se(model, data, fitted.state.params, none, fo);

  bool m_ok = true;
  std::ostringstream d;
  d << "loglik IS " << is.loglik << " vs closed form " << closed << " (mc se " << is.mc_se << ")"
    << "; m-hat - m in SE units:";
  for (Index i = 0; i < 3; ++i) {
    const auto& e = se.se[static_cast<std::size_t>(i)];
    if (!e) {
      m_ok = false;
      d << " n/a";
      continue;
    }
    const double z = (fitted.state.params.m(i) - truth.m(i)) / *e;
    m_ok = m_ok && std::abs(z) <= 3.0;
    d << " " << z;
  }
  d << "; " << fitted.iterations << " iterations";
  if (!(lik_ok && m_ok)) res.status = CheckStatus::Fail;
  res.detail = d.str();
  res.seconds = elapsed(start);
  if (res.seconds >= 300.0) {
    res.status = CheckStatus::Fail;
    res.detail += ", over the 5 min budget";
  }
  return res;
}

CheckResult check_pattern_contract(std::uint64_t seed, int fits, int max_iter) {
  const auto start = Clock::now();
  CheckResult res{6, "pattern contract at scale", CheckStatus::Pass, "", 0.0};
  std::istringstream text(cortisol_config_text());
  const RunConfig cfg = parse_config(text);
  const auto model = make_model(cfg.model);
  int good = 0;
  std::ostringstream d;
  for (int r = 0; r < fits; ++r) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(r));
    try {
      const Dataset data = simulate_dataset(*model, cfg.study.truth.m, cfg.study.truth.sigma,
                                            cfg.study.truth.theta, 30, derive_seed(s, 1));
      FitConfig fc = cfg.mcem;
      fc.seed = derive_seed(s, 2);
      fc.max_iter = max_iter;
      const FitReport rep = fit(*model, data, cfg.pattern, cfg.init, fc);
      const MatrixXd& sig = rep.state.params.sigma.matrix();
      bool zeros = rep.state.params.sigma.conforms(cfg.pattern);
      const bool pd = Eigen::LLT<MatrixXd>(sig).info() == Eigen::Success && is_positive_definite(sig);
      if (zeros && pd) ++good;
      else d << "fit " << r << " zeros " << zeros << " pd " << pd << "; ";
    } catch (const Error& e) {
      d << "fit " << r << " threw: " << e.what() << "; ";
    }
  }
  d << good << "/" << fits << " fits with bitwise zeros and a PD estimate";
  if (good != fits) res.status = CheckStatus::Fail;
  res.detail = d.str();
  res.seconds = elapsed(start);
  return res;
}

CheckResult check_study_directional(int replicates, int threads) {
  const auto start = Clock::now();
  CheckResult res{7, "desk-scale study", CheckStatus::Pass, "", 0.0};
  std::istringstream text(cortisol_config_text());
  const RunConfig run = parse_config(text);
  const auto model = make_model(run.model);
  SimStudyConfig cfg = study_config_from(run);
  cfg.settings.replicates = replicates;
  cfg.settings.threads = threads;
  cfg.settings.estimators = {Estimator::Em, Estimator::EmIcf};
  const SimStudyReport rep = run_simulation_study(*model, cfg);

  auto row = [&](const std::string& name) -> const ParameterRow* {
    for (const auto& r : rep.rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  };
  bool zero_rows = true;
  for (const char* name : {"Sigma14", "Sigma34"}) {
    const ParameterRow* r = row(name);
    if (r == nullptr) {
      zero_rows = false;
      continue;
    }
    const Summary& s = r->by_estimator.at(Estimator::EmIcf);
    zero_rows = zero_rows && s.count > 0 && s.mean == 0.0 && s.se == 0.0 && s.rmqe == 0.0;
  }
  const ParameterRow* r13 = row("Sigma13");
  double ratio = std::nan("");
  if (r13 != nullptr) ratio = r13->by_estimator.at(Estimator::EmIcf).rmqe / r13->by_estimator.at(Estimator::Em).rmqe;

  std::ostringstream d;
  d << replicates << " replicates (excluded em " << rep.excluded.at(Estimator::Em) << ", icf "
    << rep.excluded.at(Estimator::EmIcf) << "); EM+ICF Sigma14/Sigma34 rows zero " << (zero_rows ? "yes" : "no")
    << "; sqrt(MQE) ratio icf/em for Sigma13 " << ratio;
  if (!zero_rows || !(ratio <= 1.2)) {
    res.status = CheckStatus::Fail;
  } else if (ratio >= 1.0) {
    res.status = CheckStatus::Flagged;
  }
  res.detail = d.str();
  res.seconds = elapsed(start);
  if (res.seconds >= 600.0) d << ", over the 10 min target";
  res.detail = d.str();
  return res;
}

CheckResult check_lr_mechanics(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult res{8, "lr mechanics", CheckStatus::Pass, "", 0.0};
  const auto pattern = ZeroPattern::from_one_based(4, {{1, 4}, {3, 4}});
  const LrTestResult lr = lr_test(-754.23, -750.25, pattern);
  const bool stat_ok = std::abs(lr.stat - 7.96) < 1e-9 && lr.df == 2;
  const bool p_ok = std::abs(lr.p_value - std::exp(-3.98)) < 1e-3;

  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> p(100);
  for (double& v : p) v = unif(rng);
  double ks = 0.0;
  for (const auto& [u, pv] : qq_data(p)) ks = std::max(ks, std::abs(u - pv));
  const bool qq_ok = ks < 0.17;

  if (!(stat_ok && p_ok && qq_ok)) res.status = CheckStatus::Fail;
  std::ostringstream d;
  d << "stat " << lr.stat << ", df " << lr.df << ", p " << lr.p_value << " (exp(-3.98) = " << std::exp(-3.98)
    << "); qq max deviation " << ks << " on 100 uniforms";
  res.detail = d.str();
  res.seconds = elapsed(start);
  return res;
}

std::vector<CheckResult> run_fast_checks() {
  std::vector<CheckResult> out;
  out.push_back(check_schur_identities());
  auto [oracle, descent] = check_icf_oracle();
  out.push_back(std::move(oracle));
  out.push_back(std::move(descent));
  out.push_back(check_zero_forced_example());
  out.push_back(check_lr_mechanics());
  return out;
}

}  // namespace icfem::validation
