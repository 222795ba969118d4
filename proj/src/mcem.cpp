#include "icfem/mcem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "icfem/dataset.hpp"
#include "icfem/rng.hpp"

namespace icfem {

// ---------------------------------------------------------------------------
// Damping schedule

void GammaSchedule::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) throw Error(ErrorCode::ScheduleError, "gamma schedule: a must be positive");
  if (!(b > 0.0 && b <= 1.0)) throw Error(ErrorCode::ScheduleError, "gamma schedule: b must lie in (0, 1]");
  if (warmup < 0) throw Error(ErrorCode::ScheduleError, "gamma schedule: warm-up must be >= 0");
}

double GammaSchedule::gamma(int k) const {
  validate();
  if (k <= warmup) return 1.0;
  return std::min(1.0, a / std::pow(static_cast<double>(k - warmup), b));
}

FitParams saem_damp(const FitParams& prev, const FitParams& raw, int k, const GammaSchedule& schedule) {
  const double g = schedule.gamma(k);
  if (g == 1.0) return raw;
  FitParams out;
  out.m = prev.m + g * (raw.m - prev.m);
  out.theta = prev.theta + g * (raw.theta - prev.theta);
  // Zero entries stay bitwise zero: 0 + g * (0 - 0) == 0.
  out.sigma = SpdMatrix(prev.sigma.matrix() + g * (raw.sigma.matrix() - prev.sigma.matrix()));
  return out;
}

// ---------------------------------------------------------------------------
// E-step

ChainMoments mh_chain(const NlmeModel& model, const Individual& individual, const FitParams& params,
                      const ChainOptions& options, std::uint64_t seed, const VectorXd* start) {
  if (options.chain_length < 1) throw Error(ErrorCode::ValueOutOfRange, "mh_chain: L must be >= 1");
  if (options.burn_in < 0) throw Error(ErrorCode::ValueOutOfRange, "mh_chain: burn-in must be >= 0");
  const Index q = model.q();
  const VectorXd& y = individual.y;
  const VectorXd& design = individual.design;
  const MatrixXd chol = params.sigma.lower_factor();

  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto propose = [&] { return VectorXd(params.m + chol * standard_normal(rng, q)); };
  auto log_lik = [&](const VectorXd& x, double& out) {
    try {
      out = model.log_cond_density(y, x, params.theta, design);
      return std::isfinite(out);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DomainError) throw;
      return false;
    }
  };

  VectorXd current;
  double current_ll = 0.0;
  if (start != nullptr && start->size() == q && log_lik(*start, current_ll)) {
    current = *start;
  } else {
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      current = propose();
      found = log_lik(current, current_ll);
    }
    if (!found) {
      throw Error(ErrorCode::DegenerateDraw,
                  "mh_chain: no proposal inside the model domain for individual '" + individual.id + "'");
    }
  }

  ChainMoments out;
  out.id = individual.id;
  out.chain_length = options.chain_length;
  out.mean_x = VectorXd::Zero(q);
  out.second_moment = MatrixXd::Zero(q, q);
  out.theta_moment = VectorXd::Zero(model.theta_moment_dim());

  VectorXd current_moment = model.theta_moment(y, current, design);
  const int total = options.burn_in + options.chain_length;
  for (int t = 0; t < total; ++t) {
    VectorXd candidate = propose();
    double candidate_ll = 0.0;
    ++out.proposals;
    if (log_lik(candidate, candidate_ll)) {
      const double log_ratio = candidate_ll - current_ll;
      if (log_ratio >= 0.0 || std::log(uniform(rng)) < log_ratio) {
        current = std::move(candidate);
        current_ll = candidate_ll;
        current_moment = model.theta_moment(y, current, design);
        ++out.accepted;
      }
    } else {
      ++out.out_of_domain;
    }
    if (t >= options.burn_in) {
      out.mean_x += current;
      out.second_moment.selfadjointView<Eigen::Lower>().rankUpdate(current);
      out.theta_moment += current_moment;
    }
  }
  const double inv_l = 1.0 / options.chain_length;
  out.mean_x *= inv_l;
  out.second_moment = (out.second_moment.selfadjointView<Eigen::Lower>() * MatrixXd::Identity(q, q)) * inv_l;
  out.theta_moment *= inv_l;
  out.last_state = current;
  return out;
}

EStepOutput MetropolisEStep::run(const NlmeModel& model, const Dataset& data, const FitParams& params,
                                 int iteration) {
  const std::size_t n = data.size();
  std::vector<ChainMoments> chains(n);
  std::vector<const VectorXd*> starts(n, nullptr);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = warm_.find(data.individuals[i].id);
    if (it != warm_.end()) starts[i] = &it->second;
  }
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      const auto& ind = data.individuals[i];
      const std::uint64_t seed = derive_seed(seed_, hash_id(ind.id), static_cast<std::uint64_t>(iteration));
      chains[i] = mh_chain(model, ind, params, options_, seed, starts[i]);
    }
  };
  const int threads = std::max(1, std::min<int>(threads_, static_cast<int>(n)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    {
      std::vector<std::jthread> pool;
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            work(static_cast<std::size_t>(t), static_cast<std::size_t>(threads));
          } catch (...) {
            errors[static_cast<std::size_t>(t)] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  for (const auto& c : chains) warm_[c.id] = c.last_state;
  std::sort(chains.begin(), chains.end(), [](const ChainMoments& a, const ChainMoments& b) { return a.id < b.id; });
  return EStepOutput{std::move(chains)};
}

// ---------------------------------------------------------------------------
// M-step pieces

VectorXd m_update(const EStepOutput& estep) {
  if (estep.chains.empty()) throw Error(ErrorCode::ValueOutOfRange, "m_update: no individuals");
  VectorXd sum = VectorXd::Zero(estep.chains.front().mean_x.size());
  for (const auto& c : estep.chains) sum += c.mean_x;
  return sum / static_cast<double>(estep.size());
}

SufficientStats xtilde_update(const EStepOutput& estep, const VectorXd& m_next) {
  if (estep.chains.empty()) throw Error(ErrorCode::ValueOutOfRange, "xtilde_update: no individuals");
  const Index q = m_next.size();
  MatrixXd sum = MatrixXd::Zero(q, q);
  for (const auto& c : estep.chains) {
    sum += c.second_moment - m_next * c.mean_x.transpose() - c.mean_x * m_next.transpose() +
           m_next * m_next.transpose();
  }
  const double n = static_cast<double>(estep.size());
  SufficientStats stats;
  stats.xtilde = 0.5 * (sum + sum.transpose()) / n;
  stats.n = n;
  return stats;
}

VectorXd theta_update(const NlmeModel& model, const EStepOutput& estep) {
  VectorXd sum = VectorXd::Zero(model.theta_moment_dim());
  for (const auto& c : estep.chains) sum += c.theta_moment;
  return model.update_theta(sum, estep.size());
}

double theta_update_cortisol(const EStepOutput& estep, Index n_obs) {
  double sum = 0.0;
  for (const auto& c : estep.chains) sum += c.theta_moment(0);
  return sum / (static_cast<double>(estep.size()) * static_cast<double>(n_obs));
}

// ---------------------------------------------------------------------------
// Outer loop

double max_relative_change(const FitParams& prev, const FitParams& next, const ZeroPattern& pattern) {
  const MatrixXd& s0 = prev.sigma.matrix();
  const MatrixXd& s1 = next.sigma.matrix();
  double worst = 0.0;
  auto rel = [](double delta, double scale) {
    return scale > 0.0 ? std::abs(delta) / scale : std::abs(delta);
  };
  for (Index i = 0; i < prev.m.size(); ++i) {
    worst = std::max(worst, rel(next.m(i) - prev.m(i), std::max(std::abs(prev.m(i)), std::sqrt(s0(i, i)))));
  }
  for (Index i = 0; i < s0.rows(); ++i) {
    for (Index j = 0; j <= i; ++j) {
      if (i != j && pattern.contains(i, j)) continue;
      worst = std::max(worst, rel(s1(i, j) - s0(i, j), std::sqrt(s0(i, i) * s0(j, j))));
    }
  }
  for (Index p = 0; p < prev.theta.size(); ++p) {
    worst = std::max(worst, rel(next.theta(p) - prev.theta(p), std::abs(prev.theta(p))));
  }
  return worst;
}

FitReport fit(const NlmeModel& model, const Dataset& data, const ZeroPattern& pattern,
              const FitParams& init, const FitConfig& config, EStep* estep) {
  const Index q = model.q();
  if (data.empty()) throw Error(ErrorCode::ValueOutOfRange, "fit: empty dataset");
  check_balanced(data, model.n_obs());
  validate_pattern(pattern, q);
  config.schedule.validate();
  if (init.m.size() != q || init.sigma.dim() != q) throw Error(ErrorCode::DimensionMismatch, "fit: init order");
  if (!init.sigma.conforms(pattern)) {
    throw Error(ErrorCode::NotPositiveDefinite, "fit: initial Sigma does not conform to the zero pattern");
  }
  if (!model.theta_valid(init.theta)) throw Error(ErrorCode::DomainError, "fit: invalid initial theta");
  if (config.max_iter < 1 || config.window < 1) throw Error(ErrorCode::ValueOutOfRange, "fit: max_iter and window must be >= 1");

  std::unique_ptr<EStep> owned;
  if (estep == nullptr) {
    owned = std::make_unique<MetropolisEStep>(config.chain, config.seed, config.threads);
    estep = owned.get();
  }

  FitReport report;
  report.state.params = init;
  report.state.schedule = config.schedule;
  int below_tol = 0;
  for (int k = 1; k <= config.max_iter; ++k) {
    try {
      const FitParams& current = report.state.params;
      const EStepOutput moments = estep->run(model, data, current, k);

      FitParams raw;
      raw.m = m_update(moments);
      raw.theta = theta_update(model, moments);
      if (!model.theta_valid(raw.theta)) {
        throw Error(ErrorCode::DomainError, "theta update left the parameter space");
      }
      const SufficientStats stats = xtilde_update(moments, raw.m);
      const IcfResult icf = icf_solve(stats, pattern, current.sigma, config.icf);
      raw.sigma = icf.sigma;
      if (icf.diagnostics.max_sweeps_exceeded) ++report.icf_not_converged;
      if (icf.diagnostics.ridge_applied) ++report.icf_ridged;

      FitParams next = saem_damp(current, raw, k, config.schedule);
      if (!next.sigma.conforms(pattern)) {
        throw Error(ErrorCode::NotPositiveDefinite, "Sigma lost the zero pattern");
      }

      TraceRow row;
      row.iteration = k;
      row.gamma = config.schedule.gamma(k);
      row.m = next.m;
      row.sigma = next.sigma.matrix();
      row.theta = next.theta;
      row.accept_min = 1.0;
      for (const auto& c : moments.chains) {
        const double r = c.acceptance_rate();
        row.accept_mean += r;
        row.accept_min = std::min(row.accept_min, r);
        row.accept_max = std::max(row.accept_max, r);
      }
      row.accept_mean /= static_cast<double>(moments.size());
      row.max_relative_change = max_relative_change(current, next, pattern);
      row.icf_sweeps = icf.diagnostics.sweeps;

      below_tol = row.max_relative_change < config.tol ? below_tol + 1 : 0;
      report.state.params = std::move(next);
      report.state.k = k;
      report.state.trace.push_back(std::move(row));
      report.iterations = k;
      if (below_tol >= config.window) {
        report.converged = true;
        break;
      }
    } catch (const Error& e) {
      throw Error(e.code(), "fit iteration " + std::to_string(k) + ": " + e.what());
    }
  }
  return report;
}

}  // namespace icfem
