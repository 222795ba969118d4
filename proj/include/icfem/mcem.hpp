#pragma once

// Stochastic EM with an ICF M-step. Each outer iteration runs a
// Metropolis-Hastings independence sampler per individual, updates m and
// theta in closed form, fits Sigma over S_q^+(pattern) with ICF and damps
// the result with the stochastic-approximation step gamma_k.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "icfem/covariance.hpp"
#include "icfem/model.hpp"

namespace icfem {

/// gamma_k = 1 for k <= warmup, then a / (k - warmup)^b, capped at 1.
struct GammaSchedule {
  double a = 1.0;
  double b = 0.8;
  int warmup = 50;

  /// Throws Error{ScheduleError} unless a > 0 and b in (0, 1].
  void validate() const;
  double gamma(int k) const;
};

struct FitParams {
  VectorXd m;
  SpdMatrix sigma;
  VectorXd theta;
};

/// Moment summary of one individual's chain over the retained states.
struct ChainMoments {
  std::string id;
  VectorXd mean_x;         ///< (1/L) sum_l x^(l)
  MatrixXd second_moment;  ///< (1/L) sum_l x^(l) x^(l)'
  VectorXd theta_moment;   ///< (1/L) sum_l model.theta_moment(y, x^(l))
  int chain_length = 0;
  int proposals = 0;
  int accepted = 0;
  int out_of_domain = 0;
  VectorXd last_state;

  double acceptance_rate() const {
    return proposals > 0 ? static_cast<double>(accepted) / proposals : 0.0;
  }
};

/// Chains ordered by individual id.
struct EStepOutput {
  std::vector<ChainMoments> chains;

  std::size_t size() const noexcept { return chains.size(); }
};

struct ChainOptions {
  int chain_length = 500;
  int burn_in = 100;
};

/// Independence sampler targeting p(x | y) with proposal N(m, Sigma). The
/// prior cancels, so a move is accepted with probability
/// min(1, exp(log p(y|x') - log p(y|x))). Proposals outside the model
/// domain are rejected and counted. Starts from `start` when given and
/// valid, otherwise from a proposal draw.
ChainMoments mh_chain(const NlmeModel& model, const Individual& individual, const FitParams& params,
                      const ChainOptions& options, std::uint64_t seed,
                      const VectorXd* start = nullptr);

/// (1/N) sum_i E[X_i | Y_i].
VectorXd m_update(const EStepOutput& estep);

/// X~ = (1/N) sum_i E[(X_i - m)(X_i - m)' | Y_i], symmetrised.
SufficientStats xtilde_update(const EStepOutput& estep, const VectorXd& m_next);

/// Delegates the theta M-step to the model using the summed chain moments.
VectorXd theta_update(const NlmeModel& model, const EStepOutput& estep);

/// sigma^2 update of the cortisol model: the per-observation mean of
/// E[((y_ij - F_j(X_i)) / F_j(X_i))^2 | Y_i].
double theta_update_cortisol(const EStepOutput& estep, Index n_obs);

/// prev + gamma_k (raw - prev) on all three blocks; gamma_k = 1 returns raw.
FitParams saem_damp(const FitParams& prev, const FitParams& raw, int k, const GammaSchedule& schedule);

/// Source of conditional moments for one outer iteration.
class EStep {
 public:
  virtual ~EStep() = default;
  virtual EStepOutput run(const NlmeModel& model, const Dataset& data, const FitParams& params,
                          int iteration) = 0;
};

/// Metropolis-Hastings E-step. Streams are keyed by (master seed, individual
/// id, iteration); chains warm-start from the previous iteration's last state.
class MetropolisEStep final : public EStep {
 public:
  MetropolisEStep(ChainOptions options, std::uint64_t seed, int threads = 1)
      : options_(options), seed_(seed), threads_(threads) {}

  EStepOutput run(const NlmeModel& model, const Dataset& data, const FitParams& params,
                  int iteration) override;

 private:
  ChainOptions options_;
  std::uint64_t seed_;
  int threads_;
  std::map<std::string, VectorXd> warm_;
};

struct FitConfig {
  ChainOptions chain;
  GammaSchedule schedule;
  double tol = 1e-4;
  int window = 10;
  int max_iter = 400;
  std::uint64_t seed = 1;
  int threads = 1;
  IcfOptions icf;
};

struct TraceRow {
  int iteration = 0;
  double gamma = 1.0;
  VectorXd m;
  MatrixXd sigma;
  VectorXd theta;
  double accept_mean = 0.0;
  double accept_min = 0.0;
  double accept_max = 0.0;
  double max_relative_change = 0.0;
  int icf_sweeps = 0;
};

struct FitState {
  FitParams params;
  int k = 0;
  GammaSchedule schedule;
  std::vector<TraceRow> trace;
};

struct FitReport {
  FitState state;
  bool converged = false;
  int iterations = 0;
  /// Outer iterations whose ICF solve hit its sweep cap.
  int icf_not_converged = 0;
  /// Outer iterations whose statistics needed the ridge.
  int icf_ridged = 0;
};

/// Largest change between two iterates over m, the unconstrained entries of
/// Sigma and theta, each measured relative to its natural scale: |m_i| or
/// the standard deviation sqrt(Sigma_ii) for m, sqrt(Sigma_ii Sigma_jj) for
/// Sigma_ij, |theta_p| for theta.
double max_relative_change(const FitParams& prev, const FitParams& next, const ZeroPattern& pattern);

/// Runs the outer loop until the largest relative change stays below `tol`
/// over the trailing `window` iterations or `max_iter` is reached. Reaching
/// the cap is reported through `converged`, not thrown. Any module error
/// aborts the fit with the iteration number in the message.
FitReport fit(const NlmeModel& model, const Dataset& data, const ZeroPattern& pattern,
              const FitParams& init, const FitConfig& config, EStep* estep = nullptr);

}  // namespace icfem
