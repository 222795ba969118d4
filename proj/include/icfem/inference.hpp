#pragma once

// Observed-data likelihood by importance sampling, finite-difference
// standard errors and likelihood-ratio tests of a zero pattern.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icfem/mcem.hpp"

namespace icfem {

struct LikelihoodEstimate {
  double loglik = 0.0;
  /// Delta-method Monte-Carlo standard error of `loglik`.
  double mc_se = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;
};

/// log L(m, Sigma, theta) = sum_i log E_{x ~ N(m, Sigma)} p(y_i | x), each
/// expectation estimated from `n_samples` prior draws. Streams are keyed by
/// (seed, individual id) so identical seeds give identical draws (common
/// random numbers). Throws Error{DegenerateWeight} when every weight of an
/// individual underflows or falls outside the model domain.
LikelihoodEstimate loglik_is(const NlmeModel& model, const Dataset& data, const FitParams& params,
                             int n_samples, std::uint64_t seed);

/// Free parameters of a fit: m, the unconstrained lower-triangle entries of
/// Sigma (row-major, diagonal included), theta.
class ParameterLayout {
 public:
  ParameterLayout(Index q, const ZeroPattern& pattern, Index theta_dim);

  Index size() const noexcept { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  VectorXd pack(const FitParams& params) const;
  /// Throws Error{NotPositiveDefinite} when the Sigma block is not PD.
  FitParams unpack(const VectorXd& values) const;

 private:
  Index q_;
  Index theta_dim_;
  std::vector<IndexPair> sigma_entries_;  // (row >= col)
  std::vector<std::string> names_;
};

struct StandardErrors {
  std::vector<std::string> names;
  VectorXd values;
  /// Absent where the Hessian could not be evaluated or inverted.
  std::vector<std::optional<double>> se;
  MatrixXd hessian;
  bool hessian_pd = false;
};

/// Central finite-difference Hessian of `neg_loglik` at `point` with the
/// given per-coordinate steps; SEs are sqrt(diag(H^{-1})). A NaN return from
/// `neg_loglik` marks the coordinates it was evaluated for as unusable.
StandardErrors numerical_standard_errors(const std::function<double(const VectorXd&)>& neg_loglik,
                                         const VectorXd& point, const VectorXd& steps);

struct FisherOptions {
  int n_samples = 2000;
  std::uint64_t seed = 7;
  double relative_step = 1e-3;
  double step_floor = 1e-6;
  /// Overrides the default steps 1e-3 * max(|p|, 1e-6) when non-empty.
  VectorXd steps;
};

/// Standard errors of the free parameters from the numerical Hessian of
/// the importance-sampled log-likelihood, using the same seed for every
/// stencil point. Pattern-constrained entries are not parameters and carry
/// no SE. `hessian_pd` is false when the Hessian is not positive definite.
StandardErrors fisher_se(const NlmeModel& model, const Dataset& data, const FitParams& params_hat,
                         const ZeroPattern& pattern, const FisherOptions& options = {});

struct LrTestResult {
  double stat = 0.0;
  int df = 0;
  double p_value = 1.0;
  /// loglik_h1 fell below loglik_h0 (Monte-Carlo noise); stat was clipped.
  bool clipped = false;
};

/// Upper tail of the chi-square distribution.
double chi_square_survival(double x, int df);

/// stat = max(2 (loglik_h1 - loglik_h0), 0), df = |pattern|.
LrTestResult lr_test(double loglik_h0, double loglik_h1, const ZeroPattern& pattern);

}  // namespace icfem
