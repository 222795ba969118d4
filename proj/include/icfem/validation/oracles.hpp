#pragma once

// Independent reference computations used to check the estimators. None of
// these call into the code paths they are used to verify: determinants and
// inverses go through plain Gaussian elimination, the constrained MLE through
// a derivative-free search, and the linear-Gaussian model through its
// conjugate closed forms.

#include <functional>

#include "icfem/mcem.hpp"
#include "icfem/rng.hpp"

namespace icfem::validation {

struct NelderMeadOptions {
  int max_evals = 400000;
  /// Stop a run when the simplex spread in f drops below this.
  double ftol = 1e-15;
  /// Restart from the best vertex until a run improves f by less than this.
  double restart_tol = 1e-14;
  int max_restarts = 30;
};

struct NelderMeadResult {
  VectorXd x;
  double f = 0.0;
  int evals = 0;
};

/// Adaptive Nelder-Mead with restarts. `f` may return +inf to reject points.
NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                             const VectorXd& step, const NelderMeadOptions& options = {});

/// Determinant by Gaussian elimination with partial pivoting.
double determinant_by_elimination(MatrixXd m);

/// Inverse by Gauss-Jordan elimination.
MatrixXd inverse_by_elimination(MatrixXd m);

/// Sylvester's criterion on the leading principal minors.
bool positive_definite_by_minors(const MatrixXd& m);

/// tr(X Sigma^{-1}) + log det Sigma through elimination; +inf when Sigma is
/// not positive definite.
double objective_by_elimination(const MatrixXd& sigma, const MatrixXd& xtilde);

struct ConstrainedMle {
  MatrixXd sigma;
  double objective = 0.0;
};

/// Minimises tr(X Sigma^{-1}) + log det Sigma over the unconstrained
/// entries of Sigma by Nelder-Mead, starting from `start`.
ConstrainedMle brute_force_constrained_mle(const MatrixXd& xtilde, const ZeroPattern& pattern,
                                           const MatrixXd& start);

/// Column update computed by Householder least squares on pseudo
/// observations T (rows) with T'T / N = X~: regress V on the free
/// coordinates of A^{-1}U and take the residual mean square.
MatrixXd column_update_by_least_squares(const MatrixXd& sigma, const MatrixXd& xtilde, Index j,
                                        const ZeroPattern& pattern);

struct Posterior {
  VectorXd mean;
  MatrixXd cov;
};

/// Conjugate posterior of X given Y = K X + sigma eps in the linear model.
Posterior linear_gaussian_posterior(const LinearGaussianModel& model, const VectorXd& y,
                                    const VectorXd& m, const MatrixXd& sigma, double sigma2);

/// Closed-form log density of Y ~ N(K m, K Sigma K' + sigma^2 I), summed
/// over individuals.
double linear_gaussian_loglik(const LinearGaussianModel& model, const Dataset& data, const VectorXd& m,
                              const MatrixXd& sigma, double sigma2);

/// E-step with exact conditional moments for the linear model.
class ExactLinearGaussianEStep final : public EStep {
 public:
  explicit ExactLinearGaussianEStep(const LinearGaussianModel& model) : model_(model) {}
  EStepOutput run(const NlmeModel& model, const Dataset& data, const FitParams& params,
                  int iteration) override;

 private:
  const LinearGaussianModel& model_;
};

/// Random symmetric positive definite matrix G G' / q + floor I.
MatrixXd random_spd(Rng& rng, Index q, double floor = 0.5);

}  // namespace icfem::validation
