#pragma once

// Nonlinear mixed effects observation model
//
//   Y_i = F(X_i) + g(X_i, theta) eps_i,   X_i ~ N(m, Sigma),  eps_i ~ N(0, I)
//
// A model supplies the mean function F, the residual scale g and the
// model-specific part of the M-step (the theta update); the estimation
// engine owns everything else.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "icfem/covariance.hpp"

namespace icfem {

struct Individual {
  std::string id;
  VectorXd y;
  /// Per-observation design values (doses for the cortisol model).
  VectorXd design;
};

/// Balanced panel: every individual has the same number of observations.
struct Dataset {
  std::vector<Individual> individuals;

  std::size_t size() const noexcept { return individuals.size(); }
  bool empty() const noexcept { return individuals.empty(); }
  Index n_obs() const { return individuals.empty() ? 0 : individuals.front().y.size(); }
};

class NlmeModel {
 public:
  virtual ~NlmeModel() = default;

  virtual std::string_view name() const = 0;
  /// Random-effect dimension.
  virtual Index q() const = 0;
  /// Observations per individual.
  virtual Index n_obs() const = 0;
  virtual Index theta_dim() const { return 1; }
  virtual VectorXd default_design() const = 0;

  /// F(x) at every design point. Throws Error{DomainError} outside the domain.
  virtual VectorXd mean(const VectorXd& x, const VectorXd& design) const = 0;
  VectorXd mean(const VectorXd& x) const { return mean(x, default_design()); }

  /// Lower-triangular residual scale g(x, theta).
  virtual MatrixXd scale(const VectorXd& x, const VectorXd& theta, const VectorXd& design) const = 0;

  /// log of (1/|det g|) phi(g^{-1}(y - F(x))). The default evaluates the
  /// triangular g returned by `scale`; models with diagonal g override it.
  virtual double log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                                  const VectorXd& design) const;

  /// Whether a simulated random effect keeps the model well defined.
  virtual bool admissible(const VectorXd& /*x*/, const VectorXd& /*design*/) const { return true; }

  /// Per-state statistic averaged by the E-step for the theta update.
  virtual Index theta_moment_dim() const { return 1; }
  virtual VectorXd theta_moment(const VectorXd& y, const VectorXd& x, const VectorXd& design) const = 0;
  /// M-step for theta from sum_i E[theta_moment | Y_i].
  virtual VectorXd update_theta(const VectorXd& summed_moments, std::size_t n_individuals) const = 0;

  virtual bool theta_valid(const VectorXd& theta) const;
};

/// Sigmoid Emax dose-response model with constant coefficient of variation:
///   F_j(x) = x1 + x2 d_j^x3 / (x4^x3 + d_j^x3),   g = sigma diag(F(x)),
/// theta = sigma^2.
class CortisolModel final : public NlmeModel {
 public:
  static const std::vector<double>& default_doses();

  CortisolModel() : CortisolModel(default_doses()) {}
  explicit CortisolModel(std::vector<double> doses);

  std::string_view name() const override { return "cortisol"; }
  Index q() const override { return 4; }
  Index n_obs() const override { return static_cast<Index>(doses_.size()); }
  VectorXd default_design() const override;

  VectorXd mean(const VectorXd& x, const VectorXd& design) const override;
  using NlmeModel::mean;
  MatrixXd scale(const VectorXd& x, const VectorXd& theta, const VectorXd& design) const override;
  double log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                          const VectorXd& design) const override;
  bool admissible(const VectorXd& x, const VectorXd& design) const override;

  /// sum_j ((y_j - F_j(x)) / F_j(x))^2
  VectorXd theta_moment(const VectorXd& y, const VectorXd& x, const VectorXd& design) const override;
  /// Per-observation squared coefficient of variation: sum / (N n_obs).
  VectorXd update_theta(const VectorXd& summed_moments, std::size_t n_individuals) const override;

  const std::vector<double>& doses() const noexcept { return doses_; }

 private:
  std::vector<double> doses_;
};

/// Closed-form validation model: F(x) = x tiled `replicates` times and
/// g = sigma I, so Y ~ N(K m, K Sigma K' + sigma^2 I) with K = [I; ...; I].
/// With one replicate, Sigma and sigma^2 are only identified through their sum.
class LinearGaussianModel final : public NlmeModel {
 public:
  explicit LinearGaussianModel(Index q, Index replicates = 1);

  std::string_view name() const override { return "linear"; }
  Index q() const override { return q_; }
  Index n_obs() const override { return q_ * replicates_; }
  Index replicates() const noexcept { return replicates_; }
  VectorXd default_design() const override;
  /// The design matrix K.
  MatrixXd design_matrix() const;

  VectorXd mean(const VectorXd& x, const VectorXd& design) const override;
  using NlmeModel::mean;
  MatrixXd scale(const VectorXd& x, const VectorXd& theta, const VectorXd& design) const override;
  double log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                          const VectorXd& design) const override;

  VectorXd theta_moment(const VectorXd& y, const VectorXd& x, const VectorXd& design) const override;
  VectorXd update_theta(const VectorXd& summed_moments, std::size_t n_individuals) const override;

 private:
  Index q_;
  Index replicates_;
};

/// Multivariate normal log-density of N(m, sigma) at x.
double log_prior_density(const VectorXd& x, const VectorXd& m, const SpdMatrix& sigma);

struct SimulatedIndividual {
  VectorXd x;
  VectorXd y;
};

/// Draws X ~ N(m, Sigma) and Y = F(X) + g(X, theta) eps. Draws that the
/// model rejects (`admissible` false or F outside its domain) are redrawn;
/// throws Error{DegenerateDraw} after 100 rejections.
SimulatedIndividual simulate_individual(const NlmeModel& model, const VectorXd& m,
                                        const SpdMatrix& sigma, const VectorXd& theta,
                                        std::uint64_t seed, const VectorXd& design);
SimulatedIndividual simulate_individual(const NlmeModel& model, const VectorXd& m,
                                        const SpdMatrix& sigma, const VectorXd& theta,
                                        std::uint64_t seed);

/// N individuals with ids "1".."N", each drawn from its own id-keyed stream.
Dataset simulate_dataset(const NlmeModel& model, const VectorXd& m, const SpdMatrix& sigma,
                         const VectorXd& theta, std::size_t n_individuals, std::uint64_t seed);

/// Builds a model by name ("cortisol" or "linear").
std::unique_ptr<NlmeModel> make_model(std::string_view name, Index q = 0, Index replicates = 1,
                                      const std::vector<double>& doses = {});

}  // namespace icfem
