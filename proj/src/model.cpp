#include "icfem/model.hpp"

#include <cmath>

#include "icfem/rng.hpp"

namespace icfem {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

void check_size(const VectorXd& v, Index n, const char* what) {
  if (v.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": expected length " +
                                                  std::to_string(n) + ", got " +
                                                  std::to_string(v.size()));
  }
}

double positive_variance(const VectorXd& theta) {
  if (theta.size() < 1 || !(theta(0) > 0.0) || !std::isfinite(theta(0))) {
    throw Error(ErrorCode::DomainError, "residual variance must be positive and finite");
  }
  return theta(0);
}

}  // namespace

double NlmeModel::log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                                   const VectorXd& design) const {
  const VectorXd f = mean(x, design);
  const MatrixXd g = scale(x, theta, design);
  double log_abs_det = 0.0;
  for (Index i = 0; i < g.rows(); ++i) {
    if (g(i, i) == 0.0) throw Error(ErrorCode::DomainError, "singular residual scale");
    log_abs_det += std::log(std::abs(g(i, i)));
  }
  const VectorXd r = g.triangularView<Eigen::Lower>().solve(y - f);
  return -static_cast<double>(y.size()) * kHalfLog2Pi - log_abs_det - 0.5 * r.squaredNorm();
}

bool NlmeModel::theta_valid(const VectorXd& theta) const {
  return theta.size() == theta_dim() && theta.allFinite() && (theta.array() > 0.0).all();
}

// ---------------------------------------------------------------------------
// Cortisol

const std::vector<double>& CortisolModel::default_doses() {
  static const std::vector<double> doses{0.005, 0.01, 0.1, 0.5, 1.0, 2.0, 10.0};
  return doses;
}

CortisolModel::CortisolModel(std::vector<double> doses) : doses_(std::move(doses)) {
  if (doses_.empty()) throw Error(ErrorCode::ValueOutOfRange, "cortisol model needs at least one dose");
  for (double d : doses_) {
    if (!(d > 0.0)) throw Error(ErrorCode::ValueOutOfRange, "doses must be positive");
  }
}

VectorXd CortisolModel::default_design() const {
  return Eigen::Map<const VectorXd>(doses_.data(), static_cast<Index>(doses_.size()));
}

VectorXd CortisolModel::mean(const VectorXd& x, const VectorXd& design) const {
  check_size(x, 4, "cortisol mean: x");
  check_size(design, n_obs(), "cortisol mean: design");
  if (!(x(3) > 0.0)) throw Error(ErrorCode::DomainError, "cortisol mean: x4 must be positive");
  VectorXd f(design.size());
  for (Index j = 0; j < design.size(); ++j) {
    // d^a / (c^a + d^a) written as 1 / (1 + (c/d)^a).
    const double ratio = std::pow(x(3) / design(j), x(2));
    f(j) = x(0) + x(1) / (1.0 + ratio);
  }
  if (!f.allFinite()) throw Error(ErrorCode::DomainError, "cortisol mean: non-finite value");
  return f;
}

MatrixXd CortisolModel::scale(const VectorXd& x, const VectorXd& theta, const VectorXd& design) const {
  const double sigma = std::sqrt(std::max(theta(0), 0.0));
  return (sigma * mean(x, design)).asDiagonal();
}

double CortisolModel::log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                                       const VectorXd& design) const {
  const double var = positive_variance(theta);
  const VectorXd f = mean(x, design);
  const double log_sigma = 0.5 * std::log(var);
  double out = 0.0;
  for (Index j = 0; j < f.size(); ++j) {
    if (f(j) == 0.0) throw Error(ErrorCode::DomainError, "cortisol: F_j(x) = 0 makes g singular");
    const double r = (y(j) - f(j)) / f(j);
    out += -kHalfLog2Pi - log_sigma - std::log(std::abs(f(j))) - 0.5 * r * r / var;
  }
  return out;
}

bool CortisolModel::admissible(const VectorXd& x, const VectorXd& design) const {
  if (!(x(3) > 0.0)) return false;
  try {
    return (mean(x, design).array() > 0.0).all();
  } catch (const Error&) {
    return false;
  }
}

VectorXd CortisolModel::theta_moment(const VectorXd& y, const VectorXd& x, const VectorXd& design) const {
  const VectorXd f = mean(x, design);
  VectorXd out(1);
  out(0) = ((y - f).array() / f.array()).square().sum();
  return out;
}

VectorXd CortisolModel::update_theta(const VectorXd& summed_moments, std::size_t n_individuals) const {
  VectorXd out(1);
  out(0) = summed_moments(0) / (static_cast<double>(n_individuals) * static_cast<double>(n_obs()));
  return out;
}

// ---------------------------------------------------------------------------
// Linear-Gaussian

LinearGaussianModel::LinearGaussianModel(Index q, Index replicates) : q_(q), replicates_(replicates) {
  if (q < 1 || replicates < 1) throw Error(ErrorCode::ValueOutOfRange, "linear model: q and replicates must be >= 1");
}

VectorXd LinearGaussianModel::default_design() const {
  VectorXd d(n_obs());
  for (Index j = 0; j < n_obs(); ++j) d(j) = static_cast<double>(j % q_ + 1);
  return d;
}

MatrixXd LinearGaussianModel::design_matrix() const {
  MatrixXd k = MatrixXd::Zero(n_obs(), q_);
  for (Index j = 0; j < n_obs(); ++j) k(j, j % q_) = 1.0;
  return k;
}

VectorXd LinearGaussianModel::mean(const VectorXd& x, const VectorXd& /*design*/) const {
  check_size(x, q_, "linear mean: x");
  VectorXd f(n_obs());
  for (Index j = 0; j < n_obs(); ++j) f(j) = x(j % q_);
  return f;
}

MatrixXd LinearGaussianModel::scale(const VectorXd& /*x*/, const VectorXd& theta, const VectorXd& /*design*/) const {
  return std::sqrt(std::max(theta(0), 0.0)) * MatrixXd::Identity(n_obs(), n_obs());
}

double LinearGaussianModel::log_cond_density(const VectorXd& y, const VectorXd& x, const VectorXd& theta,
                                             const VectorXd& design) const {
  const double var = positive_variance(theta);
  const double n = static_cast<double>(n_obs());
  return -n * kHalfLog2Pi - 0.5 * n * std::log(var) - 0.5 * (y - mean(x, design)).squaredNorm() / var;
}

VectorXd LinearGaussianModel::theta_moment(const VectorXd& y, const VectorXd& x, const VectorXd& design) const {
  VectorXd out(1);
  out(0) = (y - mean(x, design)).squaredNorm();
  return out;
}

VectorXd LinearGaussianModel::update_theta(const VectorXd& summed_moments, std::size_t n_individuals) const {
  VectorXd out(1);
  out(0) = summed_moments(0) / (static_cast<double>(n_individuals) * static_cast<double>(n_obs()));
  return out;
}

// ---------------------------------------------------------------------------

double log_prior_density(const VectorXd& x, const VectorXd& m, const SpdMatrix& sigma) {
  check_size(x, sigma.dim(), "log_prior_density: x");
  check_size(m, sigma.dim(), "log_prior_density: m");
  const VectorXd z = sigma.llt().matrixL().solve(x - m);
  return -static_cast<double>(sigma.dim()) * kHalfLog2Pi - 0.5 * sigma.log_det() - 0.5 * z.squaredNorm();
}

SimulatedIndividual simulate_individual(const NlmeModel& model, const VectorXd& m,
                                        const SpdMatrix& sigma, const VectorXd& theta,
                                        std::uint64_t seed, const VectorXd& design) {
  check_size(m, model.q(), "simulate: m");
  if (sigma.dim() != model.q()) throw Error(ErrorCode::DimensionMismatch, "simulate: Sigma order");
  Rng rng = make_rng(seed);
  const MatrixXd l = sigma.lower_factor();
  constexpr int kMaxDraws = 100;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    VectorXd x = m + l * standard_normal(rng, model.q());
    if (!model.admissible(x, design)) continue;
    VectorXd f;
    try {
      f = model.mean(x, design);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DomainError) continue;
      throw;
    }
    const VectorXd eps = standard_normal(rng, model.n_obs());
    VectorXd y = f + model.scale(x, theta, design) * eps;
    return {std::move(x), std::move(y)};
  }
  throw Error(ErrorCode::DegenerateDraw, "simulate: 100 consecutive random effects rejected by the model");
}

SimulatedIndividual simulate_individual(const NlmeModel& model, const VectorXd& m,
                                        const SpdMatrix& sigma, const VectorXd& theta,
                                        std::uint64_t seed) {
  return simulate_individual(model, m, sigma, theta, seed, model.default_design());
}

Dataset simulate_dataset(const NlmeModel& model, const VectorXd& m, const SpdMatrix& sigma,
                         const VectorXd& theta, std::size_t n_individuals, std::uint64_t seed) {
  Dataset data;
  data.individuals.reserve(n_individuals);
  const VectorXd design = model.default_design();
  for (std::size_t i = 0; i < n_individuals; ++i) {
    std::string id = std::to_string(i + 1);
    auto draw = simulate_individual(model, m, sigma, theta, derive_seed(seed, hash_id(id)), design);
    data.individuals.push_back({std::move(id), std::move(draw.y), design});
  }
  return data;
}

std::unique_ptr<NlmeModel> make_model(std::string_view name, Index q, Index replicates,
                                      const std::vector<double>& doses) {
  if (name == "cortisol") {
    return doses.empty() ? std::make_unique<CortisolModel>() : std::make_unique<CortisolModel>(doses);
  }
  if (name == "linear") return std::make_unique<LinearGaussianModel>(q, replicates);
  throw Error(ErrorCode::ValueOutOfRange, "unknown model '" + std::string(name) + "'");
}

}  // namespace icfem
