#include "icfem/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/gamma.hpp>

#include "icfem/dataset.hpp"
#include "icfem/rng.hpp"

namespace icfem {

LikelihoodEstimate loglik_is(const NlmeModel& model, const Dataset& data, const FitParams& params,
                             int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw Error(ErrorCode::ValueOutOfRange, "loglik_is: n_samples must be >= 1");
  check_balanced(data, model.n_obs());
  const Index q = model.q();
  const MatrixXd chol = params.sigma.lower_factor();
  const double log_s = std::log(static_cast<double>(n_samples));

  // Sum in id order so the result does not depend on dataset order.
  std::vector<const Individual*> order;
  for (const auto& ind : data.individuals) order.push_back(&ind);
  std::stable_sort(order.begin(), order.end(), [](const Individual* a, const Individual* b) { return a->id < b->id; });

  LikelihoodEstimate out;
  out.n_samples = n_samples;
  out.seed = seed;
  double var_sum = 0.0;
  std::vector<double> logw(static_cast<std::size_t>(n_samples));
  for (const Individual* ind : order) {
    Rng rng = make_rng(derive_seed(seed, hash_id(ind->id)));
    double max_lw = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < n_samples; ++s) {
      const VectorXd x = params.m + chol * standard_normal(rng, q);
      double lw = -std::numeric_limits<double>::infinity();
      try {
        lw = model.log_cond_density(ind->y, x, params.theta, ind->design);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DomainError) throw;
      }
      if (std::isnan(lw)) lw = -std::numeric_limits<double>::infinity();
      logw[static_cast<std::size_t>(s)] = lw;
      max_lw = std::max(max_lw, lw);
    }
    if (!std::isfinite(max_lw)) {
      throw Error(ErrorCode::DegenerateWeight, "loglik_is: all importance weights vanish for individual '" + ind->id + "'");
    }
    // Log-sum-exp on weights scaled by their maximum.
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double lw : logw) {
      const double w = std::exp(lw - max_lw);
      sum += w;
      sum_sq += w * w;
    }
    const double mean = sum / n_samples;
    const double var = std::max(sum_sq / n_samples - mean * mean, 0.0);
    out.loglik += max_lw + std::log(sum) - log_s;
    var_sum += var / (n_samples * mean * mean);
  }
  out.mc_se = std::sqrt(var_sum);
  return out;
}

// ---------------------------------------------------------------------------

ParameterLayout::ParameterLayout(Index q, const ZeroPattern& pattern, Index theta_dim)
    : q_(q), theta_dim_(theta_dim) {
  validate_pattern(pattern, q);
  for (Index i = 0; i < q; ++i) names_.push_back("m" + std::to_string(i + 1));
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j <= i; ++j) {
      if (i != j && pattern.contains(i, j)) continue;
      sigma_entries_.push_back({i, j});
      names_.push_back("Sigma" + std::to_string(i + 1) + std::to_string(j + 1));
    }
  }
  for (Index p = 0; p < theta_dim; ++p) names_.push_back(theta_dim == 1 ? "theta" : "theta" + std::to_string(p + 1));
}

VectorXd ParameterLayout::pack(const FitParams& params) const {
  VectorXd out(size());
  Index k = 0;
  for (Index i = 0; i < q_; ++i) out(k++) = params.m(i);
  for (const auto& e : sigma_entries_) out(k++) = params.sigma(e.row, e.col);
  for (Index p = 0; p < theta_dim_; ++p) out(k++) = params.theta(p);
  return out;
}

FitParams ParameterLayout::unpack(const VectorXd& values) const {
  if (values.size() != size()) throw Error(ErrorCode::DimensionMismatch, "ParameterLayout::unpack: length");
  FitParams out;
  Index k = 0;
  out.m = values.head(q_);
  k = q_;
  MatrixXd sigma = MatrixXd::Zero(q_, q_);
  for (const auto& e : sigma_entries_) {
    sigma(e.row, e.col) = values(k);
    sigma(e.col, e.row) = values(k);
    ++k;
  }
  out.sigma = SpdMatrix(sigma);
  out.theta = values.segment(k, theta_dim_);
  return out;
}

// ---------------------------------------------------------------------------

StandardErrors numerical_standard_errors(const std::function<double(const VectorXd&)>& neg_loglik,
                                         const VectorXd& point, const VectorXd& steps) {
  const Index p = point.size();
  if (steps.size() != p) throw Error(ErrorCode::DimensionMismatch, "numerical_standard_errors: steps");
  StandardErrors out;
  out.values = point;
  out.se.assign(static_cast<std::size_t>(p), std::nullopt);
  out.hessian = MatrixXd::Zero(p, p);

  auto eval = [&](Index i, double si, Index j, double sj) {
    VectorXd x = point;
    x(i) += si * steps(i);
    x(j) += sj * steps(j);
    return neg_loglik(x);
  };
  const double f0 = neg_loglik(point);
  for (Index i = 0; i < p; ++i) {
    const double hi = steps(i);
    out.hessian(i, i) = (eval(i, 1, i, 0) - 2.0 * f0 + eval(i, -1, i, 0)) / (hi * hi);
    for (Index j = 0; j < i; ++j) {
      const double v = (eval(i, 1, j, 1) - eval(i, 1, j, -1) - eval(i, -1, j, 1) + eval(i, -1, j, -1)) /
                       (4.0 * hi * steps(j));
      out.hessian(i, j) = v;
      out.hessian(j, i) = v;
    }
  }

  // Coordinates with any non-finite Hessian entry are dropped before inversion.
  std::vector<Index> usable;
  for (Index i = 0; i < p; ++i) {
    if (std::isfinite(f0) && out.hessian.row(i).allFinite()) usable.push_back(i);
  }
  const Index n = static_cast<Index>(usable.size());
  if (n == 0) return out;
  MatrixXd h(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) h(r, c) = out.hessian(usable[r], usable[c]);
  }
  out.hessian_pd = n == p && is_positive_definite(h);
  Eigen::FullPivLU<MatrixXd> lu(h);
  if (!lu.isInvertible()) return out;
  const MatrixXd inv = lu.inverse();
  for (Index r = 0; r < n; ++r) {
    const double v = inv(r, r);
    if (v > 0.0 && std::isfinite(v)) out.se[static_cast<std::size_t>(usable[r])] = std::sqrt(v);
  }
  return out;
}

StandardErrors fisher_se(const NlmeModel& model, const Dataset& data, const FitParams& params_hat,
                         const ZeroPattern& pattern, const FisherOptions& options) {
  const ParameterLayout layout(model.q(), pattern, model.theta_dim());
  const VectorXd point = layout.pack(params_hat);
  VectorXd steps = options.steps;
  if (steps.size() == 0) {
    steps = options.relative_step * point.cwiseAbs().cwiseMax(options.step_floor);
  }
  auto neg_loglik = [&](const VectorXd& v) {
    try {
      const FitParams params = layout.unpack(v);
      if (!model.theta_valid(params.theta)) return std::numeric_limits<double>::quiet_NaN();
      return -loglik_is(model, data, params, options.n_samples, options.seed).loglik;
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  StandardErrors out = numerical_standard_errors(neg_loglik, point, steps);
  out.names = layout.names();
  return out;
}

// ---------------------------------------------------------------------------

double chi_square_survival(double x, int df) {
  if (df < 1) throw Error(ErrorCode::ValueOutOfRange, "chi_square_survival: df must be >= 1");
  if (!(x > 0.0)) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

LrTestResult lr_test(double loglik_h0, double loglik_h1, const ZeroPattern& pattern) {
  LrTestResult out;
  out.df = static_cast<int>(pattern.size());
  const double raw = 2.0 * (loglik_h1 - loglik_h0);
  out.clipped = raw < 0.0;
  out.stat = std::max(raw, 0.0);
  out.p_value = out.df == 0 ? 1.0 : chi_square_survival(out.stat, out.df);
  return out;
}

}  // namespace icfem
