#include "icfem/validation/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace icfem::validation {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;

struct Vertex {
  VectorXd x;
  double f;
};

// One adaptive Nelder-Mead run from an axis-aligned simplex.
NelderMeadResult nelder_mead_run(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                                 const VectorXd& step, const NelderMeadOptions& opt, int budget) {
  const Index n = x0.size();
  const double dn = static_cast<double>(n);
  const double alpha = 1.0;
  const double beta = 1.0 + 2.0 / dn;
  const double gamma = 0.75 - 0.5 / dn;
  const double delta = 1.0 - 1.0 / dn;
  int evals = 0;
  auto eval = [&](const VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
  };

  std::vector<Vertex> s;
  s.push_back({x0, eval(x0)});
  for (Index i = 0; i < n; ++i) {
    VectorXd x = x0;
    x(i) += step(i);
    double fx = eval(x);
    if (!std::isfinite(fx)) {
      x(i) = x0(i) - step(i);
      fx = eval(x);
    }
    s.push_back({x, fx});
  }
  auto by_f = [](const Vertex& a, const Vertex& b) { return a.f < b.f; };

  while (evals < budget) {
    std::sort(s.begin(), s.end(), by_f);
    const double spread = s.back().f - s.front().f;
    double size = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) size = std::max(size, (s[i].x - s[0].x).lpNorm<Eigen::Infinity>());
    if (std::isfinite(spread) && spread <= opt.ftol * (1.0 + std::abs(s.front().f)) && size < 1e-9) break;
    if (size < 1e-15) break;

    VectorXd centroid = VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i) centroid += s[static_cast<std::size_t>(i)].x;
    centroid /= dn;
    Vertex& worst = s.back();
    const Vertex& second = s[s.size() - 2];

    const VectorXd xr = centroid + alpha * (centroid - worst.x);
    const double fr = eval(xr);
    if (fr < s.front().f) {
      const VectorXd xe = centroid + beta * (xr - centroid);
      const double fe = eval(xe);
      worst = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
      continue;
    }
    if (fr < second.f) {
      worst = {xr, fr};
      continue;
    }
    const bool outside = fr < worst.f;
    const VectorXd xc = outside ? VectorXd(centroid + gamma * (xr - centroid))
                                : VectorXd(centroid - gamma * (centroid - worst.x));
    const double fc = eval(xc);
    if (fc < (outside ? fr : worst.f)) {
      worst = {xc, fc};
      continue;
    }
    for (std::size_t i = 1; i < s.size(); ++i) {
      s[i].x = s[0].x + delta * (s[i].x - s[0].x);
      s[i].f = eval(s[i].x);
    }
  }
  std::sort(s.begin(), s.end(), by_f);
  return {s.front().x, s.front().f, evals};
}

// Entries (i, j) with i >= j that are free parameters of the constrained MLE.
std::vector<std::pair<Index, Index>> free_entries(const ZeroPattern& pattern, Index q) {
  std::vector<std::pair<Index, Index>> out;
  for (Index i = 0; i < q; ++i) {
    for (Index j = 0; j <= i; ++j) {
      if (i == j || !pattern.contains(i, j)) out.emplace_back(i, j);
    }
  }
  return out;
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                             const VectorXd& step, const NelderMeadOptions& options) {
  NelderMeadResult best{x0, f(x0), 1};
  VectorXd scale = step;
  for (int r = 0; r <= options.max_restarts && best.evals < options.max_evals; ++r) {
    const NelderMeadResult run = nelder_mead_run(f, best.x, scale, options, options.max_evals - best.evals);
    const double improvement = best.f - run.f;
    best.evals += run.evals;
    if (run.f < best.f) {
      best.x = run.x;
      best.f = run.f;
    }
    if (r > 0 && improvement < options.restart_tol * (1.0 + std::abs(best.f))) break;
    // Later restarts search a shrinking neighbourhood of the incumbent.
    scale *= 0.5;
  }
  return best;
}

double determinant_by_elimination(MatrixXd m) {
  const Index n = m.rows();
  double det = 1.0;
  for (Index k = 0; k < n; ++k) {
    Index pivot = k;
    for (Index r = k + 1; r < n; ++r) {
      if (std::abs(m(r, k)) > std::abs(m(pivot, k))) pivot = r;
    }
    if (m(pivot, k) == 0.0) return 0.0;
    if (pivot != k) {
      m.row(k).swap(m.row(pivot));
      det = -det;
    }
    det *= m(k, k);
    for (Index r = k + 1; r < n; ++r) {
      const double factor = m(r, k) / m(k, k);
      for (Index c = k; c < n; ++c) m(r, c) -= factor * m(k, c);
    }
  }
  return det;
}

MatrixXd inverse_by_elimination(MatrixXd m) {
  const Index n = m.rows();
  MatrixXd inv = MatrixXd::Identity(n, n);
  for (Index k = 0; k < n; ++k) {
    Index pivot = k;
    for (Index r = k + 1; r < n; ++r) {
      if (std::abs(m(r, k)) > std::abs(m(pivot, k))) pivot = r;
    }
    if (m(pivot, k) == 0.0) throw Error(ErrorCode::NotPositiveDefinite, "singular matrix");
    m.row(k).swap(m.row(pivot));
    inv.row(k).swap(inv.row(pivot));
    const double p = m(k, k);
    m.row(k) /= p;
    inv.row(k) /= p;
    for (Index r = 0; r < n; ++r) {
      if (r == k) continue;
      const double factor = m(r, k);
      if (factor == 0.0) continue;
      m.row(r) -= factor * m.row(k);
      inv.row(r) -= factor * inv.row(k);
    }
  }
  return inv;
}

bool positive_definite_by_minors(const MatrixXd& m) {
  for (Index k = 1; k <= m.rows(); ++k) {
    if (!(determinant_by_elimination(m.topLeftCorner(k, k)) > 0.0)) return false;
  }
  return true;
}

double objective_by_elimination(const MatrixXd& sigma, const MatrixXd& xtilde) {
  if (!sigma.allFinite() || !positive_definite_by_minors(sigma)) return kInf;
  const double det = determinant_by_elimination(sigma);
  return (xtilde * inverse_by_elimination(sigma)).trace() + std::log(det);
}

ConstrainedMle brute_force_constrained_mle(const MatrixXd& xtilde, const ZeroPattern& pattern,
                                           const MatrixXd& start) {
  const Index q = xtilde.rows();
  const auto entries = free_entries(pattern, q);
  const auto n = static_cast<Index>(entries.size());
  auto build = [&](const VectorXd& v) {
    MatrixXd s = MatrixXd::Zero(q, q);
    for (Index k = 0; k < n; ++k) {
      const auto [i, j] = entries[static_cast<std::size_t>(k)];
      s(i, j) = v(k);
      s(j, i) = v(k);
    }
    return s;
  };
  VectorXd x0(n), step(n);
  for (Index k = 0; k < n; ++k) {
    const auto [i, j] = entries[static_cast<std::size_t>(k)];
    x0(k) = start(i, j);
    step(k) = 0.05 * std::sqrt(xtilde(i, i) * xtilde(j, j));
  }
  const auto result = nelder_mead([&](const VectorXd& v) { return objective_by_elimination(build(v), xtilde); },
                                  x0, step);
  return {build(result.x), result.f};
}

MatrixXd column_update_by_least_squares(const MatrixXd& sigma, const MatrixXd& xtilde, Index j,
                                        const ZeroPattern& pattern) {
  const Index q = sigma.rows();
  // Pseudo observations: rows of sqrt(q) L' satisfy T'T / q = X~.
  const Eigen::LLT<MatrixXd> chol(xtilde);
  const MatrixXd t = std::sqrt(static_cast<double>(q)) * MatrixXd(chol.matrixL()).transpose();
  const double rows = static_cast<double>(t.rows());

  std::vector<Index> others;
  for (Index k = 0; k < q; ++k) {
    if (k != j) others.push_back(k);
  }
  const auto p = static_cast<Index>(others.size());
  MatrixXd a(p, p);
  MatrixXd u(t.rows(), p);
  for (Index r = 0; r < p; ++r) {
    u.col(r) = t.col(others[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < p; ++c) a(r, c) = sigma(others[static_cast<std::size_t>(r)], others[static_cast<std::size_t>(c)]);
  }
  const VectorXd v = t.col(j);
  const MatrixXd a_inv = inverse_by_elimination(a);
  const MatrixXd w = u * a_inv;

  std::vector<Index> free_pos;
  for (Index r = 0; r < p; ++r) {
    if (!pattern.contains(others[static_cast<std::size_t>(r)], j)) free_pos.push_back(r);
  }
  VectorXd b = VectorXd::Zero(p);
  VectorXd resid = v;
  if (!free_pos.empty()) {
    MatrixXd wf(t.rows(), static_cast<Index>(free_pos.size()));
    for (std::size_t c = 0; c < free_pos.size(); ++c) wf.col(static_cast<Index>(c)) = w.col(free_pos[c]);
    const VectorXd beta = wf.householderQr().solve(v);
    for (std::size_t c = 0; c < free_pos.size(); ++c) b(free_pos[c]) = beta(static_cast<Index>(c));
    resid = v - wf * beta;
  }
  const double s = resid.squaredNorm() / rows;

  MatrixXd out = sigma;
  for (Index r = 0; r < p; ++r) {
    out(others[static_cast<std::size_t>(r)], j) = b(r);
    out(j, others[static_cast<std::size_t>(r)]) = b(r);
  }
  out(j, j) = s + b.dot(a_inv * b);
  return out;
}

Posterior linear_gaussian_posterior(const LinearGaussianModel& model, const VectorXd& y, const VectorXd& m,
                                    const MatrixXd& sigma, double sigma2) {
  const MatrixXd k = model.design_matrix();
  const MatrixXd sigma_inv = inverse_by_elimination(sigma);
  const MatrixXd precision = sigma_inv + k.transpose() * k / sigma2;
  Posterior post;
  post.cov = inverse_by_elimination(precision);
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  post.mean = post.cov * (sigma_inv * m + k.transpose() * y / sigma2);
  return post;
}

double linear_gaussian_loglik(const LinearGaussianModel& model, const Dataset& data, const VectorXd& m,
                              const MatrixXd& sigma, double sigma2) {
  const MatrixXd k = model.design_matrix();
  const Index n = k.rows();
  const MatrixXd v = k * sigma * k.transpose() + sigma2 * MatrixXd::Identity(n, n);
  const MatrixXd v_inv = inverse_by_elimination(v);
  const double log_det = std::log(determinant_by_elimination(v));
  const VectorXd mu = k * m;
  double total = 0.0;
  for (const auto& ind : data.individuals) {
    const VectorXd r = ind.y - mu;
    total += -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * log_det - 0.5 * r.dot(v_inv * r);
  }
  return total;
}

EStepOutput ExactLinearGaussianEStep::run(const NlmeModel& /*model*/, const Dataset& data, const FitParams& params,
                                          int /*iteration*/) {
  const MatrixXd k = model_.design_matrix();
  const double sigma2 = params.theta(0);
  std::vector<const Individual*> order;
  for (const auto& ind : data.individuals) order.push_back(&ind);
  std::sort(order.begin(), order.end(), [](const Individual* a, const Individual* b) { return a->id < b->id; });
  EStepOutput out;
  for (const Individual* ind : order) {
    const Posterior post = linear_gaussian_posterior(model_, ind->y, params.m, params.sigma.matrix(), sigma2);
    ChainMoments c;
    c.id = ind->id;
    c.mean_x = post.mean;
    c.second_moment = post.cov + post.mean * post.mean.transpose();
    c.theta_moment = VectorXd::Constant(1, (ind->y - k * post.mean).squaredNorm() +
                                               (k * post.cov * k.transpose()).trace());
    c.chain_length = 1;
    c.proposals = 1;
    c.accepted = 1;
    c.last_state = post.mean;
    out.chains.push_back(std::move(c));
  }
  return out;
}

MatrixXd random_spd(Rng& rng, Index q, double floor) {
  MatrixXd g(q, q);
  for (Index c = 0; c < q; ++c) g.col(c) = standard_normal(rng, q);
  MatrixXd s = g * g.transpose() / static_cast<double>(q);
  s.diagonal().array() += floor;
  return 0.5 * (s + s.transpose());
}

}  // namespace icfem::validation
