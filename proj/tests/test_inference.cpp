#include <doctest.h>

#include <cmath>

#include "icfem/inference.hpp"
#include "icfem/rng.hpp"
#include "icfem/validation/oracles.hpp"

using namespace icfem;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

class FlatModel final : public NlmeModel {
 public:
  std::string_view name() const override { return "flat"; }
  Index q() const override { return 2; }
  Index n_obs() const override { return 2; }
  VectorXd default_design() const override { return VectorXd::Zero(2); }
  VectorXd mean(const VectorXd& x, const VectorXd&) const override { return x; }
  using NlmeModel::mean;
  MatrixXd scale(const VectorXd&, const VectorXd&, const VectorXd&) const override {
    return MatrixXd::Identity(2, 2);
  }
  double log_cond_density(const VectorXd&, const VectorXd&, const VectorXd&, const VectorXd&) const override {
    return -0.7;
  }
  VectorXd theta_moment(const VectorXd&, const VectorXd&, const VectorXd&) const override { return VectorXd::Zero(1); }
  VectorXd update_theta(const VectorXd& s, std::size_t) const override { return s; }
};

FitParams linear_truth() {
  MatrixXd s(2, 2);
  s << 1.0, 0.4, 0.4, 0.7;
  return FitParams{vec({0.5, -1.0}), SpdMatrix(s), vec({0.3})};
}

// One-way random-effects MLE for q = 1: y_ir = x_i + e_ir.
FitParams anova_mle(const Dataset& data, Index replicates) {
  const double n = static_cast<double>(data.size());
  double grand = 0.0, within = 0.0;
  std::vector<double> means;
  for (const auto& ind : data.individuals) {
    const double mu = ind.y.mean();
    means.push_back(mu);
    grand += mu;
    within += (ind.y.array() - mu).square().sum();
  }
  grand /= n;
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  const double s2 = within / (n * static_cast<double>(replicates - 1));
  const double s = between / n - s2 / static_cast<double>(replicates);
  return FitParams{vec({grand}), SpdMatrix(MatrixXd::Constant(1, 1, s)), vec({s2})};
}

}  // namespace

TEST_CASE("importance-sampled log-likelihood matches the closed form") {
  const LinearGaussianModel model(2, 2);
  const FitParams p = linear_truth();
  const Dataset data = simulate_dataset(model, p.m, p.sigma, p.theta, 25, 5);
  const LikelihoodEstimate est = loglik_is(model, data, p, 20000, 9);
  const double exact = validation::linear_gaussian_loglik(model, data, p.m, p.sigma.matrix(), p.theta(0));
  CHECK(est.n_samples == 20000);
  CHECK(est.mc_se > 0.0);
  CHECK(std::abs(est.loglik - exact) < 4.0 * est.mc_se);
}

TEST_CASE("flat conditional density gives N times its constant") {
  const FlatModel model;
  Dataset data;
  for (int i = 0; i < 6; ++i) data.individuals.push_back({std::to_string(i), VectorXd::Zero(2), VectorXd::Zero(2)});
  const FitParams p{VectorXd::Zero(2), SpdMatrix::identity(2), vec({1.0})};
  const LikelihoodEstimate est = loglik_is(model, data, p, 500, 1);
  CHECK(est.loglik == doctest::Approx(6 * -0.7).epsilon(1e-14));
  CHECK(est.mc_se == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("common random numbers: equal seeds give identical estimates") {
  const LinearGaussianModel model(2, 2);
  const FitParams p = linear_truth();
  const Dataset data = simulate_dataset(model, p.m, p.sigma, p.theta, 10, 3);
  const auto a = loglik_is(model, data, p, 1000, 77);
  const auto b = loglik_is(model, data, p, 1000, 77);
  const auto c = loglik_is(model, data, p, 1000, 78);
  CHECK(a.loglik == b.loglik);
  CHECK(a.mc_se == b.mc_se);
  CHECK(a.loglik != c.loglik);

  // Draws are keyed by id, so a duplicated panel doubles the estimate.
  Dataset twice = data;
  for (const auto& ind : data.individuals) twice.individuals.push_back(ind);
  const auto d = loglik_is(model, twice, p, 1000, 77);
  CHECK(d.loglik == doctest::Approx(2.0 * a.loglik).epsilon(1e-12));
}

TEST_CASE("chi-square survival") {
  CHECK(chi_square_survival(0.0, 2) == 1.0);
  CHECK(chi_square_survival(5.991464547107979, 2) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi_square_survival(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi_square_survival(2.0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK_THROWS_AS(chi_square_survival(1.0, 0), Error);
}

TEST_CASE("likelihood-ratio test") {
  const auto pattern = ZeroPattern::from_one_based(4, {{1, 4}, {3, 4}});
  const LrTestResult same = lr_test(-100.0, -100.0, pattern);
  CHECK(same.stat == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(same.df == 2);
  CHECK_FALSE(same.clipped);

  const LrTestResult r = lr_test(-754.23, -750.25, pattern);
  CHECK(r.stat == doctest::Approx(7.96).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(std::exp(-3.98)).epsilon(1e-12));

  const LrTestResult clipped = lr_test(-750.0, -750.5, pattern);
  CHECK(clipped.clipped);
  CHECK(clipped.stat == 0.0);
  CHECK(clipped.p_value == 1.0);
}

TEST_CASE("parameter layout") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const ParameterLayout layout(3, pattern, 1);
  const std::vector<std::string> want{"m1", "m2", "m3", "Sigma11", "Sigma21", "Sigma22", "Sigma32", "Sigma33", "theta"};
  CHECK(layout.names() == want);

  MatrixXd s(3, 3);
  s << 2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 1.5;
  const FitParams p{vec({1, 2, 3}), SpdMatrix(s), vec({0.1})};
  const VectorXd packed = layout.pack(p);
  CHECK(packed == vec({1, 2, 3, 2.0, 0.5, 1.0, 0.2, 1.5, 0.1}));
  const FitParams back = layout.unpack(packed);
  CHECK(back.m == p.m);
  CHECK(back.sigma.matrix() == p.sigma.matrix());
  CHECK(back.theta == p.theta);

  VectorXd bad = packed;
  bad(4) = 5.0;
  CHECK_THROWS_AS(layout.unpack(bad), Error);
  CHECK_THROWS_AS(layout.unpack(VectorXd::Zero(3)), Error);
}

TEST_CASE("finite-difference standard errors of a quadratic") {
  MatrixXd h(3, 3);
  h << 4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0;
  const VectorXd c = vec({1.0, -1.0, 2.0});
  auto f = [&](const VectorXd& x) { return 0.5 * (x - c).dot(h * (x - c)); };
  const StandardErrors se = numerical_standard_errors(f, c, VectorXd::Constant(3, 1e-3));
  CHECK(se.hessian_pd);
  CHECK((se.hessian - h).cwiseAbs().maxCoeff() < 1e-6);
  const MatrixXd inv = h.inverse();
  for (Index i = 0; i < 3; ++i) {
    REQUIRE(se.se[static_cast<std::size_t>(i)].has_value());
    CHECK(*se.se[static_cast<std::size_t>(i)] == doctest::Approx(std::sqrt(inv(i, i))).epsilon(1e-6));
  }

  // Relabelling the coordinates relabels the standard errors.
  const std::vector<Index> perm{2, 0, 1};
  MatrixXd hp(3, 3);
  VectorXd cp(3);
  for (Index i = 0; i < 3; ++i) {
    cp(i) = c(perm[i]);
    for (Index j = 0; j < 3; ++j) hp(i, j) = h(perm[i], perm[j]);
  }
  auto fp = [&](const VectorXd& x) { return 0.5 * (x - cp).dot(hp * (x - cp)); };
  const StandardErrors sp = numerical_standard_errors(fp, cp, VectorXd::Constant(3, 1e-3));
  for (Index i = 0; i < 3; ++i)
    CHECK(*sp.se[static_cast<std::size_t>(i)] ==
          doctest::Approx(*se.se[static_cast<std::size_t>(perm[i])]).epsilon(1e-9));

  CHECK_THROWS_AS(numerical_standard_errors(f, c, VectorXd::Constant(2, 1e-3)), Error);
}

TEST_CASE("indefinite Hessian is reported") {
  auto saddle = [](const VectorXd& x) { return x(0) * x(0) - x(1) * x(1); };
  const StandardErrors se = numerical_standard_errors(saddle, VectorXd::Zero(2), VectorXd::Constant(2, 1e-3));
  CHECK_FALSE(se.hessian_pd);
}

TEST_CASE("Fisher standard errors of the one-way random-effects model") {
  const LinearGaussianModel model(1, 2);
  const FitParams truth{vec({3.0}), SpdMatrix(MatrixXd::Constant(1, 1, 1.0)), vec({0.5})};

  auto se_of = [&](std::size_t n) {
    const Dataset data = simulate_dataset(model, truth.m, truth.sigma, truth.theta, n, 21);
    const FitParams hat = anova_mle(data, 2);
    REQUIRE(hat.sigma(0, 0) > 0.0);
    FisherOptions opts;
    opts.n_samples = 4000;
    const StandardErrors se = fisher_se(model, data, hat, ZeroPattern(1, {}), opts);
    REQUIRE(se.hessian_pd);
    // Observed information for m is N / (Sigma + sigma^2 / 2).
    const double want = std::sqrt((hat.sigma(0, 0) + hat.theta(0) / 2.0) / static_cast<double>(n));
    CHECK(*se.se[0] == doctest::Approx(want).epsilon(0.15));
    return se;
  };
  const StandardErrors small = se_of(100);
  const StandardErrors large = se_of(200);
  CHECK(small.names == std::vector<std::string>{"m1", "Sigma11", "theta"});
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(small.se[i].has_value());
    REQUIRE(large.se[i].has_value());
    CHECK(*large.se[i] / *small.se[i] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.2));
  }
}

TEST_CASE("constrained entries carry no standard error") {
  const LinearGaussianModel model(3, 2);
  MatrixXd s(3, 3);
  s << 1.0, 0.3, 0.0, 0.3, 0.8, -0.2, 0.0, -0.2, 0.5;
  const FitParams p{vec({1, -2, 0.5}), SpdMatrix(s), vec({0.25})};
  const Dataset data = simulate_dataset(model, p.m, p.sigma, p.theta, 60, 4);
  FisherOptions opts;
  opts.n_samples = 300;
  const StandardErrors se = fisher_se(model, data, p, ZeroPattern::from_one_based(3, {{1, 3}}), opts);
  CHECK(se.names.size() == 9);
  for (const auto& name : se.names) CHECK(name != "Sigma31");
}
