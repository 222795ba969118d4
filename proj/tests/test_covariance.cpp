#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>

#include "icfem/covariance.hpp"
#include "icfem/rng.hpp"
#include "icfem/validation/oracles.hpp"

using namespace icfem;
using icfem::validation::random_spd;

namespace {

MatrixXd mat3(std::initializer_list<double> v) {
  MatrixXd m(3, 3);
  auto it = v.begin();
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) m(i, j) = *it++;
  return m;
}

const MatrixXd kUc = mat3({4, -3, 3, -3, 4, -3, 3, -3, 4});
const MatrixXd kZf = mat3({4, -3, 0, -3, 4, -3, 0, -3, 4});

bool bitwise_zero(double v) { return std::bit_cast<std::uint64_t>(v) == 0; }

bool bitwise_equal(const MatrixXd& a, const MatrixXd& b) {
  for (Index i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("validate_pattern accepts valid patterns and rejects bad pairs") {
  CHECK_NOTHROW(ZeroPattern::from_one_based(4, {{1, 4}, {3, 4}}));
  CHECK_NOTHROW(validate_pattern(ZeroPattern(3, {}), 3));

  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;
  };
  CHECK(code_of([] { ZeroPattern::from_one_based(3, {{2, 2}}); }) == ErrorCode::DiagonalZero);
  CHECK(code_of([] { ZeroPattern::from_one_based(3, {{1, 4}}); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([] { ZeroPattern::from_one_based(3, {{0, 2}}); }) == ErrorCode::IndexOutOfRange);
  CHECK(code_of([] { ZeroPattern::from_one_based(3, {{1, 2}, {2, 1}}); }) == ErrorCode::DuplicatePair);
}

TEST_CASE("reversed pairs are normalised") {
  const auto p = ZeroPattern::from_one_based(4, {{4, 1}});
  REQUIRE(p.size() == 1);
  CHECK(p.pairs()[0] == IndexPair{0, 3});
  CHECK(p.contains(3, 0));
  CHECK(p.free_in_column(3) == std::vector<Index>{1, 2});
}

TEST_CASE("SpdMatrix rejects indefinite input and mirrors the lower triangle") {
  CHECK_THROWS_AS(SpdMatrix{kZf}, Error);
  MatrixXd m = MatrixXd::Identity(2, 2);
  m(1, 0) = 0.5;
  m(0, 1) = 99.0;
  const SpdMatrix s(m);
  CHECK(s(0, 1) == 0.5);
  CHECK(std::abs(s.log_det() - std::log(0.75)) < 1e-15);
}

TEST_CASE("zero_forced sets pattern entries to exact zeros") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  CHECK(bitwise_equal(zero_forced(kUc, pattern), kZf));
  CHECK(bitwise_equal(zero_forced(kUc, ZeroPattern(3, {})), kUc));

  const MatrixXd d = 4.0 * MatrixXd::Identity(3, 3);
  const MatrixXd zd = zero_forced(d, pattern);
  CHECK(bitwise_equal(zd, d));
  CHECK(is_positive_definite(zd));
}

TEST_CASE("min_eig_repair shifts by the negative part of lambda_min plus 1/N^2") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const SpdMatrix r = min_eig_repair(kZf, 30.0);
  const double shift = 3.0 * std::sqrt(2.0) - 4.0 + 1.0 / 900.0;
  CHECK(std::abs(shift - 0.2437518) < 1e-7);
  CHECK(std::abs(r(0, 0) - (4.0 + shift)) < 1e-12);
  CHECK(r.conforms(pattern));
  CHECK(is_positive_definite(r.matrix()));

  // PD input: shift is exactly 1/N^2.
  const SpdMatrix r2 = min_eig_repair(kUc, 10.0);
  CHECK(std::abs(r2(1, 1) - (4.0 + 0.01)) < 1e-14);
  CHECK(r2(0, 1) == -3.0);

  const SpdMatrix r1 = min_eig_repair(MatrixXd::Zero(1, 1), 1.0);
  CHECK(r1(0, 0) == 1.0);
  CHECK_THROWS_AS(min_eig_repair(kZf, 0.5), Error);
}

TEST_CASE("schur_split on small matrices") {
  MatrixXd m(2, 2);
  m << 4, -3, -3, 4;
  const SchurSplit s = schur_split(SpdMatrix(m), 1);
  CHECK(s.a(0, 0) == 4.0);
  CHECK(s.b(0) == -3.0);
  CHECK(s.c == 4.0);
  CHECK(s.s == doctest::Approx(7.0 / 4.0).epsilon(1e-15));
  CHECK(std::exp(s.log_det()) == doctest::Approx(7.0).epsilon(1e-14));

  for (Index j = 0; j < 4; ++j) {
    const SchurSplit id = schur_split(SpdMatrix::identity(4), j);
    CHECK(id.a.isIdentity());
    CHECK(id.b.isZero());
    CHECK(id.c == 1.0);
    CHECK(id.s == 1.0);
  }
  CHECK_THROWS_AS(schur_split(SpdMatrix::identity(3), 3), Error);
}

TEST_CASE("schur identities on random SPD matrices") {
  Rng rng = make_rng(101);
  for (int t = 0; t < 200; ++t) {
    const Index q = 2 + t % 7;
    const SpdMatrix sigma(random_spd(rng, q));
    const Index j = t % q;
    const SchurSplit s = schur_split(sigma, j);
    CHECK(s.s > 0.0);
    const double det = validation::determinant_by_elimination(sigma.matrix());
    const double det_split = validation::determinant_by_elimination(s.a) * s.s;
    CHECK(std::abs(det_split - det) <= 1e-10 * std::abs(det));
    const VectorXd z = standard_normal(rng, q);
    const double quad = z.dot(validation::inverse_by_elimination(sigma.matrix()) * z);
    CHECK(std::abs(s.quadratic_form(z) - quad) <= 1e-10 * std::abs(quad));
  }
}

TEST_CASE("sufficient statistics blocks are sub-blocks of N xtilde") {
  const SufficientStats st{kUc, 30.0};
  CHECK(st.cross_uu(2) == 30.0 * kUc.topLeftCorner(2, 2));
  CHECK(st.cross_vu(0)(0) == 30.0 * -3.0);
  CHECK(st.cross_vv(1) == 120.0);
}

TEST_CASE("objective and kkt residual closed forms") {
  const SufficientStats st{kUc, 1.0};
  CHECK(objective(SpdMatrix::identity(3), st) == doctest::Approx(12.0).epsilon(1e-15));
  const double logdet = std::log(validation::determinant_by_elimination(kUc));
  CHECK(objective(SpdMatrix(kUc), st) == doctest::Approx(3.0 + logdet).epsilon(1e-14));

  const SufficientStats eye{MatrixXd::Identity(2, 2), 1.0};
  CHECK(objective(SpdMatrix(2.0 * MatrixXd::Identity(2, 2)), eye) ==
        doctest::Approx(1.0 + 2.0 * std::log(2.0)).epsilon(1e-15));

  CHECK(kkt_residual(SpdMatrix(kUc), st, ZeroPattern(3, {})) < 1e-14);
  const SufficientStats two{2.0 * MatrixXd::Identity(3, 3), 1.0};
  CHECK(kkt_residual(SpdMatrix::identity(3), two, ZeroPattern(3, {})) == 1.0);
}

TEST_CASE("column update with zero cross moment or no free coordinates") {
  MatrixXd x = MatrixXd::Identity(3, 3) * 2.0;
  x(0, 1) = x(1, 0) = 0.5;  // column 3 has zero cross moment
  const SufficientStats st{x, 10.0};
  const SpdMatrix out = icf_column_update(SpdMatrix::identity(3), st, 2, ZeroPattern(3, {}));
  CHECK(out(0, 2) == 0.0);
  CHECK(out(1, 2) == 0.0);
  CHECK(out(2, 2) == doctest::Approx(2.0).epsilon(1e-15));

  const auto all = ZeroPattern::from_one_based(3, {{1, 3}, {2, 3}});
  const SpdMatrix out2 = icf_column_update(SpdMatrix::identity(3), SufficientStats{kUc, 5.0}, 2, all);
  CHECK(bitwise_zero(out2(0, 2)));
  CHECK(bitwise_zero(out2(1, 2)));
  CHECK(out2(2, 2) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("column update matches the least-squares oracle") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const SufficientStats st{kUc, 1.0};
  const SpdMatrix out = icf_column_update(SpdMatrix::identity(3), st, 2, pattern);
  // Worked by hand: B = (0, -3/4), S = 7/4, Sigma_33 = 7/4 + 9/16.
  CHECK(bitwise_zero(out(0, 2)));
  CHECK(out(1, 2) == doctest::Approx(-0.75).epsilon(1e-15));
  CHECK(out(2, 2) == doctest::Approx(2.3125).epsilon(1e-15));
  const MatrixXd ref = validation::column_update_by_least_squares(MatrixXd::Identity(3, 3), kUc, 2, pattern);
  CHECK((out.matrix() - ref).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng = make_rng(7);
  for (int t = 0; t < 50; ++t) {
    const Index q = 3 + t % 3;
    const ZeroPattern p(q, {{0, q - 1}});
    MatrixXd s0 = random_spd(rng, q);
    s0(0, q - 1) = s0(q - 1, 0) = 0.0;
    if (!is_positive_definite(s0)) continue;
    const MatrixXd x = random_spd(rng, q);
    const Index j = t % q;
    const SpdMatrix got = icf_column_update(SpdMatrix(s0), SufficientStats{x, 3.0}, j, p);
    const MatrixXd want = validation::column_update_by_least_squares(s0, x, j, p);
    CHECK((got.matrix() - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("column update is a descent step that keeps A, zeros and PD") {
  Rng rng = make_rng(2024);
  int checked = 0;
  for (int t = 0; t < 1200; ++t) {
    const Index q = 2 + t % 5;
    std::vector<IndexPair> pairs;
    for (Index j = 1; j < q; ++j)
      for (Index i = 0; i < j; ++i)
        if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) pairs.push_back({i, j});
    const ZeroPattern pattern(q, pairs);
    const SufficientStats st{random_spd(rng, q, 0.1), 1.0};
    MatrixXd s0 = random_spd(rng, q);
    for (const auto& p : pairs) s0(p.row, p.col) = s0(p.col, p.row) = 0.0;
    if (!is_positive_definite(s0)) s0 = MatrixXd(s0.diagonal().asDiagonal());
    const SpdMatrix before(s0);
    const Index j = std::uniform_int_distribution<Index>(0, q - 1)(rng);
    const SpdMatrix after = icf_column_update(before, st, j, pattern);
    const double f0 = objective(before, st);
    CHECK(objective(after, st) <= f0 + 1e-12 * (1.0 + std::abs(f0)));
    CHECK(after.conforms(pattern));
    CHECK(is_positive_definite(after.matrix()));
    CHECK(bitwise_equal(drop_index(before.matrix(), j), drop_index(after.matrix(), j)));
    ++checked;
  }
  CHECK(checked >= 1000);
}

TEST_CASE("icf_solve shortcuts") {
  const SufficientStats st{kUc, 1.0};
  const IcfResult none = icf_solve(st, ZeroPattern(3, {}));
  CHECK(bitwise_equal(none.sigma.matrix(), kUc));
  CHECK(none.diagnostics.sweeps == 0);

  MatrixXd x(2, 2);
  x << 2, 1, 1, 3;
  const IcfResult two = icf_solve(SufficientStats{x, 1.0}, ZeroPattern::from_one_based(2, {{1, 2}}));
  CHECK(two.sigma(0, 0) == 2.0);
  CHECK(two.sigma(1, 1) == 3.0);
  CHECK(bitwise_zero(two.sigma(0, 1)));
}

TEST_CASE("icf_solve reaches the known constrained optimum of the 3x3 example") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const SufficientStats st{kUc, 1.0};
  const IcfResult res = icf_solve(st, pattern, SpdMatrix(4.0 * MatrixXd::Identity(3, 3)));
  const MatrixXd want = mat3({4, -12.0 / 7, 0, -12.0 / 7, 142.0 / 49, -12.0 / 7, 0, -12.0 / 7, 4});
  CHECK((res.sigma.matrix() - want).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(res.diagnostics.converged);
  CHECK(std::abs(res.diagnostics.final_objective - 6.129263666178513) < 1e-8);
  CHECK(res.diagnostics.kkt_residual < 1e-6);
  CHECK(bitwise_zero(res.sigma(0, 2)));

  const auto oracle = validation::brute_force_constrained_mle(kUc, pattern, 4.0 * MatrixXd::Identity(3, 3));
  CHECK(std::abs(oracle.objective - res.diagnostics.final_objective) < 1e-8);
}

TEST_CASE("icf_solve is invariant to a relabelling of the coordinates") {
  Rng rng = make_rng(55);
  const MatrixXd x = random_spd(rng, 4);
  const auto pattern = ZeroPattern::from_one_based(4, {{1, 4}, {3, 4}});
  IcfOptions opts;
  opts.tol = 1e-12;
  const IcfResult a = icf_solve(SufficientStats{x, 1.0}, pattern, opts);

  const std::vector<Index> perm{3, 1, 0, 2};  // new k holds old perm[k]
  MatrixXd xp(4, 4);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) xp(i, j) = x(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  // Old (1,4) -> new (3,1); old (3,4) -> new (4,1).
  const auto pp = ZeroPattern::from_one_based(4, {{1, 3}, {1, 4}});
  const IcfResult b = icf_solve(SufficientStats{xp, 1.0}, pp, opts);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      CHECK(std::abs(b.sigma(i, j) - a.sigma(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)])) < 1e-8);
}

TEST_CASE("icf_solve rejects a non-conforming init and reports the sweep cap") {
  const auto pattern = ZeroPattern::from_one_based(3, {{1, 3}});
  const SufficientStats st{kUc, 1.0};
  MatrixXd bad = MatrixXd::Identity(3, 3);
  bad(0, 2) = bad(2, 0) = 0.1;
  CHECK_THROWS_AS(icf_solve(st, pattern, SpdMatrix(bad)), Error);

  IcfOptions opts;
  opts.max_sweeps = 1;
  opts.tol = 1e-300;
  const IcfResult r = icf_solve(st, pattern, opts);
  CHECK(r.diagnostics.max_sweeps_exceeded);
  CHECK_FALSE(r.diagnostics.converged);
  CHECK(r.sigma.conforms(pattern));
}

TEST_CASE("degenerate statistics get a ridge") {
  MatrixXd x = MatrixXd::Zero(3, 3);
  x(0, 0) = x(1, 1) = x(0, 1) = x(1, 0) = 1.0;  // rank one
  x(2, 2) = 1.0;
  const IcfResult r = icf_solve(SufficientStats{x, 1.0}, ZeroPattern::from_one_based(3, {{1, 3}}));
  CHECK(r.diagnostics.ridge_applied);
  CHECK(is_positive_definite(r.sigma.matrix()));
}
