#include "icfem/covariance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <sstream>

namespace icfem {

namespace {

bool is_exact_zero(double v) { return std::bit_cast<std::uint64_t>(v) == 0; }

// Index into the reduced (q-1) system obtained by dropping `j`.
Index reduced_index(Index k, Index j) { return k < j ? k : k - 1; }

double relative_frobenius_change(const MatrixXd& prev, const MatrixXd& next) {
  const double denom = prev.norm();
  const double diff = (next - prev).norm();
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace

// ---------------------------------------------------------------------------
// ZeroPattern

ZeroPattern::ZeroPattern(Index dim, std::vector<IndexPair> pairs)
    : dim_(dim), pairs_(std::move(pairs)) {
  mask_.assign(static_cast<std::size_t>(std::max<Index>(dim_, 0) * std::max<Index>(dim_, 0)), 0);
  for (const auto& p : pairs_) {
    if (p.row >= 0 && p.col >= 0 && p.row < dim_ && p.col < dim_) {
      mask_[static_cast<std::size_t>(p.row * dim_ + p.col)] = 1;
      mask_[static_cast<std::size_t>(p.col * dim_ + p.row)] = 1;
    }
  }
}

ZeroPattern ZeroPattern::from_one_based(Index dim,
                                        std::initializer_list<std::pair<int, int>> pairs) {
  return from_one_based(dim, std::vector<std::pair<int, int>>(pairs));
}

ZeroPattern ZeroPattern::from_one_based(Index dim, const std::vector<std::pair<int, int>>& pairs) {
  std::vector<IndexPair> zero_based;
  zero_based.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    if (i > j) std::swap(i, j);
    zero_based.push_back({i - 1, j - 1});
  }
  ZeroPattern pattern(dim, std::move(zero_based));
  validate_pattern(pattern, dim);
  return pattern;
}

bool ZeroPattern::contains(Index i, Index j) const {
  if (i < 0 || j < 0 || i >= dim_ || j >= dim_) return false;
  return mask_[static_cast<std::size_t>(i * dim_ + j)] != 0;
}

std::vector<Index> ZeroPattern::free_in_column(Index j) const {
  std::vector<Index> out;
  for (Index k = 0; k < dim_; ++k) {
    if (k != j && !contains(k, j)) out.push_back(k);
  }
  return out;
}

std::vector<std::pair<int, int>> ZeroPattern::one_based() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(pairs_.size());
  for (const auto& p : pairs_) out.emplace_back(static_cast<int>(p.row + 1), static_cast<int>(p.col + 1));
  return out;
}

void validate_pattern(const ZeroPattern& pattern, Index q) {
  std::set<IndexPair> seen;
  for (const auto& p : pattern.pairs()) {
    std::ostringstream where;
    where << "pair (" << p.row + 1 << "," << p.col + 1 << ") for q=" << q;
    if (p.row == p.col) throw Error(ErrorCode::DiagonalZero, where.str());
    if (p.row < 0 || p.col < 0 || p.row >= q || p.col >= q || p.row > p.col) {
      throw Error(ErrorCode::IndexOutOfRange, where.str());
    }
    if (!seen.insert(p).second) throw Error(ErrorCode::DuplicatePair, where.str());
  }
  if (pattern.dim() != q) {
    throw Error(ErrorCode::DimensionMismatch, "pattern order " + std::to_string(pattern.dim()) +
                                                  " does not match q=" + std::to_string(q));
  }
}

// ---------------------------------------------------------------------------
// SpdMatrix

bool is_positive_definite(const MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  const MatrixXd& l = llt.matrixLLT();
  for (Index i = 0; i < m.rows(); ++i) {
    if (!(l(i, i) > 0.0)) return false;
  }
  return true;
}

SpdMatrix::SpdMatrix(const MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorCode::NotPositiveDefinite, "matrix is empty or not square");
  }
  m_ = m;
  m_.triangularView<Eigen::StrictlyUpper>() = m_.transpose().triangularView<Eigen::StrictlyUpper>();
  if (!m_.allFinite()) throw Error(ErrorCode::NotPositiveDefinite, "non-finite entry");
  llt_.compute(m_);
  bool ok = llt_.info() == Eigen::Success;
  if (ok) {
    const MatrixXd& l = llt_.matrixLLT();
    for (Index i = 0; i < m_.rows(); ++i) ok = ok && l(i, i) > 0.0;
  }
  if (!ok) throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorisation failed");
}

double SpdMatrix::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

MatrixXd SpdMatrix::inverse() const {
  return llt_.solve(MatrixXd::Identity(dim(), dim()));
}

bool SpdMatrix::conforms(const ZeroPattern& pattern) const {
  for (const auto& p : pattern.pairs()) {
    if (p.row >= dim() || p.col >= dim()) return false;
    if (!is_exact_zero(m_(p.row, p.col)) || !is_exact_zero(m_(p.col, p.row))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Schur complement

MatrixXd drop_index(const MatrixXd& m, Index j) {
  const Index n = m.rows();
  MatrixXd out(n - 1, n - 1);
  for (Index r = 0, rr = 0; r < n; ++r) {
    if (r == j) continue;
    for (Index c = 0, cc = 0; c < n; ++c) {
      if (c == j) continue;
      out(rr, cc++) = m(r, c);
    }
    ++rr;
  }
  return out;
}

VectorXd drop_index(const VectorXd& v, Index j) {
  VectorXd out(v.size() - 1);
  for (Index r = 0, rr = 0; r < v.size(); ++r) {
    if (r != j) out(rr++) = v(r);
  }
  return out;
}

SchurSplit schur_split(const SpdMatrix& sigma, Index j) {
  const Index q = sigma.dim();
  if (j < 0 || j >= q) throw Error(ErrorCode::IndexOutOfRange, "pivot column out of range");
  SchurSplit split;
  split.pivot = j;
  split.a = drop_index(sigma.matrix(), j);
  split.b = drop_index(VectorXd(sigma.matrix().col(j)), j);
  split.c = sigma(j, j);
  if (q == 1) {
    split.s = split.c;
    return split;
  }
  split.a_llt.compute(split.a);
  if (split.a_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "A = Sigma_{-j,-j} is not positive definite");
  }
  split.s = split.c - split.b.dot(split.a_llt.solve(split.b));
  if (!(split.s > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "Schur complement is not positive");
  return split;
}

double SchurSplit::quadratic_form(const VectorXd& z) const {
  const double v = z(pivot);
  if (a.rows() == 0) return v * v / s;
  const VectorXd u = drop_index(z, pivot);
  const VectorXd ainv_u = a_llt.solve(u);
  const double resid = v - b.dot(ainv_u);
  return u.dot(ainv_u) + resid * resid / s;
}

double SchurSplit::log_det() const {
  double out = std::log(s);
  if (a.rows() > 0) out += 2.0 * a_llt.matrixLLT().diagonal().array().log().sum();
  return out;
}

// ---------------------------------------------------------------------------
// Zero-forced comparators

MatrixXd zero_forced(const MatrixXd& sigma_uc, const ZeroPattern& pattern) {
  validate_pattern(pattern, sigma_uc.rows());
  MatrixXd out = sigma_uc;
  for (const auto& p : pattern.pairs()) {
    out(p.row, p.col) = 0.0;
    out(p.col, p.row) = 0.0;
  }
  return out;
}

SpdMatrix min_eig_repair(const MatrixXd& sigma_zf, double n) {
  if (!(n >= 1.0)) throw Error(ErrorCode::ValueOutOfRange, "sample size must be >= 1");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sigma_zf, Eigen::EigenvaluesOnly);
  const double lambda_min = eig.eigenvalues()(0);
  const double shift = std::max(-lambda_min, 0.0) + 1.0 / (n * n);
  MatrixXd out = sigma_zf;
  out.diagonal().array() += shift;
  return SpdMatrix(out);
}

// ---------------------------------------------------------------------------
// Objective and stationarity

double objective(const SpdMatrix& sigma, const SufficientStats& stats) {
  if (stats.dim() != sigma.dim()) throw Error(ErrorCode::DimensionMismatch, "objective: order mismatch");
  return sigma.llt().solve(stats.xtilde).trace() + sigma.log_det();
}

double kkt_residual(const SpdMatrix& sigma, const SufficientStats& stats,
                    const ZeroPattern& pattern) {
  const MatrixXd inv = sigma.inverse();
  const MatrixXd grad = inv - inv * stats.xtilde * inv;
  double worst = 0.0;
  for (Index i = 0; i < grad.rows(); ++i) {
    for (Index j = 0; j <= i; ++j) {
      if (i != j && pattern.contains(i, j)) continue;
      worst = std::max(worst, std::abs(grad(i, j)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// ICF

SpdMatrix icf_column_update(const SpdMatrix& sigma, const SufficientStats& stats, Index j,
                            const ZeroPattern& pattern) {
  const Index q = sigma.dim();
  if (stats.dim() != q) throw Error(ErrorCode::DimensionMismatch, "icf: stats order mismatch");
  if (j < 0 || j >= q) throw Error(ErrorCode::IndexOutOfRange, "icf: pivot out of range");

  const double x_vv = stats.xtilde(j, j);
  MatrixXd next = sigma.matrix();
  if (q == 1) {
    if (!(x_vv > 0.0)) throw Error(ErrorCode::SingularNormalEquations, "icf: zero variance");
    next(0, 0) = x_vv;
    return SpdMatrix(next);
  }

  const MatrixXd a = drop_index(sigma.matrix(), j);
  Eigen::LLT<MatrixXd> a_llt(a);
  if (a_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "icf: Sigma_{-j,-j} is not positive definite");
  }

  // Regressors W_i = A^{-1} U_i: Gram = A^{-1} X~uu A^{-1}, moment = A^{-1} X~uv.
  const MatrixXd ainv_xuu = a_llt.solve(drop_index(stats.xtilde, j));
  MatrixXd gram = a_llt.solve(ainv_xuu.transpose());
  gram = 0.5 * (gram + gram.transpose()).eval();
  const VectorXd moment = a_llt.solve(drop_index(VectorXd(stats.xtilde.col(j)), j));

  std::vector<Index> free;
  for (Index k : pattern.free_in_column(j)) free.push_back(reduced_index(k, j));
  const Index nf = static_cast<Index>(free.size());

  VectorXd b = VectorXd::Zero(q - 1);
  double s_opt = x_vv;
  if (nf > 0) {
    MatrixXd gram_ff(nf, nf);
    VectorXd moment_f(nf);
    for (Index r = 0; r < nf; ++r) {
      moment_f(r) = moment(free[r]);
      for (Index c = 0; c < nf; ++c) gram_ff(r, c) = gram(free[r], free[c]);
    }
    Eigen::LLT<MatrixXd> gram_llt(gram_ff);
    bool ok = gram_llt.info() == Eigen::Success;
    if (ok) {
      const VectorXd d = gram_llt.matrixLLT().diagonal();
      ok = d.minCoeff() > 1e-14 * std::max(d.maxCoeff(), 1e-300);
    }
    if (!ok) throw Error(ErrorCode::SingularNormalEquations, "icf: free-coordinate Gram matrix is singular");
    const VectorXd b_f = gram_llt.solve(moment_f);
    for (Index r = 0; r < nf; ++r) b(free[r]) = b_f(r);
    // Residual variance at the optimum of the least-squares problem.
    s_opt = x_vv - 2.0 * b_f.dot(moment_f) + b_f.dot(gram_ff * b_f);
  }
  if (!(s_opt > 0.0) || !std::isfinite(s_opt)) {
    throw Error(ErrorCode::SingularNormalEquations, "icf: non-positive residual variance");
  }

  const double c_new = s_opt + b.dot(a_llt.solve(b));
  for (Index k = 0; k < q; ++k) {
    if (k == j) continue;
    const double v = b(reduced_index(k, j));
    next(k, j) = v;
    next(j, k) = v;
  }
  next(j, j) = c_new;
  return SpdMatrix(next);
}

namespace {

SufficientStats ridged(const SufficientStats& stats) {
  SufficientStats out = stats;
  const double q = static_cast<double>(stats.dim());
  double ridge = 1e-10 * stats.xtilde.trace() / q;
  if (!(ridge > 0.0)) ridge = 1e-10;
  out.xtilde.diagonal().array() += ridge;
  return out;
}

SufficientStats symmetrised(const SufficientStats& stats) {
  SufficientStats out = stats;
  out.xtilde = 0.5 * (stats.xtilde + stats.xtilde.transpose());
  return out;
}

}  // namespace

IcfResult icf_solve(const SufficientStats& stats_in, const ZeroPattern& pattern,
                    const SpdMatrix& init, const IcfOptions& options) {
  const Index q = stats_in.dim();
  validate_pattern(pattern, q);
  if (init.dim() != q) throw Error(ErrorCode::DimensionMismatch, "icf: init order mismatch");
  if (!init.conforms(pattern)) {
    throw Error(ErrorCode::NotPositiveDefinite, "icf: init does not conform to the zero pattern");
  }
  if (!(options.tol > 0.0)) throw Error(ErrorCode::ValueOutOfRange, "icf: tol must be positive");

  IcfDiagnostics diag;
  SufficientStats stats = symmetrised(stats_in);
  if (!is_positive_definite(stats.xtilde)) {
    stats = ridged(stats);
    diag.ridge_applied = true;
  }

  auto finish = [&](SpdMatrix sigma) {
    diag.final_objective = objective(sigma, stats);
    diag.kkt_residual = kkt_residual(sigma, stats, pattern);
    return IcfResult{std::move(sigma), diag};
  };

  if (pattern.empty()) {
    diag.converged = true;
    return finish(SpdMatrix(stats.xtilde));
  }
  if (q == 2) {
    diag.converged = true;
    return finish(SpdMatrix(zero_forced(stats.xtilde, pattern)));
  }

  SpdMatrix current = init;
  double current_obj = objective(current, stats);
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    const MatrixXd before_sweep = current.matrix();
    for (Index j = 0; j < q; ++j) {
      SpdMatrix next;
      try {
        next = icf_column_update(current, stats, j, pattern);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularNormalEquations || diag.ridge_applied) throw;
        stats = ridged(stats);
        diag.ridge_applied = true;
        current_obj = objective(current, stats);
        next = icf_column_update(current, stats, j, pattern);
      }
      const double next_obj = objective(next, stats);
      if (next_obj > current_obj + 1e-12) ++diag.descent_violations;
      if (options.observer) {
        options.observer(ColumnUpdateEvent{sweep, j, current_obj, next_obj, &current, &next});
      }
      current = std::move(next);
      current_obj = next_obj;
    }
    diag.sweeps = sweep;
    diag.last_relative_change = relative_frobenius_change(before_sweep, current.matrix());
    if (diag.last_relative_change < options.tol) {
      diag.converged = true;
      break;
    }
  }
  diag.max_sweeps_exceeded = !diag.converged;
  return finish(std::move(current));
}

IcfResult icf_solve(const SufficientStats& stats, const ZeroPattern& pattern,
                    const IcfOptions& options) {
  SufficientStats s = symmetrised(stats);
  if (!is_positive_definite(s.xtilde)) s = ridged(s);
  MatrixXd init = s.xtilde.diagonal().asDiagonal();
  return icf_solve(stats, pattern, SpdMatrix(init), options);
}

}  // namespace icfem
