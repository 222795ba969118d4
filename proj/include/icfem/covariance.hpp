#pragma once

// Covariance estimation under a prescribed pattern of zeros: the
// iterative conditional fitting (ICF) solver, the Schur-complement
// machinery it is built on, and the zero-forced comparators.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "icfem/error.hpp"

namespace icfem {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Off-diagonal entry (row < col), zero-based.
struct IndexPair {
  Index row = 0;
  Index col = 0;
  friend bool operator==(const IndexPair&, const IndexPair&) = default;
  friend auto operator<=>(const IndexPair&, const IndexPair&) = default;
};

/// The set of off-diagonal entries of a q x q covariance matrix that are
/// constrained to be zero. Pairs are held zero-based with row < col; the
/// file formats use one-based pairs (see `from_one_based`).
///
/// Construction does not validate; call `validate_pattern` (or use
/// `from_one_based`, which does) before handing the pattern to a solver.
class ZeroPattern {
 public:
  ZeroPattern() = default;
  ZeroPattern(Index dim, std::vector<IndexPair> pairs);

  /// Builds and validates a pattern from one-based (i, j) pairs. A pair
  /// given as (j, i) is normalised to (i, j).
  static ZeroPattern from_one_based(Index dim, std::initializer_list<std::pair<int, int>> pairs);
  static ZeroPattern from_one_based(Index dim, const std::vector<std::pair<int, int>>& pairs);

  Index dim() const noexcept { return dim_; }
  const std::vector<IndexPair>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }

  /// True when entry (i, j) or (j, i) is constrained.
  bool contains(Index i, Index j) const;

  /// Off-diagonal indices k != j with (k, j) unconstrained, ascending.
  std::vector<Index> free_in_column(Index j) const;

  std::vector<std::pair<int, int>> one_based() const;

 private:
  Index dim_ = 0;
  std::vector<IndexPair> pairs_;
  std::vector<char> mask_;  // dim x dim, symmetric
};

/// Throws Error{DiagonalZero | IndexOutOfRange | DuplicatePair} unless every
/// pair is a distinct strictly-upper-triangular entry of a q x q matrix.
void validate_pattern(const ZeroPattern& pattern, Index q);

/// Symmetric positive definite matrix. The lower triangle is authoritative;
/// the upper triangle is overwritten from it on construction so the stored
/// matrix is exactly symmetric. Holds the Cholesky factor it was checked with.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  /// Throws Error{NotPositiveDefinite} when the Cholesky factorisation fails
  /// or a pivot is not strictly positive.
  explicit SpdMatrix(const MatrixXd& m);

  static SpdMatrix identity(Index q) { return SpdMatrix(MatrixXd::Identity(q, q)); }

  const MatrixXd& matrix() const noexcept { return m_; }
  Index dim() const noexcept { return m_.rows(); }
  double operator()(Index i, Index j) const { return m_(i, j); }

  const Eigen::LLT<MatrixXd>& llt() const noexcept { return llt_; }
  MatrixXd lower_factor() const { return llt_.matrixL(); }
  double log_det() const;
  MatrixXd inverse() const;

  /// Bitwise-zero check on every constrained entry.
  bool conforms(const ZeroPattern& pattern) const;

 private:
  MatrixXd m_;
  Eigen::LLT<MatrixXd> llt_;
};

/// True when the symmetric triangular factorisation of `m` succeeds with
/// strictly positive pivots.
bool is_positive_definite(const MatrixXd& m);

/// Blocks of Sigma around pivot j: A = Sigma_{-j,-j}, B = Sigma_{-j,j},
/// C = Sigma_{j,j} and the Schur complement S = C - B' A^{-1} B.
struct SchurSplit {
  Index pivot = 0;
  MatrixXd a;
  VectorXd b;
  double c = 0.0;
  double s = 0.0;
  Eigen::LLT<MatrixXd> a_llt;

  /// Z' Sigma^{-1} Z evaluated as U' A^{-1} U + (V - B'A^{-1}U)^2 / S, where
  /// U is z without component `pivot` and V = z(pivot).
  double quadratic_form(const VectorXd& z) const;

  /// log det(A) + log S, i.e. log det(Sigma).
  double log_det() const;
};

SchurSplit schur_split(const SpdMatrix& sigma, Index j);

/// Removes row/column j.
MatrixXd drop_index(const MatrixXd& m, Index j);
VectorXd drop_index(const VectorXd& v, Index j);

/// Conditional second-moment aggregates for the ICF M-step. `xtilde` is the
/// empirical conditional covariance (1/N) sum_i E[T_i T_i' | Y_i]; the
/// per-pivot aggregates are the corresponding blocks of N * xtilde.
struct SufficientStats {
  MatrixXd xtilde;
  double n = 1.0;

  Index dim() const noexcept { return xtilde.rows(); }
  /// sum_i E[U_i U_i'] for pivot j.
  MatrixXd cross_uu(Index j) const { return n * drop_index(xtilde, j); }
  /// sum_i E[V_i U_i] for pivot j.
  VectorXd cross_vu(Index j) const { return n * drop_index(VectorXd(xtilde.col(j)), j); }
  /// sum_i E[V_i^2] for pivot j.
  double cross_vv(Index j) const { return n * xtilde(j, j); }
};

/// Entries at pattern positions (and their transposes) set to exactly 0.0.
/// The result need not be positive definite.
MatrixXd zero_forced(const MatrixXd& sigma_uc, const ZeroPattern& pattern);

/// sigma_zf + (max(-lambda_min, 0) + 1/n^2) I.
SpdMatrix min_eig_repair(const MatrixXd& sigma_zf, double n);

/// tr(X~ Sigma^{-1}) + log det Sigma.
double objective(const SpdMatrix& sigma, const SufficientStats& stats);

/// max |(Sigma^{-1} - Sigma^{-1} X~ Sigma^{-1})_{ij}| over unconstrained
/// entries, diagonal included.
double kkt_residual(const SpdMatrix& sigma, const SufficientStats& stats,
                    const ZeroPattern& pattern);

/// One conditional-fitting step on column j: A = Sigma_{-j,-j} is held fixed,
/// the unconstrained entries of B = Sigma_{-j,j} and the Schur complement S
/// are set to their least-squares optimum, constrained entries of B stay 0.
///
/// Throws Error{NotPositiveDefinite} when A cannot be factorised and
/// Error{SingularNormalEquations} when the Gram matrix of the free
/// coordinates is singular (degenerate statistics).
SpdMatrix icf_column_update(const SpdMatrix& sigma, const SufficientStats& stats, Index j,
                            const ZeroPattern& pattern);

/// Reported to the optional observer after every column update.
struct ColumnUpdateEvent {
  int sweep = 0;
  Index column = 0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  const SpdMatrix* before = nullptr;
  const SpdMatrix* after = nullptr;
};

struct IcfOptions {
  double tol = 1e-8;
  int max_sweeps = 500;
  std::function<void(const ColumnUpdateEvent&)> observer;
};

struct IcfDiagnostics {
  int sweeps = 0;
  bool converged = false;
  bool max_sweeps_exceeded = false;
  /// A ridge of 1e-10 tr(X~)/q was added to degenerate statistics.
  bool ridge_applied = false;
  double final_objective = 0.0;
  double kkt_residual = 0.0;
  double last_relative_change = 0.0;
  /// Column updates that increased the objective by more than 1e-12.
  int descent_violations = 0;
};

struct IcfResult {
  SpdMatrix sigma;
  IcfDiagnostics diagnostics;
};

/// Maximum-likelihood covariance over S_q^+(pattern) for given statistics:
/// cycles the columns 1..q with `icf_column_update` until the relative
/// Frobenius change over one sweep drops below `tol`. The empty pattern
/// returns X~ and the q = 2 single-zero case returns diag(X~) without
/// iterating. Reaching `max_sweeps` is not an error: the last iterate is
/// returned with `max_sweeps_exceeded` set.
///
/// Throws Error{NotPositiveDefinite} if `init` is not pattern-conformant PD.
IcfResult icf_solve(const SufficientStats& stats, const ZeroPattern& pattern,
                    const SpdMatrix& init, const IcfOptions& options = {});

/// Same, starting from the default init diag(X~).
IcfResult icf_solve(const SufficientStats& stats, const ZeroPattern& pattern,
                    const IcfOptions& options = {});

}  // namespace icfem
