#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace goop {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using DenseMatrix = Matrix<double>;

/// Default relative singular value cutoff: max(rows, cols) * eps.
template <typename Derived>
typename Derived::RealScalar default_rank_tol(const Eigen::MatrixBase<Derived>& a) {
  using Real = typename Derived::RealScalar;
  return static_cast<Real>(std::max(a.rows(), a.cols())) *
         std::numeric_limits<Real>::epsilon();
}

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& a, const char* what) {
  if (!a.allFinite()) throw NumericError(std::string(what) + " has non-finite entries");
}

template <typename Derived>
Eigen::BDCSVD<Matrix<typename Derived::Scalar>> thin_svd(
    const Eigen::MatrixBase<Derived>& a) {
  return Eigen::BDCSVD<Matrix<typename Derived::Scalar>>(
      a.derived(), Eigen::ComputeThinU | Eigen::ComputeThinV);
}

template <typename Svd, typename Real>
Eigen::Index rank_of(const Svd& svd, Real rank_tol) {
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == Real(0)) return 0;
  Real cut = rank_tol * s(0);
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return r;
}

}  // namespace detail

/// Minimum-norm least-squares solution A⁺b. Singular values at or below
/// rank_tol·σ_max are treated as zero. A negative rank_tol selects the default.
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> pinv_solve(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b,
                                             typename DerivedA::RealScalar rank_tol = -1) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows()) throw std::invalid_argument("pinv_solve: dimension mismatch");
  detail::require_finite(a, "pinv_solve matrix");
  detail::require_finite(b, "pinv_solve right-hand side");
  if (a.size() == 0) return Vector<Scalar>::Zero(a.cols());
  if (rank_tol < 0) rank_tol = default_rank_tol(a);
  auto svd = detail::thin_svd(a);
  Eigen::Index r = detail::rank_of(svd, rank_tol);
  Vector<Scalar> coef = svd.matrixU().leftCols(r).adjoint() * b;
  coef.array() /= svd.singularValues().head(r).array();
  Vector<Scalar> x = svd.matrixV().leftCols(r) * coef;
  detail::require_finite(x, "pinv_solve result");
  return x;
}

/// Moore-Penrose pseudoinverse.
template <typename Derived>
Matrix<typename Derived::Scalar> pseudo_inverse(const Eigen::MatrixBase<Derived>& a,
                                                typename Derived::RealScalar rank_tol = -1) {
  using Scalar = typename Derived::Scalar;
  detail::require_finite(a, "pseudo_inverse matrix");
  if (a.size() == 0) return Matrix<Scalar>::Zero(a.cols(), a.rows());
  if (rank_tol < 0) rank_tol = default_rank_tol(a);
  auto svd = detail::thin_svd(a);
  Eigen::Index r = detail::rank_of(svd, rank_tol);
  Matrix<Scalar> vs = svd.matrixV().leftCols(r);
  for (Eigen::Index j = 0; j < r; ++j) vs.col(j) /= svd.singularValues()(j);
  return vs * svd.matrixU().leftCols(r).adjoint();
}

template <typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& a,
                            typename Derived::RealScalar rank_tol = -1) {
  if (a.size() == 0) return 0;
  detail::require_finite(a, "numerical_rank matrix");
  if (rank_tol < 0) rank_tol = default_rank_tol(a);
  Eigen::BDCSVD<Matrix<typename Derived::Scalar>> svd(a.derived());
  return detail::rank_of(svd, rank_tol);
}

/// Orthonormal basis of null(A), one column per direction.
template <typename Derived>
Matrix<typename Derived::Scalar> null_space_basis(const Eigen::MatrixBase<Derived>& a,
                                                  typename Derived::RealScalar rank_tol = -1) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = a.cols();
  if (a.rows() == 0) return Matrix<Scalar>::Identity(n, n);
  detail::require_finite(a, "null_space_basis matrix");
  if (rank_tol < 0) rank_tol = default_rank_tol(a);
  // Full V is needed: the thin factor omits the null directions when rows < cols.
  Eigen::JacobiSVD<Matrix<Scalar>> svd(a.derived(), Eigen::ComputeFullV);
  Eigen::Index r = detail::rank_of(svd, rank_tol);
  return svd.matrixV().rightCols(n - r);
}

/// Orthonormal basis of Col(A).
template <typename Derived>
Matrix<typename Derived::Scalar> column_space_basis(const Eigen::MatrixBase<Derived>& a,
                                                    typename Derived::RealScalar rank_tol = -1) {
  using Scalar = typename Derived::Scalar;
  if (a.size() == 0) return Matrix<Scalar>::Zero(a.rows(), 0);
  detail::require_finite(a, "column_space_basis matrix");
  if (rank_tol < 0) rank_tol = default_rank_tol(a);
  auto svd = detail::thin_svd(a);
  Eigen::Index r = detail::rank_of(svd, rank_tol);
  return svd.matrixU().leftCols(r);
}

/// Largest relative projection residual ‖(I − BB⁺)a‖ / (1 + ‖a‖) over the
/// columns a of A.
template <typename DerivedB, typename DerivedA>
typename DerivedA::RealScalar col_space_residual(const Eigen::MatrixBase<DerivedB>& b,
                                                 const Eigen::MatrixBase<DerivedA>& a,
                                                 typename DerivedB::RealScalar rank_tol = -1) {
  using Real = typename DerivedA::RealScalar;
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("col_space_contains: row counts differ");
  }
  auto basis = column_space_basis(b, rank_tol);
  Real worst = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    auto col = a.col(j);
    Real res = (col - basis * (basis.adjoint() * col)).norm();
    worst = std::max(worst, res / (Real(1) + col.norm()));
  }
  return worst;
}

/// True iff every column of A lies in Col(B) up to tol·(1 + ‖a‖).
template <typename DerivedB, typename DerivedA>
bool col_space_contains(const Eigen::MatrixBase<DerivedB>& b,
                        const Eigen::MatrixBase<DerivedA>& a,
                        typename DerivedA::RealScalar tol) {
  return col_space_residual(b, a) <= tol;
}

}  // namespace goop
