// SPDX-License-Identifier: MIT
//
// Dense linear-algebra kit: expression-friendly free functions over Eigen
// types, scalar-generic where it costs nothing. Eigen is the only math
// dependency of the library.

#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "fedban/common.hpp"

namespace fedban {

/// Double-precision column vector used throughout the stack.
using VecD = Eigen::VectorXd;
/// Dense matrix used for symmetric PSD accumulators (Gram matrices etc.).
using SymMatD = Eigen::MatrixXd;

/// Default relative eigenvalue cutoff for pseudo-inverse solves.
inline constexpr double kPinvRtol = 1e-10;

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* who) {
  if (!m.allFinite()) fail("NonFiniteInput", std::string(who) + " received a non-finite entry");
}

}  // namespace detail

/// Least-squares solve x = pinv(V) * y for symmetric PSD V via
/// eigendecomposition, zeroing eigencomponents with lambda <= rtol * lambda_max.
/// V is symmetrized internally; V = 0 maps y to 0.
template <typename DerivedV, typename DerivedY>
Eigen::Vector<typename DerivedV::Scalar, Eigen::Dynamic> pinv_solve(
    const Eigen::MatrixBase<DerivedV>& V, const Eigen::MatrixBase<DerivedY>& y,
    double rtol = kPinvRtol) {
  using Scalar = typename DerivedV::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;
  if (V.rows() != V.cols() || V.rows() != y.size())
    fail("BadDimension", "pinv_solve requires square V with matching y");
  detail::require_finite(V, "pinv_solve");
  detail::require_finite(y, "pinv_solve");
  const Mat S = (V.derived() + V.derived().transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success) fail("NonFiniteInput", "eigendecomposition failed");
  const Vec lam = es.eigenvalues();
  const Scalar lam_max = lam.cwiseAbs().maxCoeff();
  Vec coeff = es.eigenvectors().transpose() * y.derived();
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (std::abs(lam[i]) > rtol * lam_max && lam_max > Scalar(0))
      coeff[i] /= lam[i];
    else
      coeff[i] = Scalar(0);
  }
  return es.eigenvectors() * coeff;
}

/// Smallest eigenvalue of a symmetric matrix (symmetrized internally).
template <typename Derived>
typename Derived::Scalar min_eigenvalue(const Eigen::MatrixBase<Derived>& V) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (V.rows() != V.cols()) fail("BadDimension", "min_eigenvalue requires a square matrix");
  detail::require_finite(V, "min_eigenvalue");
  const Mat S = (V.derived() + V.derived().transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) fail("NonFiniteInput", "eigendecomposition failed");
  return es.eigenvalues().minCoeff();
}

/// sqrt(x^T A^{-1} x) for symmetric positive-definite A, via a Cholesky
/// factorization (A^{-1} is never formed). Throws "NotPD" if A is not PD.
template <typename DerivedX, typename DerivedA>
typename DerivedA::Scalar mahalanobis_inv_norm(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedA>& A) {
  using Scalar = typename DerivedA::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;
  if (A.rows() != A.cols() || A.rows() != x.size())
    fail("BadDimension", "mahalanobis_inv_norm requires square A with matching x");
  detail::require_finite(A, "mahalanobis_inv_norm");
  detail::require_finite(x, "mahalanobis_inv_norm");
  const Mat S = (A.derived() + A.derived().transpose()) / Scalar(2);
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) fail("NotPD", "matrix is not positive definite");
  // A = L L^T, so x^T A^{-1} x = ||L^{-1} x||^2.
  const Vec z = llt.matrixL().solve(x.derived());
  return z.norm();
}

namespace detail {

/// In-place fast Walsh-Hadamard transform (unnormalized Sylvester order).
template <typename Scalar>
void fwht(Eigen::Vector<Scalar, Eigen::Dynamic>& y) {
  const Eigen::Index n = y.size();
  for (Eigen::Index stride = n / 2; stride >= 1; stride >>= 1) {
    for (Eigen::Index base = 0; base < n; base += 2 * stride) {
      for (Eigen::Index j = base; j < base + stride; ++j) {
        const Scalar a = y[j];
        const Scalar b = y[j + stride];
        y[j] = a + b;
        y[j + stride] = a - b;
      }
    }
  }
}

}  // namespace detail

/// Applies the randomized rotation U = H * diag(signs) / sqrt(d) (forward) or
/// its transpose (inverse), where H is the Sylvester-ordered Hadamard matrix.
/// d must be a power of two; signs entries must be exactly +-1. U is
/// orthogonal, so norms are preserved to rounding.
template <typename DerivedX, typename DerivedS>
Eigen::Vector<typename DerivedX::Scalar, Eigen::Dynamic> hadamard_rotate(
    const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedS>& signs,
    bool inverse) {
  using Scalar = typename DerivedX::Scalar;
  using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;
  const Eigen::Index d = x.size();
  if (!is_pow2(d)) fail("BadDimension", "hadamard_rotate requires a power-of-two dimension");
  if (signs.size() != d) fail("BadDimension", "signs length must match x");
  detail::require_finite(x, "hadamard_rotate");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (signs[i] != Scalar(1) && signs[i] != Scalar(-1))
      fail("BadDimension", "signs entries must be exactly +1 or -1");
  }
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  Vec y = x.derived();
  if (!inverse) {
    y = signs.derived().cwiseProduct(y);
    detail::fwht<Scalar>(y);
  } else {
    // U^T = diag(signs) * H / sqrt(d) since H is symmetric.
    detail::fwht<Scalar>(y);
    y = signs.derived().cwiseProduct(y);
  }
  return scale * y;
}

/// Projects v onto the closed unit ball (returns v unchanged if ||v|| <= 1).
inline VecD project_unit_ball(const VecD& v) {
  const double n = v.norm();
  return (n > 1.0) ? VecD((1.0 / n) * v) : v;
}

}  // namespace fedban
