#pragma once

#include <Eigen/Dense>

#include <complex>

namespace ovep {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

/// True when every entry is finite (no NaN/Inf).
inline bool all_finite(const CMatrix& a) { return a.allFinite(); }
inline bool all_finite(const CVector& v) { return v.allFinite(); }
inline bool all_finite(const RVector& v) { return v.allFinite(); }

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
/// Throws NotPositiveDefinite when a pivot falls at or below
/// 1e-14 * trace(A)/dim.
CMatrix hpd_inverse(const CMatrix& a);

/// (sigma_z^{-1} H^H H + D(d))^{-1} through the Woodbury identity:
///   D^{-1} - D^{-1} H^H (sigma_z I + H D^{-1} H^H)^{-1} H D^{-1},
/// inverting only the rows(H) x rows(H) core. Requires d > 0 entrywise.
CMatrix woodbury_inverse(const CMatrix& h, const RVector& d, double sigma_z);

/// Hermitian PSD square root S with S S^H = R, via eigendecomposition.
/// Eigenvalues in [-1e-10 * trace/dim, 0) are clamped to zero; anything
/// below that throws NotPsd.
CMatrix psd_sqrt(const CMatrix& r);

}  // namespace ovep
