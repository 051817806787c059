#include "ovep/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ovep/errors.hpp"

namespace ovep {

namespace {

// Pivot floor relative to the mean diagonal scale of a Hermitian matrix.
double pivot_floor(const CMatrix& a) {
  return 1e-14 * a.diagonal().real().sum() / static_cast<double>(a.rows());
}

Eigen::LLT<CMatrix> checked_llt(const CMatrix& a, const char* who) {
  Eigen::LLT<CMatrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite(std::string(who) + ": Cholesky factorization failed");
  }
  // LLT pivots l_ii are square roots of the reduced diagonal; compare the
  // squared pivot against the relative floor.
  const RVector piv = llt.matrixLLT().diagonal().real();
  if (piv.minCoeff() <= 0.0 || piv.array().square().minCoeff() <= pivot_floor(a)) {
    throw NotPositiveDefinite(std::string(who) + ": pivot below positive-definiteness floor");
  }
  return llt;
}

}  // namespace

CMatrix hpd_inverse(const CMatrix& a) {
  if (a.rows() != a.cols()) {
    throw LengthMismatch("hpd_inverse: matrix must be square");
  }
  const auto llt = checked_llt(a, "hpd_inverse");
  return llt.solve(CMatrix::Identity(a.rows(), a.rows()));
}

CMatrix woodbury_inverse(const CMatrix& h, const RVector& d, double sigma_z) {
  if (h.cols() != d.size()) {
    throw LengthMismatch("woodbury_inverse: cols(H) must match len(d)");
  }
  if (sigma_z <= 0.0) {
    throw ConfigError("woodbury_inverse: sigma_z must be positive");
  }
  if (d.size() == 0 || (d.array() <= 0.0).any()) {
    throw ConfigError("woodbury_inverse: d must be positive entrywise");
  }
  const RVector dinv = d.cwiseInverse();
  const CMatrix hd = h * dinv.asDiagonal();  // H D^{-1}
  CMatrix core = hd * h.adjoint();           // H D^{-1} H^H
  core.diagonal().array() += sigma_z;
  const auto llt = checked_llt(core, "woodbury_inverse");
  const CMatrix kinv_hd = llt.solve(hd);
  CMatrix out = -hd.adjoint() * kinv_hd;
  out.diagonal() += dinv.cast<Complex>();
  return out;
}

CMatrix psd_sqrt(const CMatrix& r) {
  if (r.rows() != r.cols()) {
    throw LengthMismatch("psd_sqrt: matrix must be square");
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> es(r);
  if (es.info() != Eigen::Success) {
    throw NumericalError("psd_sqrt: eigendecomposition failed");
  }
  const RVector ev = es.eigenvalues();
  const double clamp_floor =
      -1e-10 * r.diagonal().real().sum() / static_cast<double>(r.rows());
  if (ev.minCoeff() < clamp_floor) {
    throw NotPsd("psd_sqrt: eigenvalue below PSD clamp threshold");
  }
  const RVector s = ev.cwiseMax(0.0).cwiseSqrt();
  CMatrix out = es.eigenvectors() * s.asDiagonal() * es.eigenvectors().adjoint();
  out = CMatrix((out + out.adjoint()) * 0.5);  // exact Hermitian symmetry
  return out;
}

}  // namespace ovep
