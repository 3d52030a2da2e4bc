#include "factorfit/validation/naive_srm.hpp"

#include "factorfit/error.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>
#include <string>

namespace factorfit::validation {

namespace {

struct Stacked {
  Matrix w;     ///< V x K
  Vector psi;   ///< diagonal of Psi
  Matrix xhat;  ///< V x T
};

Stacked stack(const std::vector<Matrix>& w, const std::vector<double>& rho2, const std::vector<Matrix>& xhat) {
  if (w.empty() || w.size() != rho2.size() || w.size() != xhat.size())
    throw ShapeError("naive SRM needs matching non-empty W, rho2 and data lists");
  Index v = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].rows() != xhat[i].rows() || w[i].cols() != w[0].cols() || xhat[i].cols() != xhat[0].cols())
      throw ShapeError("subject " + std::to_string(i) + " has inconsistent shapes");
    v += w[i].rows();
  }
  if (v > kNaiveVoxelLimit)
    throw ShapeError("naive SRM limited to " + std::to_string(kNaiveVoxelLimit) + " stacked voxels, got " +
                     std::to_string(v));
  Stacked s{Matrix(v, w[0].cols()), Vector(v), Matrix(v, xhat[0].cols())};
  Index at = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Index vi = w[i].rows();
    s.w.middleRows(at, vi) = w[i];
    s.psi.segment(at, vi).setConstant(rho2[i]);
    s.xhat.middleRows(at, vi) = xhat[i];
    at += vi;
  }
  return s;
}

Eigen::LLT<Matrix> factor_phi(const Stacked& s, const Matrix& sigma_s) {
  Matrix phi = s.w * sigma_s * s.w.transpose();
  phi.diagonal() += s.psi;
  Eigen::LLT<Matrix> llt(phi);
  if (llt.info() != Eigen::Success) throw DefinitenessError("Phi is not positive definite", -1);
  return llt;
}

}  // namespace

NaivePosterior naive_e_step(const std::vector<Matrix>& w, const std::vector<double>& rho2,
                            const Matrix& sigma_s, const std::vector<Matrix>& xhat) {
  const Stacked s = stack(w, rho2, xhat);
  const auto llt = factor_phi(s, sigma_s);
  const Matrix phi_inv = llt.solve(Matrix::Identity(s.w.rows(), s.w.rows()));
  const Matrix a = sigma_s.transpose() * s.w.transpose() * phi_inv;
  return {a * s.xhat, sigma_s - a * s.w * sigma_s};
}

double naive_log_likelihood(const std::vector<Matrix>& w, const std::vector<double>& rho2,
                            const Matrix& sigma_s, const std::vector<Matrix>& xhat) {
  const Stacked s = stack(w, rho2, xhat);
  const auto llt = factor_phi(s, sigma_s);
  const Matrix l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const Matrix z = llt.matrixL().solve(s.xhat);
  const auto v = static_cast<double>(s.w.rows());
  const auto t = static_cast<double>(s.xhat.cols());
  return -0.5 * (z.squaredNorm() + t * logdet + t * v * std::log(2.0 * std::numbers::pi));
}

}  // namespace factorfit::validation
