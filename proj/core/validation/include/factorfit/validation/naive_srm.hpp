#pragma once

#include "factorfit/types.hpp"

#include <vector>

/// Direct SRM formulas that build the full V x V marginal covariance
/// Phi = W Sigma_s W^T + Psi. Only usable for small V; kept for checking the
/// optimized path.
namespace factorfit::validation {

/// Largest stacked voxel count the direct formulas accept.
inline constexpr Index kNaiveVoxelLimit = 2000;

struct NaivePosterior {
  Matrix S;      ///< K x T posterior means
  Matrix var_s;  ///< posterior covariance of each s_t
};

/// E[s_t | x] = Sigma_s^T W^T Phi^-1 xhat_t and
/// Var[s_t | x] = Sigma_s - Sigma_s^T W^T Phi^-1 W Sigma_s.
/// Throws ShapeError past kNaiveVoxelLimit.
NaivePosterior naive_e_step(const std::vector<Matrix>& w, const std::vector<double>& rho2,
                            const Matrix& sigma_s, const std::vector<Matrix>& xhat);

/// sum_t log N(xhat_t; 0, Phi) through a Cholesky factor of Phi.
double naive_log_likelihood(const std::vector<Matrix>& w, const std::vector<double>& rho2,
                            const Matrix& sigma_s, const std::vector<Matrix>& xhat);

}  // namespace factorfit::validation
