#include "factorfit/error.hpp"
#include "factorfit/htfa.hpp"

#include <string>

namespace factorfit::htfa {

GlobalTemplate global_step(const std::vector<Matrix>& centers, const std::vector<Vector>& widths,
                           const GlobalTemplate& templ) {
  const std::size_t n = centers.size();
  const Index k = templ.k();
  if (n == 0 || widths.size() != n) throw ShapeError("global step needs one estimate per subject");
  if (templ.center_cov.size() != static_cast<std::size_t>(k))
    throw ShapeError("template has " + std::to_string(templ.center_cov.size()) +
                     " center covariances for " + std::to_string(k) + " factors");

  Matrix mean_centers = Matrix::Zero(k, 3);
  Vector mean_widths = Vector::Zero(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (centers[i].rows() != k || centers[i].cols() != 3 || widths[i].size() != k)
      throw ShapeError("subject " + std::to_string(i) + " estimate has the wrong shape");
    mean_centers += centers[i];
    mean_widths += widths[i];
  }
  const double nn = static_cast<double>(n);
  mean_centers /= nn;
  mean_widths /= nn;

  const Eigen::Matrix3d p = templ.prior_center_cov / nn;
  const double q = templ.prior_width_var / nn;

  GlobalTemplate out = templ;
  for (Index c = 0; c < k; ++c) {
    const Eigen::Matrix3d& cov = templ.center_cov[static_cast<std::size_t>(c)];
    const Eigen::Matrix3d a = kernels::spd_inverse(Matrix(cov + p));
    const Eigen::Vector3d mu_hat = templ.centers.row(c).transpose();
    const Eigen::Vector3d mu_bar = mean_centers.row(c).transpose();
    out.centers.row(c) = (p * (a * mu_hat) + cov * (a * mu_bar)).transpose();
    const Eigen::Matrix3d new_cov = cov * a * p;
    out.center_cov[static_cast<std::size_t>(c)] = 0.5 * (new_cov + new_cov.transpose());

    const double s2 = templ.width_var(c);
    const double b = 1.0 / (s2 + q);
    out.widths(c) = b * q * templ.widths(c) + s2 * b * mean_widths(c);
    out.width_var(c) = s2 * b * q;
  }
  return out;
}

}  // namespace factorfit::htfa
