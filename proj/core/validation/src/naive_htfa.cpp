#include "factorfit/validation/naive_htfa.hpp"

#include "factorfit/error.hpp"

#include <Eigen/LU>

namespace factorfit::validation {

htfa::GlobalTemplate naive_global_step(const std::vector<Matrix>& centers,
                                       const std::vector<Vector>& widths,
                                       const htfa::GlobalTemplate& templ) {
  if (centers.empty() || centers.size() != widths.size())
    throw ShapeError("global update needs matching non-empty center and width lists");
  const Index k = templ.k();
  const auto n = static_cast<double>(centers.size());
  Matrix mean_centers = Matrix::Zero(k, 3);
  Vector mean_widths = Vector::Zero(k);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    mean_centers += centers[i];
    mean_widths += widths[i];
  }
  mean_centers /= n;
  mean_widths /= n;

  htfa::GlobalTemplate out = templ;
  const Eigen::Matrix3d prior_prec = templ.prior_center_cov.inverse();
  for (Index c = 0; c < k; ++c) {
    const Eigen::Matrix3d post_prec = templ.center_cov[static_cast<std::size_t>(c)].inverse();
    const Eigen::Matrix3d cov = (post_prec + n * prior_prec).inverse();
    const Eigen::Vector3d mu_hat = templ.centers.row(c).transpose();
    const Eigen::Vector3d mu_bar = mean_centers.row(c).transpose();
    out.centers.row(c) = (cov * (post_prec * mu_hat + n * prior_prec * mu_bar)).transpose();
    out.center_cov[static_cast<std::size_t>(c)] = cov;

    const double inv_var = 1.0 / templ.width_var(c);
    const double var = 1.0 / (inv_var + n / templ.prior_width_var);
    out.widths(c) = var * (inv_var * templ.widths(c) + n / templ.prior_width_var * mean_widths(c));
    out.width_var(c) = var;
  }
  return out;
}

}  // namespace factorfit::validation
