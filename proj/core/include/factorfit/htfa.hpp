#pragma once

#include "factorfit/collectives.hpp"
#include "factorfit/kernels.hpp"
#include "factorfit/random.hpp"
#include "factorfit/srm.hpp"
#include "factorfit/trf.hpp"
#include "factorfit/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

/// Hierarchical Topographic Factor Analysis by a distributed MAP estimator.
///
/// Subject i's data X_i (T_i x V_i) is modelled as W_i F_i + E_i where row k
/// of F_i is the radial basis function exp(-|p - mu_ik|^2 / lambda_ik) over
/// voxel positions p. Local centers and widths are perturbations of a global
/// template. The local step alternates ridge weights with two bounded NLLS
/// blocks (centers, then widths) on a random subsample; the global step is a
/// conjugate-normal update with one 3x3 inversion per factor.
///
/// The library stores subjects voxels-by-TRs (see SubjectData); HTFA code
/// works on the transposed TRs-by-voxels view.
namespace factorfit::htfa {

struct GlobalTemplate {
  Matrix centers;                            ///< K x 3
  std::vector<Eigen::Matrix3d> center_cov;   ///< K posterior covariances
  Vector widths;                             ///< K
  Vector width_var;                          ///< K
  Eigen::Matrix3d prior_center_cov = Eigen::Matrix3d::Identity();
  double prior_width_var = 1.0;

  Index k() const noexcept { return centers.rows(); }
};

struct LocalModel {
  Matrix centers;  ///< K x 3
  Vector widths;   ///< K
  Matrix weights;  ///< T x K
  double noise_weight = 0.5;
  double ridge_alpha2 = 1.0;
  /// Cost of the last width-block solve, i.e. the subsampled local objective.
  double objective = 0.0;
};

struct SubsamplePlan {
  double voxel_fraction = 0.25;
  double tr_fraction = 0.10;
  Index max_voxels = 3000;
  Index max_trs = 300;
  bool with_replacement = true;
  std::uint64_t seed = 0;
};

struct HtfaConfig {
  int k = 60;
  int outer_iterations = 10;
  int local_iterations = 10;
  double local_tolerance = 1e-3;
  double width_lower_frac = 0.04;
  double width_upper_frac = 1.80;
  /// Seeds template initialization.
  std::uint64_t seed = 0;
  trf::TrfConfig nlls;
};

/// Throws ConfigError on invalid settings.
void validate(const HtfaConfig& config);
void validate(const SubsamplePlan& plan);

/// Box for centers (grid bounding box, degenerate axes padded by +-0.5) and
/// the interval for widths ([lower_frac, upper_frac] x grid diameter).
struct ParameterBounds {
  Eigen::Vector3d center_lower;
  Eigen::Vector3d center_upper;
  double width_lower = 0.0;
  double width_upper = 0.0;
};

ParameterBounds parameter_bounds(const kernels::VoxelGrid& grid, const HtfaConfig& config);

/// Template from one subject: weighted k-means++ seeding on voxel positions
/// (weights = mean |activation| per voxel) refined by 10 Lloyd sweeps.
/// lambda_k0 is the cluster's weighted mean squared radius clamped to the
/// width bounds, sigma_k0^2 = (0.1 lambda_k0)^2, and the isotropic prior
/// covariance is (diameter / K^(1/3))^2 / 12. Posterior fields start at the
/// priors. Throws ShapeError when V < K and DatasetConsistencyError without
/// coordinates.
GlobalTemplate init_template(const SubjectData& subject, const HtfaConfig& config);

struct Subsample {
  Matrix X;                        ///< T~ x V~
  std::vector<Index> voxel_indices;
  std::vector<Index> tr_indices;
  double phi = 1.0;                ///< (T V) / (T~ V~)
};

/// Sample size per dimension: round((fraction n + max) / 2) clamped to [1, n].
Index subsample_size(Index n, double fraction, Index maximum);

/// Samples TRs and voxels of `x` (T x V).
Subsample subsample(const Matrix& x, const SubsamplePlan& plan, Rng& rng);

/// Ridge solution X F^T (F F^T + alpha^-2 I)^-1.
Matrix update_weights(const Matrix& x, const Matrix& f, double alpha2);

/// Everything a block problem needs besides the free variables. The pointed-to
/// objects must outlive the problems built from it.
struct BlockContext {
  const Matrix* x = nullptr;        ///< T~ x V~ sampled data
  const Matrix* weights = nullptr;  ///< T~ x K sampled weight rows
  const kernels::VoxelGrid* grid = nullptr;
  const std::vector<Index>* voxels = nullptr;  ///< sampled voxel indices into grid
  const GlobalTemplate* prior = nullptr;
  double noise_weight = 0.5;        ///< 1 / (2 sigma^2)
  double phi = 1.0;
  ParameterBounds bounds;
};

/// 3K center variables (row-major K x 3), widths fixed; T~ V~ data
/// residuals plus K prior residuals sqrt(1/(2 phi)) |L^-1 (mu_k - mu^_k)|
/// with L L^T = Sigma_mu.
trf::LeastSquaresProblem build_center_problem(const BlockContext& ctx, const Vector& widths);

/// K width variables, centers fixed; T~ V~ data residuals plus K prior
/// residuals sqrt(1/(2 phi sigma_lambda^2)) (lambda_k - lambda^_k).
trf::LeastSquaresProblem build_width_problem(const BlockContext& ctx, const Matrix& centers);

/// Where a subject's local step is in the global iteration, for seeding.
struct StepIndex {
  Index subject = 0;
  int outer = 0;
};

/// Resets the local parameters to the template, then alternates
/// {subsample, ridge weights, center block, width block} until the relative
/// change of centers and widths drops below local_tolerance or
/// local_iterations is reached. With local_iterations == 0 `local` is
/// returned unchanged. `x` is T x V.
LocalModel local_step(const Matrix& x, const kernels::VoxelGrid& grid,
                      const GlobalTemplate& templ, LocalModel local, const HtfaConfig& config,
                      const SubsamplePlan& plan, StepIndex at);

/// Conjugate update of the template from N subjects' local estimates, using
/// A = (Sigma^_k + Sigma_mu / N)^-1 and b = 1 / (sigma^_k^2 + sigma_lambda^2 / N).
GlobalTemplate global_step(const std::vector<Matrix>& centers, const std::vector<Vector>& widths,
                           const GlobalTemplate& templ);

/// Pearson correlation between the columns of `weights`; zero-variance
/// columns correlate 0 with everything and keep a unit diagonal.
Matrix connectivity_matrix(const Matrix& weights);

struct FitResult {
  GlobalTemplate templ;
  Index first_subject = 0;
  std::vector<std::string> subject_ids;
  std::vector<LocalModel> locals;  ///< this rank's subjects
  /// Sum of the subjects' local objectives per outer iteration; root only.
  std::vector<double> objective;
};

/// Fits the model. `subjects` are this rank's block of the global subject
/// list, blocks in rank order; every rank needs at least one subject and
/// every subject needs coordinates.
FitResult fit(const std::vector<SubjectData>& subjects, const HtfaConfig& config,
              const SubsamplePlan& plan, comm::Communicator& comm);

Bytes encode(const GlobalTemplate& t);
GlobalTemplate decode_template(std::span<const std::uint8_t> bytes);

}  // namespace factorfit::htfa
