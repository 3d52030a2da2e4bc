#pragma once

#include "factorfit/types.hpp"

#include <array>
#include <span>
#include <vector>

namespace factorfit::kernels {

/// Voxel centers plus a per-axis decomposition of their coordinates.
///
/// `axis_values[a]` holds the sorted unique coordinates along axis `a` and
/// `voxel_axis_index(v, a)` indexes into it, so that
/// `positions(v, a) == axis_values[a][voxel_axis_index(v, a)]` exactly.
class VoxelGrid {
 public:
  /// `positions` is V x 3. Throws ShapeError for other shapes and
  /// InvalidInputError on non-finite coordinates.
  explicit VoxelGrid(Matrix positions);

  Index voxel_count() const noexcept { return positions_.rows(); }
  const Matrix& positions() const noexcept { return positions_; }
  const std::array<std::vector<double>, 3>& axis_values() const noexcept { return axis_values_; }
  const Eigen::Matrix<Index, Eigen::Dynamic, 3>& voxel_axis_index() const noexcept {
    return axis_index_;
  }
  std::array<Index, 3> axis_counts() const noexcept;

  /// True when per-axis lookup tables are cheaper than direct evaluation
  /// (n_x + n_y + n_z <= V). Irregular point clouds report false.
  bool axis_decomposable() const noexcept { return decomposable_; }

  Eigen::Vector3d lower_corner() const noexcept { return lower_; }
  Eigen::Vector3d upper_corner() const noexcept { return upper_; }
  /// Length of the bounding-box diagonal.
  double diameter() const noexcept { return (upper_ - lower_).norm(); }

 private:
  Matrix positions_;
  std::array<std::vector<double>, 3> axis_values_;
  Eigen::Matrix<Index, Eigen::Dynamic, 3> axis_index_;
  Eigen::Vector3d lower_;
  Eigen::Vector3d upper_;
  bool decomposable_ = false;
};

/// Column-wise z-score with population standard deviation. Zero-variance
/// columns come back as zeros.
Matrix zscore_columns(const Matrix& x);

/// trace(A^T A), i.e. the sum of squared entries, without forming A^T A.
double trace_ata(const Matrix& a);

/// A + c I. Throws ShapeError for non-square input.
Matrix add_diag(Matrix a, double c);

/// Lower Cholesky factor of a symmetric positive definite matrix. Only the
/// lower triangle of `a` is read. Throws DefinitenessError naming the pivot.
Matrix cholesky_lower(const Matrix& a);

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
Matrix spd_inverse(const Matrix& a);

/// Orthogonal polar factor U V^T of a tall matrix from its thin SVD.
/// Throws RankError when sigma_min < 1e-12 sigma_max.
Matrix polar_orthogonal(const Matrix& a);

/// K x V factor matrix with entries exp(-|p_v - mu_k|^2 / lambda_k).
/// Uses per-axis squared-distance tables when the grid allows it.
Matrix rbf_factor_matrix(const Matrix& centers, const Vector& widths, const VoxelGrid& grid);

/// Same, restricted to the listed voxels (column j is voxel `voxels[j]`).
Matrix rbf_factor_matrix(const Matrix& centers, const Vector& widths, const VoxelGrid& grid,
                         std::span<const Index> voxels);

/// Direct per-voxel evaluation; the fallback for grids that are not axis
/// decomposable.
Matrix rbf_factor_matrix_direct(const Matrix& centers, const Vector& widths,
                                const Matrix& positions);

/// ||X - W F||_F^2 evaluated in column blocks of F.
double residual_fro(const Matrix& x, const Matrix& w, const Matrix& f);

}  // namespace factorfit::kernels
