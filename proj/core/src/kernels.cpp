#include "factorfit/kernels.hpp"

#include "factorfit/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace factorfit::kernels {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidInputError(std::string(what) + ": non-finite entries");
}

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

VoxelGrid::VoxelGrid(Matrix positions) : positions_(std::move(positions)) {
  if (positions_.cols() != 3 || positions_.rows() < 1)
    throw ShapeError("voxel positions must be V x 3, got " + dims(positions_));
  require_finite(positions_, "voxel positions");

  const Index v = positions_.rows();
  axis_index_.resize(v, 3);
  for (int a = 0; a < 3; ++a) {
    auto& values = axis_values_[static_cast<std::size_t>(a)];
    values.assign(positions_.col(a).data(), positions_.col(a).data() + v);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (Index i = 0; i < v; ++i) {
      const auto it = std::lower_bound(values.begin(), values.end(), positions_(i, a));
      axis_index_(i, a) = static_cast<Index>(it - values.begin());
    }
    lower_(a) = values.front();
    upper_(a) = values.back();
  }
  const auto counts = axis_counts();
  decomposable_ = counts[0] + counts[1] + counts[2] <= v;
}

std::array<Index, 3> VoxelGrid::axis_counts() const noexcept {
  return {static_cast<Index>(axis_values_[0].size()), static_cast<Index>(axis_values_[1].size()),
          static_cast<Index>(axis_values_[2].size())};
}

Matrix zscore_columns(const Matrix& x) {
  require_finite(x, "zscore_columns");
  const Index n = x.rows();
  Matrix out(n, x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (Index r = 0; r < n; ++r) mean += x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index r = 0; r < n; ++r) {
      const double d = x(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    if (var <= 0.0) {
      out.col(c).setZero();
      continue;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    for (Index r = 0; r < n; ++r) out(r, c) = (x(r, c) - mean) * inv_sd;
  }
  return out;
}

double trace_ata(const Matrix& a) {
  require_finite(a, "trace_ata");
  double sum = 0.0;
  const double* p = a.data();
  for (Index i = 0; i < a.size(); ++i) sum += p[i] * p[i];
  return sum;
}

Matrix add_diag(Matrix a, double c) {
  if (a.rows() != a.cols()) throw ShapeError("add_diag needs a square matrix, got " + dims(a));
  a.diagonal().array() += c;
  return a;
}

Matrix cholesky_lower(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("Cholesky needs a square matrix, got " + dims(a));
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw DefinitenessError("matrix is not positive definite", j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix spd_inverse(const Matrix& a) {
  const Matrix l = cholesky_lower(a);
  const Index n = a.rows();
  Matrix linv = Matrix::Identity(n, n);
  l.triangularView<Eigen::Lower>().solveInPlace(linv);
  Matrix inv = linv.transpose() * linv;
  return 0.5 * (inv + inv.transpose());
}

Matrix polar_orthogonal(const Matrix& a) {
  if (a.rows() < a.cols())
    throw ShapeError("polar factor needs rows >= cols, got " + dims(a));
  require_finite(a, "polar_orthogonal");
  Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smax > 0.0) || smin < 1e-12 * smax)
    throw RankError("matrix is rank deficient (sigma_min=" + std::to_string(smin) +
                    ", sigma_max=" + std::to_string(smax) + ")");
  Matrix u = svd.matrixU();
  Matrix v = svd.matrixV();
  // Each right singular vector's largest-magnitude entry is made positive.
  for (Index j = 0; j < v.cols(); ++j) {
    Index imax = 0;
    v.col(j).cwiseAbs().maxCoeff(&imax);
    if (v(imax, j) < 0.0) {
      v.col(j) = -v.col(j);
      u.col(j) = -u.col(j);
    }
  }
  return u * v.transpose();
}

namespace {

void check_rbf_args(const Matrix& centers, const Vector& widths) {
  if (centers.cols() != 3 || centers.rows() != widths.size())
    throw ShapeError("RBF centers must be K x 3 with K widths, got " + dims(centers) + " and " +
                     std::to_string(widths.size()) + " widths");
  require_finite(centers, "RBF centers");
  for (Index k = 0; k < widths.size(); ++k)
    if (!(widths(k) > 0.0) || !std::isfinite(widths(k)))
      throw DomainError("RBF width " + std::to_string(k) + " must be positive, got " +
                        std::to_string(widths(k)));
}

// exp(-|p - mu|^2 / lambda) factors over the axes, so each factor is a
// product of three per-axis tables.
template <typename VoxelAt>
Matrix rbf_cached(const Matrix& centers, const Vector& widths, const VoxelGrid& grid, Index count,
                  VoxelAt voxel_at) {
  const Index k_count = centers.rows();
  const auto& axes = grid.axis_values();
  const auto& idx = grid.voxel_axis_index();
  std::array<Matrix, 3> table;  // K x (values on axis a)
  for (int a = 0; a < 3; ++a) {
    const auto& vals = axes[static_cast<std::size_t>(a)];
    auto& t = table[static_cast<std::size_t>(a)];
    t.resize(k_count, static_cast<Index>(vals.size()));
    for (std::size_t j = 0; j < vals.size(); ++j)
      for (Index k = 0; k < k_count; ++k) {
        const double d = vals[j] - centers(k, a);
        t(k, static_cast<Index>(j)) = std::exp(-d * d / widths(k));
      }
  }
  Matrix f(k_count, count);
  for (Index j = 0; j < count; ++j) {
    const Index v = voxel_at(j);
    f.col(j) = table[0].col(idx(v, 0)).cwiseProduct(table[1].col(idx(v, 1))).cwiseProduct(table[2].col(idx(v, 2)));
  }
  return f;
}

template <typename VoxelAt>
Matrix rbf_direct(const Matrix& centers, const Vector& widths, const Matrix& positions, Index count,
                  VoxelAt voxel_at) {
  Matrix f(centers.rows(), count);
  for (Index k = 0; k < centers.rows(); ++k) {
    const double inv_width = 1.0 / widths(k);
    for (Index j = 0; j < count; ++j) {
      const Index v = voxel_at(j);
      const double dx = positions(v, 0) - centers(k, 0);
      const double dy = positions(v, 1) - centers(k, 1);
      const double dz = positions(v, 2) - centers(k, 2);
      f(k, j) = std::exp(-(dx * dx + dy * dy + dz * dz) * inv_width);
    }
  }
  return f;
}

}  // namespace

Matrix rbf_factor_matrix(const Matrix& centers, const Vector& widths, const VoxelGrid& grid) {
  check_rbf_args(centers, widths);
  const auto all = [](Index j) { return j; };
  if (!grid.axis_decomposable())
    return rbf_direct(centers, widths, grid.positions(), grid.voxel_count(), all);
  return rbf_cached(centers, widths, grid, grid.voxel_count(), all);
}

Matrix rbf_factor_matrix(const Matrix& centers, const Vector& widths, const VoxelGrid& grid,
                         std::span<const Index> voxels) {
  check_rbf_args(centers, widths);
  for (Index v : voxels)
    if (v < 0 || v >= grid.voxel_count())
      throw ShapeError("voxel index " + std::to_string(v) + " out of range");
  const auto pick = [voxels](Index j) { return voxels[static_cast<std::size_t>(j)]; };
  const auto count = static_cast<Index>(voxels.size());
  if (!grid.axis_decomposable()) return rbf_direct(centers, widths, grid.positions(), count, pick);
  return rbf_cached(centers, widths, grid, count, pick);
}

Matrix rbf_factor_matrix_direct(const Matrix& centers, const Vector& widths,
                                const Matrix& positions) {
  check_rbf_args(centers, widths);
  if (positions.cols() != 3) throw ShapeError("positions must be V x 3, got " + dims(positions));
  return rbf_direct(centers, widths, positions, positions.rows(), [](Index j) { return j; });
}

double residual_fro(const Matrix& x, const Matrix& w, const Matrix& f) {
  if (w.cols() != f.rows() || x.rows() != w.rows() || x.cols() != f.cols())
    throw ShapeError("residual_fro: X " + dims(x) + " vs W " + dims(w) + " * F " + dims(f));
  constexpr Index block = 256;
  double total = 0.0;
  Matrix r;
  for (Index c0 = 0; c0 < x.cols(); c0 += block) {
    const Index n = std::min(block, x.cols() - c0);
    r.noalias() = x.middleCols(c0, n);
    r.noalias() -= w * f.middleCols(c0, n);
    total += r.squaredNorm();
  }
  return total;
}

}  // namespace factorfit::kernels
