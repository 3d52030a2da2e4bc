#include "factorfit/error.hpp"
#include "factorfit/kernels.hpp"
#include "factorfit/random.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>

using namespace factorfit;
using namespace factorfit::kernels;

namespace {

Matrix grid_points(Index nx, Index ny, Index nz, double spacing = 1.0) {
  Matrix p(nx * ny * nz, 3);
  Index r = 0;
  for (Index z = 0; z < nz; ++z)
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x) p.row(r++) << spacing * x, spacing * y, spacing * z;
  return p;
}

}  // namespace

TEST(Zscore, TwoValueColumn) {
  Matrix x(2, 1);
  x << 2, 4;
  const Matrix z = zscore_columns(x);
  EXPECT_DOUBLE_EQ(z(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(z(1, 0), 1.0);
}

TEST(Zscore, ConstantColumnBecomesZero) {
  const Matrix z = zscore_columns(Matrix::Constant(3, 1, 5.0));
  EXPECT_EQ(z, Matrix::Zero(3, 1));
}

TEST(Zscore, RandomMoments) {
  Rng rng(1);
  const Matrix z = zscore_columns(rng.normal_matrix(50, 7) * 3.0 + Matrix::Constant(50, 7, 2.0));
  for (Index c = 0; c < z.cols(); ++c) {
    const double mean = z.col(c).mean();
    EXPECT_LE(std::abs(mean), 1e-12);
    EXPECT_NEAR((z.col(c).array() - mean).square().mean(), 1.0, 1e-12);
  }
}

TEST(Zscore, IdempotentAndRejectsNonFinite) {
  Rng rng(2);
  const Matrix z = zscore_columns(rng.normal_matrix(30, 4));
  EXPECT_LE((zscore_columns(z) - z).cwiseAbs().maxCoeff(), 1e-12);
  Matrix bad = z;
  bad(3, 1) = std::nan("");
  EXPECT_THROW(zscore_columns(bad), InvalidInputError);
}

TEST(TraceAta, Examples) {
  EXPECT_DOUBLE_EQ(trace_ata(Matrix::Identity(2, 2)), 2.0);
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  EXPECT_DOUBLE_EQ(trace_ata(a), 30.0);
  Rng rng(3);
  const Matrix r = rng.normal_matrix(20, 6);
  EXPECT_NEAR(trace_ata(r), (r.transpose() * r).trace(), 1e-10);
  EXPECT_EQ(trace_ata(Matrix::Zero(4, 3)), 0.0);
}

TEST(AddDiag, Examples) {
  EXPECT_EQ(add_diag(Matrix::Zero(3, 3), 1.0), Matrix::Identity(3, 3));
  EXPECT_EQ(add_diag(Matrix::Identity(2, 2), -1.0), Matrix::Zero(2, 2));
  Rng rng(4);
  const Matrix a = rng.normal_matrix(8, 8);
  const Matrix b = add_diag(a, 0.5);
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j) {
      if (i == j)
        EXPECT_EQ(b(i, j), a(i, j) + 0.5);
      else
        EXPECT_EQ(b(i, j), a(i, j));
    }
  EXPECT_THROW(add_diag(Matrix::Zero(2, 3), 1.0), ShapeError);
}

TEST(SpdInverse, Examples) {
  EXPECT_LE((spd_inverse(Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 0.0);
  Matrix d = Eigen::Vector2d(2, 4).asDiagonal();
  const Matrix inv = spd_inverse(d);
  EXPECT_DOUBLE_EQ(inv(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(inv(1, 1), 0.25);
  Rng rng(5);
  const Matrix c = rng.normal_matrix(6, 6);
  const Matrix b = add_diag(c.transpose() * c, 1.0);
  const Matrix bi = spd_inverse(b);
  EXPECT_LE((b * bi - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(bi, bi.transpose());
}

TEST(SpdInverse, ConditionedUpTo1e6) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = polar_orthogonal(rng.normal_matrix(5, 5));
    Vector ev(5);
    for (Index i = 0; i < 5; ++i) ev(i) = std::pow(10.0, 6.0 * static_cast<double>(i) / 4.0);
    const Matrix a = q * ev.asDiagonal() * q.transpose();
    const Matrix sym = 0.5 * (a + a.transpose());
    EXPECT_LE((sym * spd_inverse(sym) - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SpdInverse, NonSpdNamesPivot) {
  Matrix a = Matrix::Identity(3, 3);
  a(2, 2) = -1.0;
  try {
    spd_inverse(a);
    FAIL();
  } catch (const DefinitenessError& e) {
    EXPECT_EQ(e.pivot(), 2);
  }
}

TEST(Polar, OrthonormalInputIsFixed) {
  Rng rng(7);
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(6, 3));
  const Matrix q = qr.householderQ() * Matrix::Identity(6, 3);
  EXPECT_LE((polar_orthogonal(q) - q).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Polar, PositiveDiagonalScaling) {
  Matrix a = Matrix::Zero(4, 2);
  a(0, 0) = 2;
  a(1, 1) = 3;
  const Matrix w = polar_orthogonal(a);
  Matrix expect = Matrix::Zero(4, 2);
  expect(0, 0) = 1;
  expect(1, 1) = 1;
  EXPECT_LE((w - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Polar, MatchesEigendecompositionOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = rng.normal_matrix(30, 5);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a.transpose() * a);
    const Matrix inv_sqrt =
        eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    const Matrix w = polar_orthogonal(a);
    EXPECT_LE((w - a * inv_sqrt).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((w.transpose() * w - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Polar, RankDeficientThrows) {
  Matrix a = Matrix::Zero(5, 2);
  a(0, 0) = 1;
  EXPECT_THROW(polar_orthogonal(a), RankError);
  EXPECT_THROW(polar_orthogonal(Matrix::Zero(4, 3)), RankError);
}

TEST(VoxelGridTest, ReconstructsPositionsExactly) {
  Rng rng(9);
  const Matrix p = grid_points(4, 3, 5, 2.5);
  const VoxelGrid g(p);
  EXPECT_TRUE(g.axis_decomposable());
  const auto counts = g.axis_counts();
  EXPECT_EQ(counts[0], 4);
  EXPECT_EQ(counts[1], 3);
  EXPECT_EQ(counts[2], 5);
  for (Index v = 0; v < p.rows(); ++v)
    for (int a = 0; a < 3; ++a)
      EXPECT_EQ(p(v, a), g.axis_values()[static_cast<std::size_t>(a)]
                             [static_cast<std::size_t>(g.voxel_axis_index()(v, a))]);
  EXPECT_GE(counts[0] * counts[1] * counts[2], g.voxel_count());
  EXPECT_THROW(VoxelGrid(Matrix::Zero(3, 2)), ShapeError);
}

TEST(VoxelGridTest, IrregularCloudFallsBackToDirect) {
  Rng rng(10);
  const VoxelGrid g(rng.normal_matrix(6, 3));
  EXPECT_FALSE(g.axis_decomposable());
  Matrix c = rng.normal_matrix(2, 3);
  const Vector w = Vector::Constant(2, 1.5);
  EXPECT_LE((rbf_factor_matrix(c, w, g) - rbf_factor_matrix_direct(c, w, g.positions())).cwiseAbs().maxCoeff(),
            0.0);
}

TEST(Rbf, UnitValues) {
  const VoxelGrid g(grid_points(3, 3, 3));
  Matrix c(2, 3);
  c << 1, 1, 1, 0, 0, 0;
  const Vector w = Eigen::Vector2d(1.0, 2.0);
  const Matrix f = rbf_factor_matrix(c, w, g);
  // Voxel (1,1,1) is row 13 of the grid.
  EXPECT_DOUBLE_EQ(f(0, 13), 1.0);
  // Voxel (1,1,0) is at squared distance 2 from the origin.
  EXPECT_NEAR(f(1, 4), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(std::exp(-1.0), 0.367879, 1e-6);
}

TEST(Rbf, CachedEqualsDirect) {
  Rng rng(11);
  const VoxelGrid g(grid_points(11, 9, 7));
  for (int trial = 0; trial < 5; ++trial) {
    Matrix c(5, 3);
    for (Index k = 0; k < 5; ++k) c.row(k) << 10 * rng.uniform(), 8 * rng.uniform(), 6 * rng.uniform();
    Vector w(5);
    for (Index k = 0; k < 5; ++k) w(k) = 0.5 + 5 * rng.uniform();
    const Matrix cached = rbf_factor_matrix(c, w, g);
    const Matrix direct = rbf_factor_matrix_direct(c, w, g.positions());
    EXPECT_LE((cached - direct).cwiseAbs().maxCoeff(), 1e-14);
    const std::vector<Index> pick{3, 0, 77, 200, 3};
    const Matrix sub = rbf_factor_matrix(c, w, g, pick);
    for (std::size_t j = 0; j < pick.size(); ++j)
      EXPECT_LE((sub.col(static_cast<Index>(j)) - direct.col(pick[j])).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Rbf, NonPositiveWidthIsDomainError) {
  const VoxelGrid g(grid_points(2, 2, 2));
  EXPECT_THROW(rbf_factor_matrix(Matrix::Zero(1, 3), Vector::Zero(1), g), DomainError);
  EXPECT_THROW(rbf_factor_matrix(Matrix::Zero(1, 3), Vector::Constant(1, -1.0), g), DomainError);
}

TEST(ResidualFro, Examples) {
  Rng rng(12);
  const Matrix w = rng.normal_matrix(12, 3);
  const Matrix f = rng.normal_matrix(3, 40);
  EXPECT_NEAR(residual_fro(w * f, w, f), 0.0, 1e-20 + 1e-12 * (w * f).squaredNorm());
  const Matrix x = rng.normal_matrix(12, 40);
  EXPECT_DOUBLE_EQ(residual_fro(x, Matrix::Zero(12, 3), f), trace_ata(x));
  EXPECT_NEAR(residual_fro(x, w, f), (x - w * f).squaredNorm(), 1e-10);
  EXPECT_THROW(residual_fro(x, w, Matrix::Zero(2, 40)), ShapeError);
}
