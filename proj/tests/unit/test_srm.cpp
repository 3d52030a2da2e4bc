#include "factorfit/error.hpp"
#include "factorfit/random.hpp"
#include "factorfit/srm.hpp"
#include "factorfit/validation/naive_srm.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <gtest/gtest.h>

#include <cmath>

using namespace factorfit;
using namespace factorfit::srm;

namespace {

Matrix random_spd(Rng& rng, Index n) {
  const Matrix a = rng.normal_matrix(n, n);
  Matrix s = a * a.transpose() / static_cast<double>(n);
  s.diagonal().array() += 0.2;
  return s;
}

double max_abs(const Matrix& a) { return a.cwiseAbs().maxCoeff(); }

std::vector<SubjectData> generative(Rng& rng, int n, Index v, Index t, Index k, double noise) {
  const Matrix s = rng.normal_matrix(k, t);
  std::vector<SubjectData> out;
  for (int i = 0; i < n; ++i) {
    Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(v, k));
    const Matrix w = qr.householderQ() * Matrix::Identity(v, k);
    const Matrix mu = rng.normal_matrix(v, 1).replicate(1, t);
    out.push_back({"s" + std::to_string(i), w * s + mu + noise * rng.normal_matrix(v, t), std::nullopt});
  }
  return out;
}

}  // namespace

TEST(Demean, Examples) {
  Matrix x(2, 2);
  x << 1, 3, 2, 2;
  const auto d = demean(x);
  EXPECT_EQ(d.mu, Eigen::Vector2d(2, 2));
  Matrix expect(2, 2);
  expect << -1, 1, 0, 0;
  EXPECT_EQ(d.xhat, expect);
  const auto again = demean(d.xhat);
  EXPECT_EQ(again.xhat, d.xhat);
  EXPECT_EQ(again.mu, Vector::Zero(2));
  Rng rng(1);
  EXPECT_LE(max_abs(demean(rng.normal_matrix(100, 20)).xhat.rowwise().sum()), 1e-10);
}

TEST(InitSubject, OrthogonalAndDeterministic) {
  SrmConfig cfg;
  cfg.k = 5;
  cfg.seed = 3;
  const Matrix sq = init_subject(5, cfg, 0);
  EXPECT_NEAR(std::abs(sq.determinant()), 1.0, 1e-8);
  const Matrix a = init_subject(12, cfg, 2);
  EXPECT_EQ(a, init_subject(12, cfg, 2));
  EXPECT_LE(max_abs(a.transpose() * a - Matrix::Identity(5, 5)), 1e-12);
  SrmConfig other = cfg;
  other.seed = 4;
  EXPECT_GT((a - init_subject(12, other, 2)).norm(), 0.0);
  EXPECT_THROW(init_subject(4, cfg, 0), ShapeError);
}

TEST(EStepLocal, Examples) {
  Rng rng(2);
  const Matrix x = rng.normal_matrix(6, 4);
  Matrix w = Matrix::Zero(6, 2);
  w(0, 0) = w(1, 1) = 1;
  EXPECT_EQ(e_step_local(w, 1.0, x), x.topRows(2));
  EXPECT_EQ(e_step_local(w, 1.0, Matrix::Zero(6, 4)), Matrix::Zero(2, 4));
  const Matrix wr = init_subject(6, SrmConfig{2, 1, 5, {}}, 0);
  EXPECT_LE(max_abs(e_step_local(wr, 0.3, x) - wr.transpose() * x / 0.3), 1e-12);
}

TEST(EStepGlobal, Examples) {
  Rng rng(3);
  const Matrix reduced = rng.normal_matrix(3, 5);
  const auto p = e_step_global(reduced, Matrix::Identity(3, 3), 1.0);
  EXPECT_LE(max_abs(p.S - 0.5 * reduced), 1e-15);
  EXPECT_LE(max_abs(p.var_s - 0.5 * Matrix::Identity(3, 3)), 1e-15);
  EXPECT_EQ(e_step_global(Matrix::Zero(3, 5), Matrix::Identity(3, 3), 1.0).S, Matrix::Zero(3, 5));
  Matrix singular = Matrix::Zero(3, 3);
  EXPECT_THROW(e_step_global(reduced, singular, 1.0), DefinitenessError);
}

TEST(EStepGlobal, MatchesNaiveOracle) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng = Rng::stream(4, {static_cast<std::uint64_t>(trial)});
    std::vector<Matrix> w, xhat;
    std::vector<double> rho2;
    Matrix reduced = Matrix::Zero(4, 15);
    double rho0 = 0;
    for (int i = 0; i < 3; ++i) {
      w.push_back(init_subject(20, SrmConfig{4, 1, static_cast<std::uint64_t>(trial), {}}, i));
      rho2.push_back(0.3 + rng.uniform());
      xhat.push_back(demean(rng.normal_matrix(20, 15)).xhat);
      reduced += e_step_local(w.back(), rho2.back(), xhat.back());
      rho0 += 1.0 / rho2.back();
    }
    const Matrix sigma = random_spd(rng, 4);
    const auto fast = e_step_global(reduced, sigma, rho0);
    const auto slow = validation::naive_e_step(w, rho2, sigma, xhat);
    EXPECT_LE(max_abs(fast.S - slow.S), 1e-8);
    EXPECT_LE(max_abs(fast.var_s - slow.var_s), 1e-8);

    // Sigma update equals the average of E[s s^T] from the naive posterior.
    const auto upd = update_sigma_s(sigma, rho0, fast.S);
    const Matrix naive = slow.var_s + slow.S * slow.S.transpose() / 15.0;
    EXPECT_LE(max_abs(upd.sigma_s - naive), 1e-8);
    EXPECT_NEAR(upd.trace, naive.trace(), 1e-8);
  }
}

TEST(NaiveOracle, RefusesLargeProblems) {
  std::vector<Matrix> w{Matrix::Zero(validation::kNaiveVoxelLimit + 1, 1)};
  std::vector<Matrix> x{Matrix::Zero(validation::kNaiveVoxelLimit + 1, 2)};
  EXPECT_THROW(validation::naive_e_step(w, {1.0}, Matrix::Identity(1, 1), x), ShapeError);
}

TEST(UpdateSigma, Examples) {
  const auto u = update_sigma_s(Matrix::Identity(3, 3), 1.0, Matrix::Zero(3, 4));
  EXPECT_LE(max_abs(u.sigma_s - 0.5 * Matrix::Identity(3, 3)), 1e-15);
  EXPECT_NEAR(u.trace, 1.5, 1e-15);
  const auto s = update_sigma_s(Matrix::Identity(1, 1), 1.0, Matrix::Constant(1, 1, 2.0));
  EXPECT_NEAR(s.sigma_s(0, 0), 4.5, 1e-15);
}

TEST(MStep, NoiselessRecoversMapping) {
  Rng rng(5);
  Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(10, 3));
  const Matrix w_true = qr.householderQ() * Matrix::Identity(10, 3);
  const Matrix s = rng.normal_matrix(3, 8);
  const Matrix xhat = w_true * s;
  // With a zero posterior covariance the trace term is trace(S S^T)/T.
  const auto u = m_step_subject(xhat, s, (s * s.transpose()).trace() / 8.0);
  EXPECT_LE(max_abs(u.W - w_true), 1e-10);
  EXPECT_LE(u.rho2, 1e-10);
  EXPECT_GE(u.rho2, 1e-12);
  EXPECT_THROW(m_step_subject(xhat, Matrix::Zero(3, 8), 0.0), RankError);
}

TEST(MStep, NoiseVarianceMatchesExpectedResidual) {
  Rng rng(6);
  const Index v = 15, t = 12, k = 3;
  const Matrix xhat = demean(rng.normal_matrix(v, t)).xhat;
  const Matrix s = rng.normal_matrix(k, t);
  const Matrix var_s = random_spd(rng, k);
  const Matrix sigma_new = var_s + s * s.transpose() / static_cast<double>(t);
  const auto u = m_step_subject(xhat, s, sigma_new.trace());
  // E||x_t - W s_t||^2 = ||x_t - W E s_t||^2 + tr(W var_s W^T) with W^T W = I.
  const double expected = ((xhat - u.W * s).squaredNorm() + static_cast<double>(t) * var_s.trace()) /
                          static_cast<double>(t * v);
  EXPECT_NEAR(u.rho2, expected, 1e-8);
  EXPECT_LE(max_abs(u.W.transpose() * u.W - Matrix::Identity(k, k)), 1e-10);
}

TEST(Fit, GenerativeReconstruction) {
  Rng rng(7);
  auto subjects = generative(rng, 1, 8, 6, 2, 1e-3);
  const Matrix xhat = demean(subjects[0].X).xhat;
  auto comm = comm::make_serial();
  SrmConfig cfg{2, 20, 1, {}};
  const auto m = fit(subjects, cfg, *comm);
  const double rel = (xhat - m.W[0] * m.S).squaredNorm() / xhat.squaredNorm();
  EXPECT_LE(rel, 1e-3);
  EXPECT_EQ(m.iterations_run, 20);
  EXPECT_EQ(m.log_likelihood.size(), 21u);
}

TEST(Fit, InvariantsEveryIteration) {
  Rng rng(8);
  auto subjects = generative(rng, 3, 25, 30, 3, 0.5);
  std::vector<Matrix> xhat;
  for (const auto& s : subjects) xhat.push_back(demean(s.X).xhat);
  auto comm = comm::make_serial();
  SrmConfig cfg{3, 20, 2, {}};
  double previous = -INFINITY;
  fit(subjects, cfg, *comm, [&](int, const SrmModel& m) {
    double rho0 = 0;
    for (const auto& w : m.W) EXPECT_LE(max_abs(w.transpose() * w - Matrix::Identity(3, 3)), 1e-8);
    for (double r : m.rho2) {
      EXPECT_GT(r, 0.0);
      rho0 += 1.0 / r;
    }
    (void)rho0;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.sigma_s);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    EXPECT_LE(max_abs(m.sigma_s - m.sigma_s.transpose()), 0.0);
    const double ll = validation::naive_log_likelihood(m.W, m.rho2, m.sigma_s, xhat);
    EXPECT_GE(ll, previous - 1e-9);
    previous = ll;
  });
}

TEST(Fit, Rho0ConsistentAndTolerance) {
  Rng rng(9);
  auto subjects = generative(rng, 2, 12, 10, 2, 0.1);
  auto comm = comm::make_serial();
  SrmConfig cfg{2, 50, 3, 1e-6};
  const auto m = fit(subjects, cfg, *comm);
  EXPECT_LT(m.iterations_run, 50);
  double rho0 = 0;
  for (double r : m.rho2_all) rho0 += 1.0 / r;
  EXPECT_NEAR(m.rho0, rho0, 1e-12 * rho0);
}

TEST(Fit, ThreadsMatchSerialBitwise) {
  Rng rng(10);
  auto subjects = generative(rng, 4, 14, 9, 3, 0.2);
  SrmConfig cfg{3, 6, 4, {}};
  auto serial_comm = comm::make_serial();
  const auto serial = fit(subjects, cfg, *serial_comm);
  comm::ThreadGroup::run(2, [&](comm::Communicator& c) {
    const auto range = comm::block_partition(4, c.size(), c.rank());
    std::vector<SubjectData> mine(subjects.begin() + range.begin, subjects.begin() + range.end);
    const auto m = fit(mine, cfg, c);
    EXPECT_EQ(m.S, serial.S);
    for (Index i = 0; i < range.size(); ++i)
      EXPECT_EQ(m.W[static_cast<std::size_t>(i)], serial.W[static_cast<std::size_t>(range.begin + i)]);
    if (c.is_root()) {
      EXPECT_EQ(m.sigma_s, serial.sigma_s);
      EXPECT_EQ(m.rho2_all, serial.rho2_all);
    }
  });
}

TEST(Fit, ConfigAndInputErrors) {
  auto comm = comm::make_serial();
  Rng rng(11);
  auto subjects = generative(rng, 2, 6, 5, 2, 0.1);
  EXPECT_THROW(fit(subjects, SrmConfig{2, 0, 0, {}}, *comm), ConfigError);
  EXPECT_THROW(fit(subjects, SrmConfig{0, 3, 0, {}}, *comm), ConfigError);
  EXPECT_THROW(fit(subjects, SrmConfig{7, 3, 0, {}}, *comm), ShapeError);
  auto uneven = subjects;
  uneven[1].X = rng.normal_matrix(6, 4);
  EXPECT_THROW(fit(uneven, SrmConfig{2, 3, 0, {}}, *comm), Error);
  auto bad = subjects;
  bad[0].X(0, 0) = std::nan("");
  EXPECT_THROW(fit(bad, SrmConfig{2, 3, 0, {}}, *comm), InvalidInputError);
}

TEST(ProjectMap, Examples) {
  Rng rng(12);
  auto subjects = generative(rng, 2, 4, 12, 4, 0.1);
  subjects.push_back({"tall", rng.normal_matrix(9, 12), std::nullopt});
  auto comm = comm::make_serial();
  const auto m = fit(subjects, SrmConfig{4, 5, 0, {}}, *comm);
  EXPECT_LE(max_abs(project(m, 0, m.mu[0])), 1e-15);
  const Vector x = rng.normal_matrix(4, 1).col(0);
  EXPECT_LE(max_abs(map_between(m, 0, 0, x) - x), 1e-10);
  const Vector y = rng.normal_matrix(9, 1).col(0);
  const Vector once = map_between(m, 2, 2, y);
  EXPECT_LE(max_abs(map_between(m, 2, 2, once) - once), 1e-10);
  EXPECT_EQ(map_between(m, 0, 1, x).size(), 4);
  EXPECT_THROW(project(m, 3, x), InvalidInputError);
  EXPECT_THROW(project(m, 0, y), ShapeError);
}

TEST(LogLikelihood, MatchesNaive) {
  Rng rng(13);
  std::vector<Matrix> w, xhat;
  std::vector<double> rho2;
  std::vector<SubjectEnergy> energy;
  Matrix reduced = Matrix::Zero(3, 10);
  for (int i = 0; i < 2; ++i) {
    w.push_back(init_subject(9, SrmConfig{3, 1, 1, {}}, i));
    rho2.push_back(0.5 + rng.uniform());
    xhat.push_back(demean(rng.normal_matrix(9, 10)).xhat);
    energy.push_back({xhat.back().squaredNorm(), 9});
    reduced += e_step_local(w.back(), rho2.back(), xhat.back());
  }
  const Matrix sigma = random_spd(rng, 3);
  const double fast = log_likelihood(reduced, sigma, rho2, energy, 10);
  const double slow = validation::naive_log_likelihood(w, rho2, sigma, xhat);
  EXPECT_NEAR(fast, slow, 1e-9 * std::abs(slow));
}
