#pragma once

#include "factorfit/collectives.hpp"
#include "factorfit/kernels.hpp"
#include "factorfit/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace factorfit {

/// One subject's scan: voxels by TRs, plus optional voxel coordinates.
struct SubjectData {
  std::string subject_id;
  Matrix X;
  std::optional<kernels::VoxelGrid> grid;
};

}  // namespace factorfit

/// Shared Response Model fitted by distributed constrained EM.
///
/// Each subject i is modelled as x_it = W_i s_t + mu_i + noise with
/// orthonormal W_i (V_i x K), noise variance rho_i^2 and shared responses
/// s_t ~ N(0, Sigma_s). The E-step only ever inverts K x K matrices: with
/// orthonormal mappings W^T Psi^{-1} W collapses to rho0 I where
/// rho0 = sum_i rho_i^{-2}, so the V x V marginal covariance is never built.
namespace factorfit::srm {

struct SrmConfig {
  int k = 60;
  int iterations = 10;
  std::uint64_t seed = 0;
  /// Optional early stop on ||S_new - S_old||_F / ||S_old||_F.
  std::optional<double> tolerance;
};

/// Throws ConfigError for k < 1, iterations < 1 or a non-positive tolerance.
void validate(const SrmConfig& config);

struct SrmModel {
  /// Global index of the first subject owned by this rank.
  Index first_subject = 0;
  std::vector<std::string> subject_ids;
  std::vector<Matrix> W;
  std::vector<double> rho2;
  std::vector<Vector> mu;
  /// Shared covariance after the last iteration.
  Matrix sigma_s;
  /// Posterior means E[s_t | x], K x T; broadcast to every rank.
  Matrix S;
  double rho0 = 0.0;
  /// rho_i^2 for every subject in global order; filled on the root.
  std::vector<double> rho2_all;
  /// Marginal log-likelihood of the parameters entering each EM iteration
  /// and of the final parameters; filled on the root.
  std::vector<double> log_likelihood;
  int iterations_run = 0;
};

struct Demeaned {
  Matrix xhat;
  Vector mu;
};

/// Row means over TRs and the centered matrix. Requires T >= 2.
Demeaned demean(const Matrix& x);

/// Random orthonormal V x k mapping: polar factor of a standard-normal
/// matrix drawn from stream (seed, subject_index).
Matrix init_subject(Index voxels, const SrmConfig& config, Index subject_index);

/// rho^-2 W^T Xhat, the rank-local reduction term.
Matrix e_step_local(const Matrix& w, double rho2, const Matrix& xhat);

struct SharedPosterior {
  Matrix S;      ///< K x T posterior means
  Matrix var_s;  ///< (Sigma_s^-1 + rho0 I)^-1, common to all t
};

/// Posterior of the shared responses from the reduced sum of local terms.
SharedPosterior e_step_global(const Matrix& reduced, const Matrix& sigma_s, double rho0);

struct SigmaUpdate {
  Matrix sigma_s;
  double trace = 0.0;
};

/// Sigma_s_new = var_s + S S^T / T, with var_s as in e_step_global.
SigmaUpdate update_sigma_s(const Matrix& sigma_s, double rho0, const Matrix& S);

struct SubjectUpdate {
  Matrix W;
  double rho2 = 0.0;
};

/// Procrustes update of W_i and the matching noise variance (floored at 1e-12).
SubjectUpdate m_step_subject(const Matrix& xhat, const Matrix& S, double trace_sigma_s_new);

/// Per-subject summaries entering the likelihood: ||Xhat_i||_F^2 and V_i.
struct SubjectEnergy {
  double sum_sq = 0.0;
  Index voxels = 0;
};

/// Marginal log-likelihood of demeaned data under (W, rho^2, Sigma_s),
/// evaluated through the determinant and inversion lemmas from the reduced
/// term; costs O(K^2 T + N) instead of O(V^3).
double log_likelihood(const Matrix& reduced, const Matrix& sigma_s, std::span<const double> rho2,
                      std::span<const SubjectEnergy> energy, Index trs);

/// Called on every rank after each EM iteration with the local model state.
using IterationObserver = std::function<void(int iteration, const SrmModel& model)>;

/// Fits the model. `subjects` are this rank's subjects; ranks hold
/// consecutive blocks of the global subject list in rank order. TR counts
/// must agree everywhere.
SrmModel fit(std::vector<SubjectData> subjects, const SrmConfig& config, comm::Communicator& comm,
             const IterationObserver& observer = {});

/// W_i^T (x - mu_i) for a locally held subject (index relative to the model).
Vector project(const SrmModel& model, Index subject, const Vector& x);

/// W_j W_i^T (x - mu_i) + mu_j.
Vector map_between(const SrmModel& model, Index from, Index to, const Vector& x);

}  // namespace factorfit::srm
