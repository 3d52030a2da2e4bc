#include "factorfit/srm.hpp"

#include "factorfit/error.hpp"
#include "factorfit/random.hpp"
#include "factorfit/serialize.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace factorfit::srm {

namespace {

constexpr double kRhoFloor = 1e-12;

// log|A| for SPD A from its Cholesky factor.
double spd_logdet(const Matrix& a) {
  const Matrix l = kernels::cholesky_lower(a);
  double s = 0.0;
  for (Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

Matrix posterior_cov(const Matrix& sigma_s, double rho0) {
  return kernels::spd_inverse(kernels::add_diag(kernels::spd_inverse(sigma_s), rho0));
}

struct Broadcast {
  Matrix S;
  Matrix sigma_s;
  double trace = 0.0;
  double rho0 = 0.0;
  bool stop = false;
};

Bytes encode(const Broadcast& b) {
  ByteWriter w;
  w.matrix(b.S);
  w.matrix(b.sigma_s);
  w.f64(b.trace);
  w.f64(b.rho0);
  w.u8(b.stop ? 1 : 0);
  return std::move(w).take();
}

Broadcast decode(const Bytes& bytes) {
  ByteReader r(bytes);
  Broadcast b;
  b.S = r.matrix();
  b.sigma_s = r.matrix();
  b.trace = r.f64();
  b.rho0 = r.f64();
  b.stop = r.u8() != 0;
  return b;
}

Bytes encode_doubles(const std::vector<double>& v) {
  ByteWriter w;
  w.u64(v.size());
  for (double x : v) w.f64(x);
  return std::move(w).take();
}

// Concatenates every rank's list in rank order (root only).
std::vector<double> concat_doubles(const std::vector<Bytes>& parts) {
  std::vector<double> out;
  for (const auto& p : parts) {
    ByteReader r(p);
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(r.f64());
  }
  return out;
}

std::vector<Matrix> local_terms(const SrmModel& m, const std::vector<Matrix>& xhat) {
  std::vector<Matrix> terms;
  terms.reserve(xhat.size());
  for (std::size_t i = 0; i < xhat.size(); ++i)
    terms.push_back(e_step_local(m.W[i], m.rho2[i], xhat[i]));
  return terms;
}

void check_subject(const SrmModel& model, Index i) {
  if (i < 0 || i >= static_cast<Index>(model.W.size()))
    throw InvalidInputError("subject index " + std::to_string(i) + " outside [0, " +
                            std::to_string(model.W.size()) + ")");
}

}  // namespace

void validate(const SrmConfig& config) {
  if (config.k < 1) throw ConfigError("k must be >= 1, got " + std::to_string(config.k));
  if (config.iterations < 1)
    throw ConfigError("iterations must be >= 1, got " + std::to_string(config.iterations));
  if (config.tolerance && !(*config.tolerance > 0.0))
    throw ConfigError("tolerance must be > 0");
}

Demeaned demean(const Matrix& x) {
  if (x.cols() < 2) throw ShapeError("demean needs at least 2 TRs, got " + std::to_string(x.cols()));
  Demeaned d;
  d.mu = x.rowwise().mean();
  d.xhat = x.colwise() - d.mu;
  return d;
}

Matrix init_subject(Index voxels, const SrmConfig& config, Index subject_index) {
  if (voxels < config.k)
    throw ShapeError("subject has " + std::to_string(voxels) + " voxels, fewer than k = " +
                     std::to_string(config.k));
  Rng rng = Rng::stream(config.seed, {static_cast<std::uint64_t>(subject_index)});
  return kernels::polar_orthogonal(rng.normal_matrix(voxels, config.k));
}

Matrix e_step_local(const Matrix& w, double rho2, const Matrix& xhat) {
  if (w.rows() != xhat.rows())
    throw ShapeError("W has " + std::to_string(w.rows()) + " rows but data has " +
                     std::to_string(xhat.rows()));
  Matrix out = w.transpose() * xhat;
  out /= rho2;
  return out;
}

SharedPosterior e_step_global(const Matrix& reduced, const Matrix& sigma_s, double rho0) {
  if (!(rho0 > 0.0)) throw DomainError("rho0 must be > 0");
  if (sigma_s.rows() != reduced.rows() || sigma_s.cols() != reduced.rows())
    throw ShapeError("sigma_s does not match the reduced term");
  SharedPosterior p;
  p.var_s = posterior_cov(sigma_s, rho0);
  Matrix inner = -rho0 * p.var_s;
  inner.diagonal().array() += 1.0;
  p.S = sigma_s.transpose() * (inner * reduced);
  return p;
}

SigmaUpdate update_sigma_s(const Matrix& sigma_s, double rho0, const Matrix& S) {
  SigmaUpdate u;
  u.sigma_s = posterior_cov(sigma_s, rho0);
  u.sigma_s.noalias() += (S * S.transpose()) / static_cast<double>(S.cols());
  u.sigma_s = 0.5 * (u.sigma_s + u.sigma_s.transpose()).eval();
  kernels::cholesky_lower(u.sigma_s);
  u.trace = u.sigma_s.trace();
  return u;
}

SubjectUpdate m_step_subject(const Matrix& xhat, const Matrix& S, double trace_sigma_s_new) {
  if (xhat.cols() != S.cols())
    throw ShapeError("data has " + std::to_string(xhat.cols()) + " TRs but S has " +
                     std::to_string(S.cols()));
  const Matrix xs = xhat * S.transpose();
  SubjectUpdate u;
  u.W = kernels::polar_orthogonal(0.5 * xs);
  const double t = static_cast<double>(xhat.cols());
  const double v = static_cast<double>(xhat.rows());
  const double cross = (u.W.array() * xs.array()).sum();
  const double rho2 = (kernels::trace_ata(xhat) + t * trace_sigma_s_new - 2.0 * cross) / (t * v);
  u.rho2 = std::max(rho2, kRhoFloor);
  return u;
}

double log_likelihood(const Matrix& reduced, const Matrix& sigma_s, std::span<const double> rho2,
                      std::span<const SubjectEnergy> energy, Index trs) {
  if (rho2.size() != energy.size()) throw ShapeError("rho2 and energy lengths differ");
  double rho0 = 0.0;
  double quad = 0.0;
  double logdet_psi = 0.0;
  double total_v = 0.0;
  for (std::size_t i = 0; i < rho2.size(); ++i) {
    rho0 += 1.0 / rho2[i];
    quad += energy[i].sum_sq / rho2[i];
    const double vi = static_cast<double>(energy[i].voxels);
    logdet_psi += vi * std::log(rho2[i]);
    total_v += vi;
  }
  const Matrix prec = kernels::add_diag(kernels::spd_inverse(sigma_s), rho0);
  const Matrix var_s = kernels::spd_inverse(prec);
  quad -= (reduced.array() * (var_s * reduced).array()).sum();
  const double t = static_cast<double>(trs);
  const double logdet = spd_logdet(prec) + spd_logdet(sigma_s) + logdet_psi;
  return -0.5 * (quad + t * logdet + t * total_v * std::log(2.0 * std::numbers::pi));
}

SrmModel fit(std::vector<SubjectData> subjects, const SrmConfig& config, comm::Communicator& comm,
             const IterationObserver& observer) {
  validate(config);
  const bool root = comm.is_root();

  const comm::Placement placed = comm::place_local_items(comm, static_cast<Index>(subjects.size()));
  if (placed.total == 0) throw InvalidInputError("SRM fit needs at least one subject");

  SrmModel model;
  model.first_subject = placed.range.begin;
  std::vector<Matrix> xhat;
  std::vector<double> energy_local;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto& s = subjects[i];
    if (!s.X.allFinite()) throw InvalidInputError("subject " + s.subject_id + ": non-finite data");
    Demeaned d = demean(s.X);
    s.X.resize(0, 0);
    model.subject_ids.push_back(s.subject_id);
    model.mu.push_back(std::move(d.mu));
    model.W.push_back(
        init_subject(d.xhat.rows(), config, model.first_subject + static_cast<Index>(i)));
    model.rho2.push_back(1.0);
    energy_local.push_back(kernels::trace_ata(d.xhat));
    energy_local.push_back(static_cast<double>(d.xhat.rows()));
    xhat.push_back(std::move(d.xhat));
  }

  std::vector<SubjectEnergy> energy;
  {
    const auto parts = comm.gather(encode_doubles(energy_local));
    if (root) {
      const auto flat = concat_doubles(parts);
      for (std::size_t i = 0; i + 1 < flat.size(); i += 2)
        energy.push_back({flat[i], static_cast<Index>(flat[i + 1])});
    }
  }

  Matrix sigma_s = Matrix::Identity(config.k, config.k);
  Matrix previous_S;
  for (int it = 0; it < config.iterations; ++it) {
    const auto terms = local_terms(model, xhat);
    const Matrix reduced = comm.reduce_sum_items(terms);
    const auto rho_parts = comm.gather(encode_doubles(model.rho2));

    Broadcast b;
    if (root) {
      model.rho2_all = concat_doubles(rho_parts);
      double rho0 = 0.0;
      for (double r : model.rho2_all) rho0 += 1.0 / r;
      model.log_likelihood.push_back(
          log_likelihood(reduced, sigma_s, model.rho2_all, energy, reduced.cols()));
      SharedPosterior post = e_step_global(reduced, sigma_s, rho0);
      SigmaUpdate upd = update_sigma_s(sigma_s, rho0, post.S);
      b.S = std::move(post.S);
      b.sigma_s = std::move(upd.sigma_s);
      b.trace = upd.trace;
      b.rho0 = rho0;
      if (config.tolerance && previous_S.size() == b.S.size()) {
        const double denom = previous_S.norm();
        b.stop = denom > 0.0 && (b.S - previous_S).norm() / denom < *config.tolerance;
      }
    }
    b = decode(comm.broadcast_bytes(root ? encode(b) : Bytes{}));

    sigma_s = b.sigma_s;
    model.sigma_s = sigma_s;
    model.rho0 = b.rho0;
    for (std::size_t i = 0; i < xhat.size(); ++i) {
      SubjectUpdate u = m_step_subject(xhat[i], b.S, b.trace);
      model.W[i] = std::move(u.W);
      model.rho2[i] = u.rho2;
    }
    previous_S = b.S;
    model.S = std::move(b.S);
    model.iterations_run = it + 1;
    if (observer) observer(it, model);
    if (b.stop) break;
  }

  // Likelihood and rho0 of the final parameters.
  const auto terms = local_terms(model, xhat);
  const Matrix reduced = comm.reduce_sum_items(terms);
  const auto rho_parts = comm.gather(encode_doubles(model.rho2));
  if (root) {
    model.rho2_all = concat_doubles(rho_parts);
    model.log_likelihood.push_back(
        log_likelihood(reduced, sigma_s, model.rho2_all, energy, reduced.cols()));
  }
  double rho0 = 0.0;
  if (root)
    for (double r : model.rho2_all) rho0 += 1.0 / r;
  model.rho0 = comm.broadcast(Matrix::Constant(1, 1, rho0))(0, 0);
  return model;
}

Vector project(const SrmModel& model, Index subject, const Vector& x) {
  check_subject(model, subject);
  const auto i = static_cast<std::size_t>(subject);
  if (x.size() != model.W[i].rows())
    throw ShapeError("sample has " + std::to_string(x.size()) + " voxels, subject has " +
                     std::to_string(model.W[i].rows()));
  return model.W[i].transpose() * (x - model.mu[i]);
}

Vector map_between(const SrmModel& model, Index from, Index to, const Vector& x) {
  check_subject(model, to);
  const Vector shared = project(model, from, x);
  const auto j = static_cast<std::size_t>(to);
  return model.W[j] * shared + model.mu[j];
}

}  // namespace factorfit::srm
