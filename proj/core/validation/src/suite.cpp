#include "factorfit/validation/suite.hpp"

#include "factorfit/error.hpp"
#include "factorfit/htfa.hpp"
#include "factorfit/random.hpp"
#include "factorfit/srm.hpp"
#include "factorfit/trf.hpp"
#include "factorfit/validation/naive_htfa.hpp"
#include "factorfit/validation/naive_srm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace factorfit::validation {

namespace {

Matrix random_spd(Rng& rng, Index n, double ridge) {
  const Matrix a = rng.normal_matrix(n, n);
  Matrix s = a * a.transpose() / static_cast<double>(n);
  s.diagonal().array() += ridge;
  return s;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

struct SrmInstance {
  std::vector<Matrix> w;
  std::vector<double> rho2;
  std::vector<Matrix> xhat;
  Matrix sigma_s;
};

SrmInstance random_srm(Rng& rng, Index n, Index v, Index t, Index k, std::uint64_t seed) {
  SrmInstance in;
  srm::SrmConfig cfg;
  cfg.k = static_cast<int>(k);
  cfg.seed = seed;
  for (Index i = 0; i < n; ++i) {
    in.w.push_back(srm::init_subject(v, cfg, i));
    in.rho2.push_back(uniform(rng, 0.2, 2.0));
    in.xhat.push_back(srm::demean(rng.normal_matrix(v, t)).xhat);
  }
  in.sigma_s = random_spd(rng, k, 0.1);
  return in;
}

Matrix reduce(const SrmInstance& in) {
  Matrix sum = Matrix::Zero(in.w[0].cols(), in.xhat[0].cols());
  for (std::size_t i = 0; i < in.w.size(); ++i) sum += srm::e_step_local(in.w[i], in.rho2[i], in.xhat[i]);
  return sum;
}

double rho0(const SrmInstance& in) {
  double r = 0.0;
  for (double x : in.rho2) r += 1.0 / x;
  return r;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

CheckResult woodbury(std::uint64_t seed) {
  CheckResult r{"woodbury", 0.0, 1e-8, 25, false};
  for (int i = 0; i < r.instances; ++i) {
    Rng rng = Rng::stream(seed, {1, static_cast<std::uint64_t>(i)});
    const SrmInstance in = random_srm(rng, 3, 20, 15, 4, seed + static_cast<std::uint64_t>(i));
    const auto fast = srm::e_step_global(reduce(in), in.sigma_s, rho0(in));
    const auto slow = naive_e_step(in.w, in.rho2, in.sigma_s, in.xhat);
    r.max_error = std::max({r.max_error, max_abs(fast.S, slow.S), max_abs(fast.var_s, slow.var_s)});
  }
  return r;
}

CheckResult loglik(std::uint64_t seed) {
  CheckResult r{"loglik", 0.0, 1e-10, 25, false};
  for (int i = 0; i < r.instances; ++i) {
    Rng rng = Rng::stream(seed, {2, static_cast<std::uint64_t>(i)});
    const SrmInstance in = random_srm(rng, 3, 20, 15, 4, seed + static_cast<std::uint64_t>(i));
    std::vector<srm::SubjectEnergy> energy;
    for (const auto& x : in.xhat) energy.push_back({x.squaredNorm(), x.rows()});
    const double fast = srm::log_likelihood(reduce(in), in.sigma_s, in.rho2, energy, in.xhat[0].cols());
    const double slow = naive_log_likelihood(in.w, in.rho2, in.sigma_s, in.xhat);
    r.max_error = std::max(r.max_error, std::abs(fast - slow) / std::max(1.0, std::abs(slow)));
  }
  return r;
}

htfa::GlobalTemplate random_template(Rng& rng, Index k) {
  htfa::GlobalTemplate t;
  t.centers = 5.0 * rng.normal_matrix(k, 3);
  t.widths = Vector(k);
  t.width_var = Vector(k);
  for (Index c = 0; c < k; ++c) {
    t.center_cov.push_back(random_spd(rng, 3, 0.05));
    t.widths(c) = uniform(rng, 0.5, 10.0);
    t.width_var(c) = uniform(rng, 0.01, 4.0);
  }
  t.prior_center_cov = random_spd(rng, 3, 0.05);
  t.prior_width_var = uniform(rng, 0.01, 4.0);
  return t;
}

CheckResult lemma(std::uint64_t seed) {
  CheckResult r{"lemma", 0.0, 1e-10, 100, false};
  for (int i = 0; i < r.instances; ++i) {
    Rng rng = Rng::stream(seed, {3, static_cast<std::uint64_t>(i)});
    const Index k = 1 + static_cast<Index>(rng.bounded(5));
    const htfa::GlobalTemplate t = random_template(rng, k);
    const auto n = 1 + static_cast<Index>(rng.bounded(6));
    std::vector<Matrix> centers;
    std::vector<Vector> widths;
    for (Index s = 0; s < n; ++s) {
      centers.push_back(t.centers + rng.normal_matrix(k, 3));
      widths.push_back((t.widths.array() + rng.normal_matrix(k, 1).col(0).array().abs()).matrix());
    }
    const auto fast = htfa::global_step(centers, widths, t);
    const auto slow = naive_global_step(centers, widths, t);
    double e = std::max({max_abs(fast.centers, slow.centers), max_abs(fast.widths, slow.widths),
                         max_abs(fast.width_var, slow.width_var)});
    for (Index c = 0; c < k; ++c)
      e = std::max(e, max_abs(fast.center_cov[static_cast<std::size_t>(c)],
                              slow.center_cov[static_cast<std::size_t>(c)]));
    r.max_error = std::max(r.max_error, e);
  }
  return r;
}

CheckResult jacobian(std::uint64_t seed) {
  CheckResult r{"jacobian", 0.0, 1e-5, 20, false};
  std::vector<Index> dims{6, 5, 4};
  Matrix pos(dims[0] * dims[1] * dims[2], 3);
  Index row = 0;
  for (Index z = 0; z < dims[2]; ++z)
    for (Index y = 0; y < dims[1]; ++y)
      for (Index x = 0; x < dims[0]; ++x) pos.row(row++) << double(x), double(y), double(z);
  const kernels::VoxelGrid grid(pos);
  htfa::HtfaConfig cfg;
  cfg.k = 3;
  const htfa::ParameterBounds bounds = htfa::parameter_bounds(grid, cfg);

  for (int i = 0; i < r.instances; ++i) {
    Rng rng = Rng::stream(seed, {4, static_cast<std::uint64_t>(i)});
    const Index k = cfg.k, t = 7;
    std::vector<Index> voxels;
    for (Index v = 0; v < grid.voxel_count(); v += 1 + static_cast<Index>(rng.bounded(3))) voxels.push_back(v);
    const Matrix x = rng.normal_matrix(t, static_cast<Index>(voxels.size()));
    const Matrix weights = rng.normal_matrix(t, k);
    htfa::GlobalTemplate prior;
    prior.centers = Matrix(k, 3);
    prior.widths = Vector(k);
    prior.width_var = Vector::Constant(k, uniform(rng, 0.5, 2.0));
    for (Index c = 0; c < k; ++c) {
      for (int a = 0; a < 3; ++a) prior.centers(c, a) = uniform(rng, bounds.center_lower(a), bounds.center_upper(a));
      prior.widths(c) = uniform(rng, bounds.width_lower, bounds.width_upper);
      prior.center_cov.push_back(Eigen::Matrix3d::Identity());
    }
    prior.prior_center_cov = random_spd(rng, 3, 0.5);
    prior.prior_width_var = uniform(rng, 0.5, 2.0);

    htfa::BlockContext ctx{&x, &weights, &grid, &voxels, &prior, uniform(rng, 0.1, 2.0),
                           uniform(rng, 1.0, 4.0), bounds};
    Matrix centers(k, 3);
    Vector widths(k);
    for (Index c = 0; c < k; ++c) {
      for (int a = 0; a < 3; ++a)
        centers(c, a) = uniform(rng, bounds.center_lower(a) + 0.1, bounds.center_upper(a) - 0.1);
      widths(c) = uniform(rng, std::max(bounds.width_lower, 1.0), std::min(bounds.width_upper, 8.0));
    }
    Vector flat(3 * k);
    for (Index c = 0; c < k; ++c) flat.segment(3 * c, 3) = centers.row(c).transpose();
    const auto cp = htfa::build_center_problem(ctx, widths);
    const auto wp = htfa::build_width_problem(ctx, centers);
    r.max_error = std::max({r.max_error, trf::check_jacobian(cp, flat), trf::check_jacobian(wp, widths)});
  }
  return r;
}

using CheckFn = std::function<CheckResult(std::uint64_t)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  static const std::vector<std::pair<std::string, CheckFn>> checks{
      {"woodbury", woodbury}, {"lemma", lemma}, {"loglik", loglik}, {"jacobian", jacobian}};
  return checks;
}

}  // namespace

std::vector<std::string> check_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

std::vector<CheckResult> run_suite(const SuiteOptions& options) {
  const auto names = check_names();
  for (const auto& n : options.only)
    if (std::find(names.begin(), names.end(), n) == names.end())
      throw ConfigError("unknown check '" + n + "'");
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : registry()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end())
      continue;
    CheckResult r = fn(options.seed);
    r.tolerance *= options.tolerance_scale;
    r.passed = std::isfinite(r.max_error) && r.max_error < r.tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace factorfit::validation
