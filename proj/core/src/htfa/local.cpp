#include "factorfit/error.hpp"
#include "factorfit/htfa.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <string>

namespace factorfit::htfa {

namespace {

double sample_variance(const Matrix& x) {
  const double mean = x.mean();
  return (x.array() - mean).square().mean();
}

struct Prepared {
  BlockContext ctx;
  Index rows = 0;  // T~
  Index cols = 0;  // V~
  Index k = 0;
  double c_data = 0.0;  // sqrt(noise_weight)

  explicit Prepared(const BlockContext& c)
      : ctx(c) {
    if (!c.x || !c.weights || !c.grid || !c.voxels || !c.prior)
      throw ConfigError("block context is incomplete");
    rows = c.x->rows();
    cols = c.x->cols();
    k = c.weights->cols();
    c_data = std::sqrt(c.noise_weight);
    if (c.weights->rows() != rows) throw ShapeError("weights rows do not match sampled TRs");
    if (static_cast<Index>(c.voxels->size()) != cols)
      throw ShapeError("voxel index count does not match sampled voxels");
    if (c.prior->k() != k) throw ShapeError("template factor count does not match weights");
  }

  Index data_residuals() const { return rows * cols; }

  Matrix factors(const Matrix& centers, const Vector& widths) const {
    return kernels::rbf_factor_matrix(centers, widths, *ctx.grid, *ctx.voxels);
  }

  // sqrt(w) (X~ - W~ F) flattened column-major into out.head(T~ V~).
  void data_residual(const Matrix& f, Vector& out) const {
    Eigen::Map<Matrix> r(out.data(), rows, cols);
    r = *ctx.x;
    r.noalias() -= *ctx.weights * f;
    r *= c_data;
  }

  double position(Index j, int axis) const {
    return ctx.grid->positions()((*ctx.voxels)[static_cast<std::size_t>(j)], axis);
  }

  // Column of the data Jacobian: -sqrt(w) vec(W~(:, k) g^T).
  void data_column(Index k_, const Vector& g, Eigen::Ref<Vector> col) const {
    Eigen::Map<Matrix> block(col.data(), rows, cols);
    block.noalias() = (-c_data) * ctx.weights->col(k_) * g.transpose();
  }
};

Matrix unpack_centers(const Vector& x, Index k) {
  Matrix c(k, 3);
  for (Index i = 0; i < k; ++i)
    for (int a = 0; a < 3; ++a) c(i, a) = x(3 * i + a);
  return c;
}

}  // namespace

Index subsample_size(Index n, double fraction, Index maximum) {
  const double target = std::round(0.5 * (fraction * static_cast<double>(n) + static_cast<double>(maximum)));
  return std::clamp<Index>(static_cast<Index>(target), 1, std::max<Index>(n, 1));
}

Subsample subsample(const Matrix& x, const SubsamplePlan& plan, Rng& rng) {
  validate(plan);
  const Index t = x.rows();
  const Index v = x.cols();
  const Index nt = subsample_size(t, plan.tr_fraction, plan.max_trs);
  const Index nv = subsample_size(v, plan.voxel_fraction, plan.max_voxels);
  auto pick = [&](Index n, Index count) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(count));
    if (plan.with_replacement) {
      for (Index i = 0; i < count; ++i)
        out.push_back(static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(n))));
    } else {
      auto perm = rng.permutation(n);
      out.assign(perm.begin(), perm.begin() + count);
    }
    return out;
  };
  Subsample s;
  s.tr_indices = pick(t, nt);
  s.voxel_indices = pick(v, nv);
  s.X.resize(nt, nv);
  for (Index j = 0; j < nv; ++j)
    for (Index i = 0; i < nt; ++i)
      s.X(i, j) = x(s.tr_indices[static_cast<std::size_t>(i)], s.voxel_indices[static_cast<std::size_t>(j)]);
  s.phi = (static_cast<double>(t) * static_cast<double>(v)) /
          (static_cast<double>(nt) * static_cast<double>(nv));
  return s;
}

Matrix update_weights(const Matrix& x, const Matrix& f, double alpha2) {
  if (x.cols() != f.cols())
    throw ShapeError("data has " + std::to_string(x.cols()) + " voxels but factors have " +
                     std::to_string(f.cols()));
  if (!(alpha2 > 0)) throw DomainError("ridge alpha^2 must be > 0");
  Matrix gram = f * f.transpose();
  const Matrix inv = kernels::spd_inverse(kernels::add_diag(std::move(gram), 1.0 / alpha2));
  return (x * f.transpose()) * inv;
}

trf::LeastSquaresProblem build_center_problem(const BlockContext& ctx, const Vector& widths) {
  const Prepared prep(ctx);
  const Index k = prep.k;
  if (widths.size() != k) throw ShapeError("widths length does not match K");
  if ((widths.array() <= 0).any()) throw DomainError("factor widths must be > 0");

  const Eigen::LLT<Eigen::Matrix3d> llt(ctx.prior->prior_center_cov);
  if (llt.info() != Eigen::Success) throw DefinitenessError("prior center covariance", 0);
  const Eigen::Matrix3d l = llt.matrixL();
  const double c_prior = std::sqrt(1.0 / (2.0 * ctx.phi));
  const Matrix prior_centers = ctx.prior->centers;
  const Index m = prep.data_residuals();

  trf::LeastSquaresProblem p;
  p.n_vars = 3 * k;
  p.n_residuals = m + k;
  p.lower.resize(3 * k);
  p.upper.resize(3 * k);
  for (Index i = 0; i < k; ++i)
    for (int a = 0; a < 3; ++a) {
      p.lower(3 * i + a) = ctx.bounds.center_lower(a);
      p.upper(3 * i + a) = ctx.bounds.center_upper(a);
    }

  p.residual_fn = [prep, widths, l, c_prior, prior_centers, m, k](const Vector& x) {
    const Matrix centers = unpack_centers(x, k);
    Vector r(m + k);
    prep.data_residual(prep.factors(centers, widths), r);
    for (Index i = 0; i < k; ++i) {
      const Eigen::Vector3d d = (centers.row(i) - prior_centers.row(i)).transpose();
      r(m + i) = c_prior * l.triangularView<Eigen::Lower>().solve(d).norm();
    }
    return r;
  };

  p.jacobian_fn = [prep, widths, l, c_prior, prior_centers, m, k](const Vector& x) {
    const Matrix centers = unpack_centers(x, k);
    const Matrix f = prep.factors(centers, widths);
    Matrix j = Matrix::Zero(m + k, 3 * k);
    Vector g(prep.cols);
    for (Index i = 0; i < k; ++i) {
      for (int a = 0; a < 3; ++a) {
        for (Index v = 0; v < prep.cols; ++v)
          g(v) = f(i, v) * 2.0 * (prep.position(v, a) - centers(i, a)) / widths(i);
        prep.data_column(i, g, j.col(3 * i + a).head(m));
      }
      const Eigen::Vector3d d = (centers.row(i) - prior_centers.row(i)).transpose();
      const Eigen::Vector3d z = l.triangularView<Eigen::Lower>().solve(d);
      const double norm = z.norm();
      if (norm > 0) {
        const Eigen::Vector3d grad = l.transpose().triangularView<Eigen::Upper>().solve(z) / norm;
        for (int a = 0; a < 3; ++a) j(m + i, 3 * i + a) = c_prior * grad(a);
      }
    }
    return j;
  };
  return p;
}

trf::LeastSquaresProblem build_width_problem(const BlockContext& ctx, const Matrix& centers) {
  const Prepared prep(ctx);
  const Index k = prep.k;
  if (centers.rows() != k || centers.cols() != 3) throw ShapeError("centers must be K x 3");
  const double c_prior = std::sqrt(1.0 / (2.0 * ctx.phi * ctx.prior->prior_width_var));
  const Vector prior_widths = ctx.prior->widths;
  const Index m = prep.data_residuals();

  // Squared distances are fixed while only widths move.
  Matrix dist2(k, prep.cols);
  for (Index i = 0; i < k; ++i)
    for (Index v = 0; v < prep.cols; ++v) {
      double s = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = prep.position(v, a) - centers(i, a);
        s += d * d;
      }
      dist2(i, v) = s;
    }

  trf::LeastSquaresProblem p;
  p.n_vars = k;
  p.n_residuals = m + k;
  p.lower = Vector::Constant(k, ctx.bounds.width_lower);
  p.upper = Vector::Constant(k, ctx.bounds.width_upper);

  p.residual_fn = [prep, centers, c_prior, prior_widths, m, k](const Vector& x) {
    if ((x.array() <= 0).any()) throw DomainError("factor widths must be > 0");
    Vector r(m + k);
    prep.data_residual(prep.factors(centers, x), r);
    r.tail(k) = c_prior * (x - prior_widths);
    return r;
  };

  p.jacobian_fn = [prep, centers, c_prior, dist2, m, k](const Vector& x) {
    const Matrix f = prep.factors(centers, x);
    Matrix j = Matrix::Zero(m + k, k);
    Vector g(prep.cols);
    for (Index i = 0; i < k; ++i) {
      const double inv2 = 1.0 / (x(i) * x(i));
      for (Index v = 0; v < prep.cols; ++v) g(v) = f(i, v) * dist2(i, v) * inv2;
      prep.data_column(i, g, j.col(i).head(m));
      j(m + i, i) = c_prior;
    }
    return j;
  };
  return p;
}

LocalModel local_step(const Matrix& x, const kernels::VoxelGrid& grid,
                      const GlobalTemplate& templ, LocalModel local, const HtfaConfig& config,
                      const SubsamplePlan& plan, StepIndex at) {
  validate(config);
  validate(plan);
  if (config.local_iterations == 0) return local;
  const Index k = templ.k();
  if (x.cols() != grid.voxel_count())
    throw ShapeError("data has " + std::to_string(x.cols()) + " voxels but the grid has " +
                     std::to_string(grid.voxel_count()));

  local.centers = templ.centers;
  local.widths = templ.widths;
  if (local.weights.rows() != x.rows() || local.weights.cols() != k)
    local.weights = Matrix::Zero(x.rows(), k);
  const ParameterBounds bounds = parameter_bounds(grid, config);

  for (int it = 0; it < config.local_iterations; ++it) {
    Rng rng = Rng::stream(plan.seed, {static_cast<std::uint64_t>(at.subject),
                                      static_cast<std::uint64_t>(at.outer),
                                      static_cast<std::uint64_t>(it)});
    const Subsample sub = subsample(x, plan, rng);
    const double variance = sample_variance(sub.X);
    local.noise_weight = variance > 0 ? 1.0 / (2.0 * variance) : 0.5;

    const Matrix f = kernels::rbf_factor_matrix(local.centers, local.widths, grid, sub.voxel_indices);
    const Matrix w = update_weights(sub.X, f, local.ridge_alpha2);
    for (std::size_t r = 0; r < sub.tr_indices.size(); ++r)
      local.weights.row(sub.tr_indices[r]) = w.row(static_cast<Index>(r));

    BlockContext ctx;
    ctx.x = &sub.X;
    ctx.weights = &w;
    ctx.grid = &grid;
    ctx.voxels = &sub.voxel_indices;
    ctx.prior = &templ;
    ctx.noise_weight = local.noise_weight;
    ctx.phi = sub.phi;
    ctx.bounds = bounds;

    const Matrix old_centers = local.centers;
    const Vector old_widths = local.widths;

    Vector x0(3 * k);
    for (Index i = 0; i < k; ++i)
      for (int a = 0; a < 3; ++a) x0(3 * i + a) = local.centers(i, a);
    const auto centers_fit = trf::solve(build_center_problem(ctx, local.widths), x0, config.nlls);
    local.centers = unpack_centers(centers_fit.x, k);

    const auto widths_fit = trf::solve(build_width_problem(ctx, local.centers), local.widths, config.nlls);
    local.widths = widths_fit.x;
    local.objective = widths_fit.cost;

    const double dc = (local.centers - old_centers).norm() / std::max(old_centers.norm(), 1e-300);
    const double dw = (local.widths - old_widths).norm() / std::max(old_widths.norm(), 1e-300);
    if (std::max(dc, dw) < config.local_tolerance) break;
  }
  return local;
}

Matrix connectivity_matrix(const Matrix& weights) {
  const Index k = weights.cols();
  if (weights.rows() < 1) throw ShapeError("weights must have at least one row");
  const Matrix centered = weights.rowwise() - weights.colwise().mean();
  const Matrix cov = centered.transpose() * centered;
  Matrix corr = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    corr(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double den = std::sqrt(cov(i, i) * cov(j, j));
      const double c = den > 0 ? std::clamp(cov(i, j) / den, -1.0, 1.0) : 0.0;
      corr(i, j) = c;
      corr(j, i) = c;
    }
  }
  return corr;
}

}  // namespace factorfit::htfa
