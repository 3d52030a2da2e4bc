#include "factorfit/error.hpp"
#include "factorfit/htfa.hpp"
#include "factorfit/random.hpp"
#include "factorfit/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace factorfit::htfa {

namespace {

constexpr int kLloydSweeps = 10;
constexpr std::uint64_t kTemplateStream = 0x7465'6d70'6c61'7465ULL;

}  // namespace

void validate(const HtfaConfig& c) {
  if (c.k < 1) throw ConfigError("k must be >= 1");
  if (c.outer_iterations < 1) throw ConfigError("outer_iterations must be >= 1");
  if (c.local_iterations < 0) throw ConfigError("local_iterations must be >= 0");
  if (!(c.local_tolerance > 0)) throw ConfigError("local_tolerance must be > 0");
  if (!(c.width_lower_frac > 0 && c.width_lower_frac < c.width_upper_frac))
    throw ConfigError("width fractions must satisfy 0 < lower < upper");
}

void validate(const SubsamplePlan& p) {
  if (!(p.voxel_fraction > 0 && p.voxel_fraction <= 1) || !(p.tr_fraction > 0 && p.tr_fraction <= 1))
    throw ConfigError("subsample fractions must lie in (0, 1]");
  if (p.max_voxels < 1 || p.max_trs < 1) throw ConfigError("subsample maxima must be >= 1");
}

ParameterBounds parameter_bounds(const kernels::VoxelGrid& grid, const HtfaConfig& config) {
  ParameterBounds b;
  b.center_lower = grid.lower_corner();
  b.center_upper = grid.upper_corner();
  for (int a = 0; a < 3; ++a)
    if (!(b.center_lower(a) < b.center_upper(a))) {
      b.center_lower(a) -= 0.5;
      b.center_upper(a) += 0.5;
    }
  const double diameter = (b.center_upper - b.center_lower).norm();
  b.width_lower = config.width_lower_frac * diameter;
  b.width_upper = config.width_upper_frac * diameter;
  return b;
}

GlobalTemplate init_template(const SubjectData& subject, const HtfaConfig& config) {
  validate(config);
  if (!subject.grid)
    throw DatasetConsistencyError("subject " + subject.subject_id + " has no voxel coordinates",
                                  {subject.subject_id});
  const auto& grid = *subject.grid;
  const Matrix& pos = grid.positions();
  const Index v = pos.rows();
  const Index k = config.k;
  if (v < k)
    throw ShapeError("subject " + subject.subject_id + " has " + std::to_string(v) +
                     " voxels, fewer than k = " + std::to_string(k));
  if (subject.X.rows() != v)
    throw ShapeError("subject " + subject.subject_id + " data rows do not match its coordinates");

  Vector weight = subject.X.cwiseAbs().rowwise().mean();
  if (!(weight.sum() > 0)) weight.setOnes();

  Rng rng = Rng::stream(config.seed, {kTemplateStream});
  auto draw = [&](const Vector& mass) {
    const double total = mass.sum();
    double u = rng.uniform() * total;
    for (Index i = 0; i < mass.size(); ++i) {
      u -= mass(i);
      if (u < 0) return i;
    }
    Index last = mass.size() - 1;
    while (last > 0 && mass(last) <= 0) --last;
    return last;
  };

  Matrix centers(k, 3);
  centers.row(0) = pos.row(draw(weight));
  Vector d2 = (pos.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    Vector mass = weight.cwiseProduct(d2);
    const Index pick = mass.sum() > 0 ? draw(mass) : draw(weight);
    centers.row(c) = pos.row(pick);
    d2 = d2.cwiseMin((pos.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<Index> label(static_cast<std::size_t>(v), 0);
  auto assign = [&] {
    for (Index i = 0; i < v; ++i) {
      Index best = 0;
      double best_d = (pos.row(i) - centers.row(0)).squaredNorm();
      for (Index c = 1; c < k; ++c) {
        const double d = (pos.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      label[static_cast<std::size_t>(i)] = best;
    }
  };
  for (int sweep = 0; sweep < kLloydSweeps; ++sweep) {
    assign();
    Matrix sums = Matrix::Zero(k, 3);
    Vector mass = Vector::Zero(k);
    for (Index i = 0; i < v; ++i) {
      const Index c = label[static_cast<std::size_t>(i)];
      sums.row(c) += weight(i) * pos.row(i);
      mass(c) += weight(i);
    }
    for (Index c = 0; c < k; ++c)
      if (mass(c) > 0) centers.row(c) = sums.row(c) / mass(c);
  }
  assign();

  const ParameterBounds bounds = parameter_bounds(grid, config);
  Vector spread = Vector::Zero(k);
  Vector mass = Vector::Zero(k);
  for (Index i = 0; i < v; ++i) {
    const Index c = label[static_cast<std::size_t>(i)];
    spread(c) += weight(i) * (pos.row(i) - centers.row(c)).squaredNorm();
    mass(c) += weight(i);
  }

  GlobalTemplate t;
  t.centers = centers;
  t.widths.resize(k);
  t.width_var.resize(k);
  for (Index c = 0; c < k; ++c) {
    const double lambda = mass(c) > 0 ? spread(c) / mass(c) : 0.0;
    t.widths(c) = std::clamp(lambda, bounds.width_lower, bounds.width_upper);
    t.width_var(c) = std::pow(0.1 * t.widths(c), 2);
  }
  const double diameter = (bounds.center_upper - bounds.center_lower).norm();
  const double side = diameter / std::cbrt(static_cast<double>(k));
  t.prior_center_cov = Eigen::Matrix3d::Identity() * (side * side / 12.0);
  t.center_cov.assign(static_cast<std::size_t>(k), t.prior_center_cov);
  t.prior_width_var = t.width_var.mean();
  return t;
}

Bytes encode(const GlobalTemplate& t) {
  ByteWriter w;
  w.matrix(t.centers);
  w.vector(t.widths);
  w.vector(t.width_var);
  w.u64(t.center_cov.size());
  for (const auto& c : t.center_cov) w.matrix(c);
  w.matrix(t.prior_center_cov);
  w.f64(t.prior_width_var);
  return std::move(w).take();
}

GlobalTemplate decode_template(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  GlobalTemplate t;
  t.centers = r.matrix();
  t.widths = r.vector();
  t.width_var = r.vector();
  const auto n = r.u64();
  t.center_cov.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) t.center_cov.emplace_back(r.matrix());
  t.prior_center_cov = r.matrix();
  t.prior_width_var = r.f64();
  return t;
}

}  // namespace factorfit::htfa
