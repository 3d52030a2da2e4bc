#include "factorfit/error.hpp"
#include "factorfit/htfa.hpp"
#include "factorfit/serialize.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace factorfit::htfa {

namespace {

// 1 for each all-zero weight column.
Vector zero_columns(const Matrix& weights) {
  Vector mask(weights.cols());
  for (Index c = 0; c < weights.cols(); ++c)
    mask(c) = (weights.col(c).array() == 0.0).all() ? 1.0 : 0.0;
  return mask;
}

// Positions of the K voxels with the largest squared residual, worst first.
Matrix worst_voxels(const Matrix& x, const kernels::VoxelGrid& grid, const LocalModel& local) {
  const Matrix f = kernels::rbf_factor_matrix(local.centers, local.widths, grid);
  const Vector err = (x - local.weights * f).colwise().squaredNorm();
  std::vector<Index> order(static_cast<std::size_t>(err.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(local.centers.rows()));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](Index a, Index b) { return err(a) > err(b) || (err(a) == err(b) && a < b); });
  Matrix out(static_cast<Index>(take), 3);
  for (std::size_t i = 0; i < take; ++i) out.row(static_cast<Index>(i)) = grid.positions().row(order[i]);
  return out;
}

[[noreturn]] void rethrow_for(const std::string& id, const Error& e) {
  throw Error(e.kind(), "subject " + id + ": " + e.what());
}

}  // namespace

FitResult fit(const std::vector<SubjectData>& subjects, const HtfaConfig& config,
              const SubsamplePlan& plan, comm::Communicator& comm) {
  validate(config);
  validate(plan);
  if (subjects.empty())
    throw InvalidInputError("rank " + std::to_string(comm.rank()) + " owns no subjects");
  std::vector<std::string> missing;
  for (const auto& s : subjects)
    if (!s.grid) missing.push_back(s.subject_id);
  if (!missing.empty())
    throw DatasetConsistencyError("HTFA needs voxel coordinates for every subject", missing);
  for (const auto& s : subjects)
    if (s.X.rows() != s.grid->voxel_count())
      throw ShapeError("subject " + s.subject_id + " data rows do not match its coordinates");

  const comm::Placement placed = comm::place_local_items(comm, static_cast<Index>(subjects.size()));

  FitResult result;
  result.first_subject = placed.range.begin;
  std::vector<Matrix> xs;
  xs.reserve(subjects.size());
  for (const auto& s : subjects) {
    result.subject_ids.push_back(s.subject_id);
    xs.push_back(s.X.transpose());
  }

  Bytes templ_bytes;
  if (comm.is_root()) templ_bytes = encode(init_template(subjects.front(), config));
  GlobalTemplate templ = decode_template(comm.broadcast_bytes(std::move(templ_bytes)));

  result.locals.resize(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    result.locals[i].centers = templ.centers;
    result.locals[i].widths = templ.widths;
    result.locals[i].weights = Matrix::Zero(xs[i].rows(), templ.k());
  }

  for (int outer = 0; outer < config.outer_iterations; ++outer) {
    if (outer > 0) {
      Bytes b;
      if (comm.is_root()) b = encode(templ);
      templ = decode_template(comm.broadcast_bytes(std::move(b)));
    }

    ByteWriter report;
    report.u64(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const StepIndex at{placed.range.begin + static_cast<Index>(i), outer};
      try {
        result.locals[i] = local_step(xs[i], *subjects[i].grid, templ, std::move(result.locals[i]),
                                      config, plan, at);
      } catch (const Error& e) {
        rethrow_for(subjects[i].subject_id, e);
      }
      const Vector zeros = zero_columns(result.locals[i].weights);
      report.f64(result.locals[i].objective);
      report.matrix(result.locals[i].centers);
      report.vector(result.locals[i].widths);
      report.vector(zeros);
      if (zeros.sum() > 0) report.matrix(worst_voxels(xs[i], *subjects[i].grid, result.locals[i]));
    }
    const auto parts = comm.gather(std::move(report).take());

    if (comm.is_root()) {
      std::vector<Matrix> centers;
      std::vector<Vector> widths;
      Vector dead = Vector::Ones(templ.k());
      Matrix candidates;
      double objective = 0.0;
      for (const auto& part : parts) {
        ByteReader r(part);
        const auto count = r.u64();
        for (std::uint64_t i = 0; i < count; ++i) {
          objective += r.f64();
          centers.push_back(r.matrix());
          widths.push_back(r.vector());
          const Vector zeros = r.vector();
          dead = dead.cwiseMin(zeros);
          if (zeros.sum() > 0) {
            Matrix worst = r.matrix();
            if (candidates.size() == 0) candidates = std::move(worst);
          }
        }
      }
      result.objective.push_back(objective);
      templ = global_step(centers, widths, templ);

      // A factor whose weights vanish in every subject is re-seeded at the
      // worst-fit voxels of the first subject.
      Index cursor = 0;
      for (Index c = 0; c < templ.k() && cursor < candidates.rows(); ++c)
        if (dead(c) > 0) templ.centers.row(c) = candidates.row(cursor++);
    }
  }

  Bytes b;
  if (comm.is_root()) b = encode(templ);
  result.templ = decode_template(comm.broadcast_bytes(std::move(b)));

  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto& local = result.locals[i];
    const Matrix f = kernels::rbf_factor_matrix(local.centers, local.widths, *subjects[i].grid);
    local.weights = update_weights(xs[i], f, local.ridge_alpha2);
  }
  return result;
}

}  // namespace factorfit::htfa
