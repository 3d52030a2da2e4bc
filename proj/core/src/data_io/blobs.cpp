#include "factorfit/data_io.hpp"

#include "factorfit/error.hpp"
#include "factorfit/kernels.hpp"
#include "factorfit/random.hpp"

#include <json.hpp>

#include <fstream>

namespace factorfit::data_io {

namespace {

constexpr std::uint64_t kCenterStream = 0x6365'6e74'6572ULL;

nlohmann::json to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Matrix grid_positions(const std::array<Index, 3>& dims) {
  for (Index d : dims)
    if (d < 1) throw ConfigError("grid dimensions must be >= 1");
  Matrix pos(dims[0] * dims[1] * dims[2], 3);
  Index row = 0;
  for (Index z = 0; z < dims[2]; ++z)
    for (Index y = 0; y < dims[1]; ++y)
      for (Index x = 0; x < dims[0]; ++x, ++row) pos.row(row) << double(x), double(y), double(z);
  return pos;
}

Matrix default_blob_centers(const std::array<Index, 3>& grid, Index k) {
  if (k < 1) throw ConfigError("blob count must be >= 1");
  Eigen::Vector3d lo, hi;
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(grid[static_cast<std::size_t>(a)] - 1);
    lo(a) = 0.25 * extent;
    hi(a) = 0.75 * extent;
  }
  // Corner bit patterns ordered so the first few are far apart.
  static constexpr int kCorners[8][3] = {{0, 0, 0}, {1, 1, 1}, {0, 1, 0}, {1, 0, 1},
                                         {1, 0, 0}, {0, 1, 1}, {0, 0, 1}, {1, 1, 0}};
  Matrix centers(k, 3);
  Rng rng = Rng::stream(0, {kCenterStream});
  for (Index i = 0; i < k; ++i) {
    for (int a = 0; a < 3; ++a) {
      if (i < 8)
        centers(i, a) = kCorners[i][a] ? hi(a) : lo(a);
      else
        centers(i, a) = lo(a) + rng.uniform() * (hi(a) - lo(a));
    }
  }
  return centers;
}

BlobDataset make_blob_dataset(const BlobSpec& spec, const fs::path& out_dir) {
  if (spec.n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
  if (spec.trs < 1) throw ConfigError("trs must be >= 1");
  if (!(spec.width > 0)) throw ConfigError("blob width must be > 0");
  if (spec.noise_sd < 0 || spec.center_jitter < 0) throw ConfigError("noise and jitter must be >= 0");

  BlobDataset out;
  out.centers = spec.centers.size() == 0 ? default_blob_centers(spec.grid, 3) : spec.centers;
  if (out.centers.cols() != 3) throw ShapeError("blob centers must be K x 3");
  out.width = spec.width;
  const Index k = out.centers.rows();
  const Matrix pos = grid_positions(spec.grid);
  const kernels::VoxelGrid grid(pos);
  const Vector widths = Vector::Constant(k, spec.width);

  fs::create_directories(out_dir);
  out.manifest.name = "blobs";
  out.manifest.grid_dims = spec.grid;
  for (Index s = 0; s < spec.n_subjects; ++s) {
    Rng rng = Rng::stream(spec.seed, {static_cast<std::uint64_t>(s)});
    Matrix centers = out.centers + spec.center_jitter * rng.normal_matrix(k, 3);
    const Matrix f = kernels::rbf_factor_matrix(centers, widths, grid);
    const Matrix w = rng.normal_matrix(spec.trs, k);
    const Matrix x = (w * f).transpose() + spec.noise_sd * rng.normal_matrix(pos.rows(), spec.trs);

    ManifestSubject sub;
    sub.id = "blob_" + std::to_string(s);
    sub.data_path = out_dir / (sub.id + ".sfab");
    sub.coords_path = out_dir / (sub.id + "_coords.sfab");
    save_matrix(sub.data_path, x);
    save_matrix(*sub.coords_path, pos);
    sub.data_header = read_header(sub.data_path);
    out.manifest.subjects.push_back(std::move(sub));
    out.subject_centers.push_back(std::move(centers));
  }
  save_manifest(out.manifest, out_dir / "manifest.json");

  nlohmann::json truth;
  truth["centers"] = to_json(out.centers);
  truth["width"] = out.width;
  truth["subject_centers"] = nlohmann::json::array();
  for (const auto& c : out.subject_centers) truth["subject_centers"].push_back(to_json(c));
  std::ofstream tf(out_dir / "truth.json", std::ios::trunc);
  if (!tf) throw IoError("cannot write " + (out_dir / "truth.json").string());
  tf << truth.dump(2) << '\n';
  return out;
}

}  // namespace factorfit::data_io
