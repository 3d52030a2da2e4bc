#include "factorfit/data_io.hpp"

#include "factorfit/error.hpp"
#include "factorfit/random.hpp"

#include <map>
#include <string>

namespace factorfit::data_io {

Manifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  if (spec.n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
  for (Index d : spec.partition)
    if (d < 1) throw ConfigError("partition dimensions must be >= 1");

  const Manifest seeds = load_manifest(spec.seed_manifest, Purpose::htfa);
  std::vector<Matrix> data;
  Matrix coords;
  std::vector<std::string> mismatched;
  for (const auto& s : seeds.subjects) {
    Matrix c = load_matrix(*s.coords_path);
    if (data.empty()) {
      coords = std::move(c);
    } else if (c != coords || s.data_header.cols != seeds.subjects.front().data_header.cols) {
      mismatched.push_back(s.id);
      continue;
    }
    data.push_back(load_matrix(s.data_path));
  }
  if (!mismatched.empty())
    throw DatasetConsistencyError("seed subjects must share one voxel grid and TR count", mismatched);

  const kernels::VoxelGrid grid(coords);
  const Index v = grid.voxel_count();
  const Index t = data.front().cols();
  const auto& idx = grid.voxel_axis_index();
  const auto counts = grid.axis_counts();
  std::array<Index, 3> blocks{};
  for (int a = 0; a < 3; ++a) blocks[static_cast<std::size_t>(a)] =
      (counts[static_cast<std::size_t>(a)] + spec.partition[static_cast<std::size_t>(a)] - 1) /
      spec.partition[static_cast<std::size_t>(a)];

  // Non-empty partitions in linear order (x fastest) with their voxels.
  std::map<Index, std::vector<Index>> by_linear;
  for (Index i = 0; i < v; ++i) {
    const Index bx = idx(i, 0) / spec.partition[0];
    const Index by = idx(i, 1) / spec.partition[1];
    const Index bz = idx(i, 2) / spec.partition[2];
    by_linear[bx + blocks[0] * (by + blocks[1] * bz)].push_back(i);
  }
  std::vector<const std::vector<Index>*> partitions;
  for (const auto& [key, voxels] : by_linear) partitions.push_back(&voxels);

  fs::create_directories(out_dir);
  Manifest out;
  out.name = seeds.name.empty() ? "synthetic" : seeds.name + "-synthetic";
  out.grid_dims = seeds.grid_dims ? seeds.grid_dims : std::optional(counts);

  const auto n_seeds = static_cast<std::uint64_t>(data.size());
  for (Index s = 0; s < spec.n_subjects; ++s) {
    Rng rng = Rng::stream(spec.base_seed, {static_cast<std::uint64_t>(s)});
    std::vector<std::size_t> source(partitions.size());
    for (auto& src : source) src = static_cast<std::size_t>(rng.bounded(n_seeds));
    Matrix x(v, t);
    for (std::size_t p = 0; p < partitions.size(); ++p) {
      const auto perm = rng.permutation(t);
      const Matrix& from = data[source[p]];
      for (Index voxel : *partitions[p])
        for (Index c = 0; c < t; ++c) x(voxel, c) = from(voxel, perm[static_cast<std::size_t>(c)]);
    }
    ManifestSubject sub;
    sub.id = "synth_" + std::to_string(s);
    sub.data_path = out_dir / (sub.id + ".sfab");
    sub.coords_path = out_dir / (sub.id + "_coords.sfab");
    save_matrix(sub.data_path, x);
    save_matrix(*sub.coords_path, coords);
    sub.data_header = read_header(sub.data_path);
    out.subjects.push_back(std::move(sub));
  }
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

}  // namespace factorfit::data_io
