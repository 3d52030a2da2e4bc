#pragma once

#include "factorfit/srm.hpp"
#include "factorfit/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

/// Per-subject binary files, dataset manifests and synthetic data.
///
/// Subject file layout (all integers little-endian):
///
///   offset  size  field
///        0     4  magic "SFAB"
///        4     4  version (u32, 1)
///        8     4  dtype (u32, 0 = IEEE-754 float64 LE)
///       12     8  rows (u64)
///       20     8  cols (u64)
///       28     .  rows * cols float64 values, row-major
///
/// Data files are voxels x TRs; coordinate files are voxels x 3.
namespace factorfit::data_io {

namespace fs = std::filesystem;

inline constexpr std::size_t kHeaderBytes = 28;

struct SubjectFileHeader {
  std::uint32_t version = 1;
  std::uint32_t dtype = 0;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

/// Writes `m` with a header matching its shape. Throws IoError.
void save_matrix(const fs::path& path, const Matrix& m);

/// Validates magic, version, dtype and file length. Throws FormatError.
SubjectFileHeader read_header(const fs::path& path);

Matrix load_matrix(const fs::path& path);

struct ManifestSubject {
  std::string id;
  fs::path data_path;                  ///< resolved against the manifest directory
  std::optional<fs::path> coords_path;
  SubjectFileHeader data_header;       ///< filled by load_manifest
};

struct Manifest {
  std::string name;
  std::vector<ManifestSubject> subjects;
  std::optional<std::array<Index, 3>> grid_dims;
};

/// What the manifest is about to be used for; selects extra checks.
enum class Purpose { generic, srm, htfa };

/// Parses the manifest JSON and reads every referenced header (not the
/// payloads). SRM requires equal TR counts; HTFA requires coordinates. Both
/// violations raise DatasetConsistencyError listing the offending ids.
///
/// {"name": "...", "grid_dims": [nx, ny, nz],
///  "subjects": [{"id": "...", "data_path": "a.sfab", "coords_path": "a_xyz.sfab"}]}
Manifest load_manifest(const fs::path& path, Purpose purpose = Purpose::generic);

/// Writes the manifest with paths made relative to the manifest's directory.
void save_manifest(const Manifest& manifest, const fs::path& path);

/// Loads one subject's data and, when present, its coordinates.
SubjectData load_subject(const ManifestSubject& subject);

/// Loads the subjects in [begin, end) of the manifest.
std::vector<SubjectData> load_subjects(const Manifest& manifest, Index begin, Index end);

struct SynthSpec {
  fs::path seed_manifest;
  Index n_subjects = 1;
  std::array<Index, 3> partition{16, 16, 8};
  std::uint64_t base_seed = 0;
};

/// Builds `n_subjects` synthetic subjects from seed subjects sharing one
/// voxel grid. Partitions tile the grid's axis-index space; subject i draws
/// from stream (base_seed, i), first one source seed subject per partition
/// in linear partition order (x fastest), then one TR permutation per
/// partition in the same order. Writes synth_<i>.sfab,
/// synth_<i>_coords.sfab and manifest.json into `out_dir`.
Manifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir);

/// Gaussian-blob data generated from the HTFA model itself: per subject,
/// X^T = W F + noise with F the RBF factors at jittered blob centers.
struct BlobSpec {
  std::array<Index, 3> grid{12, 12, 8};
  Index n_subjects = 2;
  Index trs = 40;
  /// K x 3 true centers in voxel units; empty picks well-separated defaults.
  Matrix centers;
  double width = 2.0;
  double noise_sd = 0.01;
  double center_jitter = 0.0;
  std::uint64_t seed = 0;
};

/// Default centers: corners of the box inset to 25% / 75% of each axis,
/// in the order (lo,lo,lo), (hi,hi,hi), (lo,hi,lo), (hi,lo,hi), ...
Matrix default_blob_centers(const std::array<Index, 3>& grid, Index k);

struct BlobDataset {
  Manifest manifest;
  Matrix centers;                      ///< true global centers
  std::vector<Matrix> subject_centers; ///< jittered per-subject centers
  double width = 0.0;
};

/// Writes blob_<i>.sfab, blob_<i>_coords.sfab, manifest.json and
/// truth.json into `out_dir`.
BlobDataset make_blob_dataset(const BlobSpec& spec, const fs::path& out_dir);

/// Regular grid positions, x fastest, in voxel units.
Matrix grid_positions(const std::array<Index, 3>& dims);

}  // namespace factorfit::data_io
