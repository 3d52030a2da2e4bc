#include "factorfit/data_io.hpp"
#include "factorfit/error.hpp"
#include "factorfit/random.hpp"

#include "temp_dir.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>

using namespace factorfit;
using namespace factorfit::data_io;
using factorfit::testing::read_bytes;
using factorfit::testing::TempDir;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// Seed dataset with `n` subjects of the given TR count on a dims grid.
Manifest write_seeds(const fs::path& dir, int n, const std::array<Index, 3>& dims, Index t, std::uint64_t seed) {
  Manifest m;
  m.name = "seeds";
  const Matrix pos = grid_positions(dims);
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(i)});
    ManifestSubject s;
    s.id = "seed" + std::to_string(i);
    s.data_path = dir / (s.id + ".sfab");
    s.coords_path = dir / (s.id + "_xyz.sfab");
    save_matrix(s.data_path, rng.normal_matrix(pos.rows(), t));
    save_matrix(*s.coords_path, pos);
    m.subjects.push_back(s);
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<double> slice(const Matrix& m, const std::vector<Index>& rows) {
  std::vector<double> out;
  for (Index r : rows)
    for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

}  // namespace

TEST(SubjectFile, RoundTripIsBitIdentical) {
  TempDir dir;
  Rng rng(1);
  Matrix m = rng.normal_matrix(10, 7);
  m(0, 0) = -0.0;
  m(1, 1) = 1e-310;
  save_matrix(dir / "m.sfab", m);
  const Matrix back = load_matrix(dir / "m.sfab");
  ASSERT_EQ(back.rows(), 10);
  ASSERT_EQ(back.cols(), 7);
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 70), 0);
  save_matrix(dir / "again.sfab", back);
  EXPECT_EQ(read_bytes(dir / "m.sfab"), read_bytes(dir / "again.sfab"));
  EXPECT_EQ(read_bytes(dir / "m.sfab").size(), kHeaderBytes + 70 * 8);
}

TEST(SubjectFile, EmptyMatrix) {
  TempDir dir;
  save_matrix(dir / "e.sfab", Matrix(0, 3));
  const Matrix e = load_matrix(dir / "e.sfab");
  EXPECT_EQ(e.rows(), 0);
  EXPECT_EQ(e.cols(), 3);
}

TEST(SubjectFile, TruncatedPayload) {
  TempDir dir;
  save_matrix(dir / "m.sfab", Matrix::Ones(4, 4));
  fs::resize_file(dir / "m.sfab", kHeaderBytes + 8 * 15);
  try {
    load_matrix(dir / "m.sfab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.field(), "payload length");
    EXPECT_EQ(e.offset(), kHeaderBytes);
  }
}

TEST(SubjectFile, WrongMagic) {
  TempDir dir;
  save_matrix(dir / "m.sfab", Matrix::Ones(2, 2));
  {
    std::fstream f(dir / "m.sfab", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    read_header(dir / "m.sfab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_EQ(e.field(), "magic");
  }
}

TEST(SubjectFile, BadVersionDtypeAndShortHeader) {
  TempDir dir;
  save_matrix(dir / "m.sfab", Matrix::Ones(2, 2));
  auto patch = [&](std::streamoff at, std::uint8_t byte) {
    std::fstream f(dir / "m.sfab", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(at);
    f.put(static_cast<char>(byte));
  };
  patch(4, 7);
  try {
    read_header(dir / "m.sfab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  patch(4, 1);
  patch(8, 3);
  try {
    read_header(dir / "m.sfab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
  fs::resize_file(dir / "m.sfab", 10);
  EXPECT_THROW(read_header(dir / "m.sfab"), FormatError);
  EXPECT_THROW(read_header(dir / "missing.sfab"), IoError);
}

TEST(Manifest, EqualTrsAreValid) {
  TempDir dir;
  write_seeds(dir.path(), 2, {5, 4, 3}, 475, 2);
  const auto m = load_manifest(dir / "manifest.json", Purpose::srm);
  ASSERT_EQ(m.subjects.size(), 2u);
  EXPECT_EQ(m.subjects[1].data_header.cols, 475u);
  EXPECT_EQ(m.subjects[0].data_header.rows, 60u);
  EXPECT_EQ(m.name, "seeds");
  EXPECT_NO_THROW(load_manifest(dir / "manifest.json", Purpose::htfa));
  const auto subject = load_subject(m.subjects[0]);
  EXPECT_EQ(subject.X.cols(), 475);
  ASSERT_TRUE(subject.grid.has_value());
  EXPECT_EQ(subject.grid->voxel_count(), 60);
}

TEST(Manifest, UnequalTrsUnderSrm) {
  TempDir dir;
  auto m = write_seeds(dir.path(), 2, {3, 3, 2}, 475, 3);
  save_matrix(m.subjects[1].data_path, Matrix::Zero(18, 300));
  EXPECT_NO_THROW(load_manifest(dir / "manifest.json"));
  try {
    load_manifest(dir / "manifest.json", Purpose::srm);
    FAIL();
  } catch (const DatasetConsistencyError& e) {
    EXPECT_EQ(e.offenders(), (std::vector<std::string>{"seed0", "seed1"}));
  }
}

TEST(Manifest, MissingCoordsUnderHtfa) {
  TempDir dir;
  auto m = write_seeds(dir.path(), 2, {3, 3, 2}, 10, 4);
  m.subjects[1].coords_path.reset();
  save_manifest(m, dir / "manifest.json");
  EXPECT_NO_THROW(load_manifest(dir / "manifest.json", Purpose::srm));
  try {
    load_manifest(dir / "manifest.json", Purpose::htfa);
    FAIL();
  } catch (const DatasetConsistencyError& e) {
    EXPECT_EQ(e.offenders(), std::vector<std::string>{"seed1"});
  }
}

TEST(Manifest, StructuralErrors) {
  TempDir dir;
  write_text(dir / "bad.json", "{not json");
  EXPECT_THROW(load_manifest(dir / "bad.json"), InvalidInputError);
  write_text(dir / "empty.json", R"({"subjects": []})");
  EXPECT_THROW(load_manifest(dir / "empty.json"), DatasetConsistencyError);
  write_text(dir / "nokey.json", R"({"subjects": [{"id": "a"}]})");
  EXPECT_THROW(load_manifest(dir / "nokey.json"), InvalidInputError);
  EXPECT_THROW(load_manifest(dir / "absent.json"), IoError);

  write_seeds(dir.path(), 1, {2, 2, 2}, 5, 5);
  write_text(dir / "dup.json", R"({"subjects": [{"id": "x", "data_path": "seed0.sfab"},
                                               {"id": "x", "data_path": "seed0.sfab"}]})");
  EXPECT_THROW(load_manifest(dir / "dup.json"), DatasetConsistencyError);
  write_text(dir / "coords.json",
             R"({"subjects": [{"id": "x", "data_path": "seed0.sfab", "coords_path": "seed0.sfab"}]})");
  EXPECT_THROW(load_manifest(dir / "coords.json"), DatasetConsistencyError);
}

TEST(Manifest, SaveWritesRelativePaths) {
  TempDir dir;
  write_seeds(dir.path(), 2, {2, 2, 2}, 5, 6);
  std::ifstream in(dir / "manifest.json");
  const auto doc = nlohmann::json::parse(in);
  EXPECT_EQ(doc["subjects"][0]["data_path"], "seed0.sfab");
  EXPECT_EQ(doc["subjects"][1]["coords_path"], "seed1_xyz.sfab");
  const auto m = load_manifest(dir / "manifest.json");
  const auto all = load_subjects(m, 0, 2);
  EXPECT_EQ(all[1].subject_id, "seed1");
  EXPECT_THROW(load_subjects(m, 1, 3), InvalidInputError);
}

TEST(Synthetic, SingleSourceWholeVolumeIsTrPermutation) {
  TempDir seeds, out;
  const auto m = write_seeds(seeds.path(), 1, {4, 3, 2}, 12, 7);
  const Matrix src = load_matrix(m.subjects[0].data_path);
  const auto synth = generate_synthetic({seeds / "manifest.json", 2, {4, 3, 2}, 11}, out.path());
  ASSERT_EQ(synth.subjects.size(), 2u);
  for (const auto& s : synth.subjects) {
    const Matrix x = load_matrix(s.data_path);
    // One permutation for the whole volume: some column order maps src onto x.
    for (Index c = 0; c < x.cols(); ++c) {
      Index match = -1;
      for (Index d = 0; d < src.cols(); ++d)
        if (src.col(d) == x.col(c)) match = d;
      EXPECT_GE(match, 0);
    }
    for (Index v = 0; v < x.rows(); ++v) {
      std::vector<double> a(x.row(v).begin(), x.row(v).end());
      std::vector<double> b(src.row(v).begin(), src.row(v).end());
      EXPECT_EQ(sorted(a), sorted(b));
    }
    EXPECT_EQ(load_matrix(*s.coords_path), grid_positions({4, 3, 2}));
  }
}

TEST(Synthetic, Deterministic) {
  TempDir seeds, a, b;
  write_seeds(seeds.path(), 2, {4, 4, 2}, 9, 8);
  const SynthSpec spec{seeds / "manifest.json", 3, {2, 2, 2}, 21};
  generate_synthetic(spec, a.path());
  generate_synthetic(spec, b.path());
  for (const auto& name : {"synth_0.sfab", "synth_1.sfab", "synth_2.sfab", "synth_2_coords.sfab", "manifest.json"})
    EXPECT_EQ(read_bytes(a / name), read_bytes(b / name)) << name;
  SynthSpec other = spec;
  other.base_seed = 22;
  TempDir c;
  generate_synthetic(other, c.path());
  EXPECT_NE(read_bytes(a / "synth_0.sfab"), read_bytes(c / "synth_0.sfab"));
}

TEST(Synthetic, PartitionMultisetsComeFromOneSeed) {
  TempDir seeds, out;
  const auto m = write_seeds(seeds.path(), 2, {4, 4, 4}, 8, 9);
  const Matrix s0 = load_matrix(m.subjects[0].data_path);
  const Matrix s1 = load_matrix(m.subjects[1].data_path);
  const auto synth = generate_synthetic({seeds / "manifest.json", 4, {2, 2, 2}, 5}, out.path());
  const Matrix pos = grid_positions({4, 4, 4});
  int from_first = 0, from_second = 0;
  for (const auto& s : synth.subjects) {
    const Matrix x = load_matrix(s.data_path);
    for (int b = 0; b < 8; ++b) {
      std::vector<Index> rows;
      for (Index v = 0; v < pos.rows(); ++v) {
        const int key = int(pos(v, 0)) / 2 + 2 * (int(pos(v, 1)) / 2) + 4 * (int(pos(v, 2)) / 2);
        if (key == b) rows.push_back(v);
      }
      ASSERT_EQ(rows.size(), 8u);
      const auto got = sorted(slice(x, rows));
      const bool a = got == sorted(slice(s0, rows));
      const bool c = got == sorted(slice(s1, rows));
      EXPECT_TRUE(a || c) << s.id << " partition " << b;
      from_first += a;
      from_second += c;
      // Every voxel row keeps its own multiset.
      for (Index v : rows) {
        std::vector<double> xs(x.row(v).begin(), x.row(v).end());
        std::vector<double> r0(s0.row(v).begin(), s0.row(v).end());
        std::vector<double> r1(s1.row(v).begin(), s1.row(v).end());
        EXPECT_TRUE(sorted(xs) == sorted(r0) || sorted(xs) == sorted(r1));
      }
    }
  }
  EXPECT_GT(from_first, 0);
  EXPECT_GT(from_second, 0);
}

TEST(Synthetic, SubjectContentIndependentOfCount) {
  TempDir seeds, few, many;
  write_seeds(seeds.path(), 2, {4, 4, 2}, 6, 10);
  generate_synthetic({seeds / "manifest.json", 2, {2, 2, 2}, 3}, few.path());
  generate_synthetic({seeds / "manifest.json", 5, {2, 2, 2}, 3}, many.path());
  EXPECT_EQ(read_bytes(few / "synth_0.sfab"), read_bytes(many / "synth_0.sfab"));
  EXPECT_EQ(read_bytes(few / "synth_1.sfab"), read_bytes(many / "synth_1.sfab"));
}

TEST(Synthetic, EdgePartitionsAndErrors) {
  TempDir seeds, out;
  write_seeds(seeds.path(), 1, {5, 3, 1}, 4, 11);
  const auto synth = generate_synthetic({seeds / "manifest.json", 1, {2, 2, 2}, 0}, out.path());
  EXPECT_EQ(load_matrix(synth.subjects[0].data_path).rows(), 15);
  EXPECT_THROW(generate_synthetic({seeds / "manifest.json", 0, {2, 2, 2}, 0}, out.path()), ConfigError);
  EXPECT_THROW(generate_synthetic({seeds / "manifest.json", 1, {0, 2, 2}, 0}, out.path()), ConfigError);
}

TEST(Blobs, DatasetMatchesTruth) {
  TempDir dir;
  BlobSpec spec;
  spec.grid = {6, 6, 4};
  spec.trs = 12;
  spec.noise_sd = 0.0;
  const auto ds = make_blob_dataset(spec, dir.path());
  EXPECT_EQ(ds.centers.rows(), 3);
  const auto m = load_manifest(dir / "manifest.json", Purpose::htfa);
  ASSERT_EQ(m.subjects.size(), 2u);
  EXPECT_EQ(m.subjects[0].data_header.rows, 144u);
  std::ifstream in(dir / "truth.json");
  const auto truth = nlohmann::json::parse(in);
  EXPECT_EQ(truth["centers"].size(), 3u);
  EXPECT_DOUBLE_EQ(truth["centers"][1][0].get<double>(), 3.75);
  EXPECT_DOUBLE_EQ(truth["width"].get<double>(), 2.0);
}

TEST(Blobs, GridPositionsXFastest) {
  const Matrix p = grid_positions({3, 2, 2});
  EXPECT_EQ(p.rows(), 12);
  EXPECT_EQ(p.row(1), Eigen::RowVector3d(1, 0, 0));
  EXPECT_EQ(p.row(3), Eigen::RowVector3d(0, 1, 0));
  EXPECT_EQ(p.row(6), Eigen::RowVector3d(0, 0, 1));
  EXPECT_THROW(grid_positions({0, 1, 1}), ConfigError);
}
