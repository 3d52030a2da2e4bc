#include "factorfit/data_io.hpp"

#include "factorfit/error.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace factorfit::data_io {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
  return out;
}

fs::path relative_to(const fs::path& target, const fs::path& base) {
  std::error_code ec;
  const fs::path rel = fs::relative(target, base, ec);
  return ec || rel.empty() ? target : rel;
}

}  // namespace

Manifest load_manifest(const fs::path& path, Purpose purpose) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInputError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();

  Manifest m;
  try {
    m.name = doc.value("name", std::string{});
    if (doc.contains("grid_dims") && !doc["grid_dims"].is_null()) {
      const auto dims = doc["grid_dims"].get<std::vector<Index>>();
      if (dims.size() != 3) throw InvalidInputError("grid_dims must have three entries");
      m.grid_dims = std::array<Index, 3>{dims[0], dims[1], dims[2]};
    }
    for (const auto& s : doc.at("subjects")) {
      ManifestSubject sub;
      sub.id = s.at("id").get<std::string>();
      sub.data_path = base / s.at("data_path").get<std::string>();
      if (s.contains("coords_path") && !s["coords_path"].is_null())
        sub.coords_path = base / s["coords_path"].get<std::string>();
      m.subjects.push_back(std::move(sub));
    }
  } catch (const json::exception& e) {
    throw InvalidInputError("manifest " + path.string() + ": " + e.what());
  }
  if (m.subjects.empty()) throw DatasetConsistencyError("manifest " + path.string() + " lists no subjects");

  std::set<std::string> seen;
  std::vector<std::string> duplicates;
  for (const auto& s : m.subjects)
    if (!seen.insert(s.id).second) duplicates.push_back(s.id);
  if (!duplicates.empty())
    throw DatasetConsistencyError("duplicate subject ids: " + join(duplicates), duplicates);

  std::vector<std::string> bad_coords;
  for (auto& s : m.subjects) {
    s.data_header = read_header(s.data_path);
    if (s.coords_path) {
      const auto ch = read_header(*s.coords_path);
      if (ch.cols != 3 || ch.rows != s.data_header.rows) bad_coords.push_back(s.id);
    }
  }
  if (!bad_coords.empty())
    throw DatasetConsistencyError(
        "coordinate files must be V x 3 with V matching the data: " + join(bad_coords), bad_coords);

  if (purpose == Purpose::srm) {
    const auto trs = m.subjects.front().data_header.cols;
    std::vector<std::string> offenders;
    for (const auto& s : m.subjects)
      if (s.data_header.cols != trs) offenders.push_back(s.id);
    if (!offenders.empty()) {
      offenders.insert(offenders.begin(), m.subjects.front().id);
      throw DatasetConsistencyError("SRM needs equal TR counts; " + m.subjects.front().id + " has " +
                                        std::to_string(trs) + ", differing: " +
                                        join({offenders.begin() + 1, offenders.end()}),
                                    offenders);
    }
  }
  if (purpose == Purpose::htfa) {
    std::vector<std::string> offenders;
    for (const auto& s : m.subjects)
      if (!s.coords_path) offenders.push_back(s.id);
    if (!offenders.empty())
      throw DatasetConsistencyError("HTFA needs coords_path for every subject; missing: " + join(offenders),
                                    offenders);
  }
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  json doc;
  doc["name"] = manifest.name;
  if (manifest.grid_dims) {
    const auto& d = *manifest.grid_dims;
    doc["grid_dims"] = {d[0], d[1], d[2]};
  }
  doc["subjects"] = json::array();
  for (const auto& s : manifest.subjects) {
    json entry;
    entry["id"] = s.id;
    entry["data_path"] = relative_to(s.data_path, base).generic_string();
    if (s.coords_path) entry["coords_path"] = relative_to(*s.coords_path, base).generic_string();
    doc["subjects"].push_back(std::move(entry));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

SubjectData load_subject(const ManifestSubject& subject) {
  SubjectData d;
  d.subject_id = subject.id;
  d.X = load_matrix(subject.data_path);
  if (subject.coords_path) d.grid.emplace(load_matrix(*subject.coords_path));
  return d;
}

std::vector<SubjectData> load_subjects(const Manifest& manifest, Index begin, Index end) {
  if (begin < 0 || end > static_cast<Index>(manifest.subjects.size()) || begin > end)
    throw InvalidInputError("subject range outside the manifest");
  std::vector<SubjectData> out;
  for (Index i = begin; i < end; ++i) out.push_back(load_subject(manifest.subjects[static_cast<std::size_t>(i)]));
  return out;
}

}  // namespace factorfit::data_io
