#include "report.hpp"

#include "factorfit/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

namespace factorfit::cli {

namespace {

double finite_or_zero(double v) { return std::isfinite(v) ? v : 0.0; }

}  // namespace

void write_report(const RunReport& r, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = r.command;
  j["backend"] = r.backend;
  j["workers"] = r.workers;
  j["timings"] = {{"load", std::max(0.0, r.load_seconds)},
                  {"compute", std::max(0.0, r.compute_seconds)},
                  {"communicate", std::max(0.0, r.communicate_seconds)}};
  auto objective = nlohmann::json::array();
  for (double v : r.objective) objective.push_back(finite_or_zero(v));
  j["objective"] = std::move(objective);
  j["flops"] = finite_or_zero(r.flops);
  j["gflops_per_second"] = r.compute_seconds > 0 ? finite_or_zero(r.flops / r.compute_seconds / 1e9) : 0.0;
  j["outputs"] = r.outputs;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

void print_error(const std::exception& e) {
  nlohmann::json err;
  err["message"] = e.what();
  if (const auto* fe = dynamic_cast<const Error*>(&e)) {
    err["kind"] = fe->kind();
    if (const auto* f = dynamic_cast<const FormatError*>(&e)) {
      err["offset"] = f->offset();
      err["field"] = f->field();
    }
    if (const auto* d = dynamic_cast<const DatasetConsistencyError*>(&e)) err["offenders"] = d->offenders();
    if (const auto* t = dynamic_cast<const TransportError*>(&e)) err["peer"] = t->peer();
    if (const auto* p = dynamic_cast<const DefinitenessError*>(&e)) err["pivot"] = p->pivot();
  } else {
    err["kind"] = "internal";
  }
  std::cerr << nlohmann::json{{"error", err}}.dump() << std::endl;
}

}  // namespace factorfit::cli
