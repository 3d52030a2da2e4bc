#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <vector>

namespace factorfit::cli {

inline constexpr int kReportSchemaVersion = 1;

/// Timings (seconds) and metadata written as report.json by every command.
struct RunReport {
  std::string command;
  std::string backend;
  int workers = 1;
  double load_seconds = 0.0;
  double compute_seconds = 0.0;
  /// Time spent inside collectives during the compute phase (root rank).
  double communicate_seconds = 0.0;
  std::vector<double> objective;
  double flops = 0.0;
  std::vector<std::string> outputs;
};

void write_report(const RunReport& report, const std::filesystem::path& path);

/// One-line JSON on stderr: {"error": {"kind": ..., "message": ..., ...}}.
void print_error(const std::exception& e);
void print_error(const std::string& kind, const std::string& message);

}  // namespace factorfit::cli
