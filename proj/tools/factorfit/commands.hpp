#pragma once

#include "factorfit/data_io.hpp"
#include "factorfit/htfa.hpp"
#include "factorfit/srm.hpp"
#include "launch.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace factorfit::cli {

namespace fs = std::filesystem;

struct FitSrmArgs {
  fs::path manifest;
  srm::SrmConfig config;
  fs::path out = "srm_out";
  LaunchOptions launch;
};

struct FitHtfaArgs {
  fs::path manifest;
  htfa::HtfaConfig config;
  htfa::SubsamplePlan plan;
  fs::path out = "htfa_out";
  LaunchOptions launch;
};

struct BenchArgs {
  fs::path manifest;
  srm::SrmConfig config;
  /// Zero skips the fit; the report then carries zero compute time and flops.
  int iterations = 10;
  fs::path out = "bench_out";
  LaunchOptions launch;
};

struct ValidateArgs {
  std::vector<std::string> only;
  double tolerance_scale = 1.0;
  std::uint64_t seed = 0;
};

int fit_srm(const FitSrmArgs& args);
int fit_htfa(const FitHtfaArgs& args);
int gen_synth(const data_io::SynthSpec& spec, const fs::path& out);
int bench(const BenchArgs& args);
int validate(const ValidateArgs& args);
int make_blobs(const data_io::BlobSpec& spec, const fs::path& out);

/// SRM flops for one subject and one EM iteration:
/// 2 (2 V T K) + 2 V K^2 + (2 V K^2 - 2 K^3 / 3).
double srm_flops_per_iteration(Index voxels, Index trs, Index k);

}  // namespace factorfit::cli
