#include "commands.hpp"
#include "factorfit/error.hpp"
#include "report.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace factorfit;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_launch(CLI::App* cmd, cli::LaunchOptions& launch, std::string& backend) {
  cmd->add_option("--backend", backend, "serial, threads or sockets")
      ->check(CLI::IsMember({"serial", "threads", "sockets"}))
      ->capture_default_str();
  cmd->add_option("--workers", launch.workers, "Ranks for the threads and sockets backends")
      ->check(CLI::Range(1, 1024))
      ->capture_default_str();
  cmd->add_flag("--spawn-local", launch.spawn_local, "sockets: fork the workers on this host");
}

void finish_launch(cli::LaunchOptions& launch, const std::string& backend) {
  launch.backend = comm::parse_backend(backend);
  if (launch.backend == comm::Backend::serial && launch.workers != 1)
    throw UsageError("--workers needs --backend threads or sockets");
  if (launch.spawn_local && launch.backend != comm::Backend::sockets)
    throw UsageError("--spawn-local needs --backend sockets");
}

std::array<Index, 3> triple(const std::vector<Index>& v, const char* flag) {
  if (v.size() != 3) throw UsageError(std::string(flag) + " takes three comma-separated values");
  for (Index x : v)
    if (x < 1) throw UsageError(std::string(flag) + " values must be >= 1");
  return {v[0], v[1], v[2]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed shared-response and topographic factor models for fMRI"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "factorfit 0.1.0");

  std::string backend = "serial";
  std::function<int()> action;

  cli::FitSrmArgs srm;
  auto* fit_srm = app.add_subcommand("fit-srm", "Fit a shared response model");
  fit_srm->add_option("--manifest", srm.manifest, "Dataset manifest")->required();
  fit_srm->add_option("--k", srm.config.k, "Shared features")->check(CLI::PositiveNumber)->capture_default_str();
  fit_srm->add_option("--iters", srm.config.iterations, "EM iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_srm->add_option("--seed", srm.config.seed, "Seed for the initial mappings")->capture_default_str();
  fit_srm->add_option("--out", srm.out, "Output directory")->capture_default_str();
  add_launch(fit_srm, srm.launch, backend);
  fit_srm->callback([&] {
    finish_launch(srm.launch, backend);
    action = [&] { return cli::fit_srm(srm); };
  });

  cli::FitHtfaArgs htfa;
  auto* fit_htfa = app.add_subcommand("fit-htfa", "Fit hierarchical topographic factor analysis");
  fit_htfa->add_option("--manifest", htfa.manifest, "Dataset manifest with coordinates")->required();
  fit_htfa->add_option("--k", htfa.config.k, "Factors")->check(CLI::PositiveNumber)->capture_default_str();
  fit_htfa->add_option("--outer", htfa.config.outer_iterations, "Global iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_htfa->add_option("--local-iters", htfa.config.local_iterations, "Local iterations per global one")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  fit_htfa->add_option("--voxel-frac", htfa.plan.voxel_fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  fit_htfa->add_option("--tr-frac", htfa.plan.tr_fraction)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  fit_htfa->add_option("--max-voxels", htfa.plan.max_voxels)->check(CLI::PositiveNumber)->capture_default_str();
  fit_htfa->add_option("--max-trs", htfa.plan.max_trs)->check(CLI::PositiveNumber)->capture_default_str();
  fit_htfa->add_option("--width-lo", htfa.config.width_lower_frac, "Lower width bound, fraction of diameter")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_htfa->add_option("--width-hi", htfa.config.width_upper_frac, "Upper width bound, fraction of diameter")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_htfa->add_option("--seed", htfa.config.seed, "Seed for initialization and subsampling")
      ->capture_default_str();
  fit_htfa->add_option("--out", htfa.out)->capture_default_str();
  add_launch(fit_htfa, htfa.launch, backend);
  fit_htfa->callback([&] {
    finish_launch(htfa.launch, backend);
    if (!(htfa.config.width_lower_frac < htfa.config.width_upper_frac))
      throw UsageError("--width-lo must be below --width-hi");
    if (!(htfa.plan.voxel_fraction > 0) || !(htfa.plan.tr_fraction > 0))
      throw UsageError("subsample fractions must be > 0");
    htfa.plan.seed = htfa.config.seed;
    action = [&] { return cli::fit_htfa(htfa); };
  });

  data_io::SynthSpec synth;
  fs::path synth_out = "synth_out";
  std::vector<Index> partition{16, 16, 8};
  auto* gen = app.add_subcommand("gen-synth", "Generate permutation-based synthetic subjects");
  gen->add_option("--seed-manifest", synth.seed_manifest)->required();
  gen->add_option("--subjects", synth.n_subjects)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--partition", partition, "Partition size X,Y,Z in voxels")->delimiter(',');
  gen->add_option("--seed", synth.base_seed)->capture_default_str();
  gen->add_option("--out", synth_out)->capture_default_str();
  gen->callback([&] {
    synth.partition = triple(partition, "--partition");
    action = [&] { return cli::gen_synth(synth, synth_out); };
  });

  cli::BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time SRM iterations and report Gflop/s");
  bench_cmd->add_option("--manifest", bench.manifest)->required();
  bench_cmd->add_option("--k", bench.config.k)->check(CLI::PositiveNumber)->capture_default_str();
  bench_cmd->add_option("--iters", bench.iterations)->check(CLI::NonNegativeNumber)->capture_default_str();
  bench_cmd->add_option("--seed", bench.config.seed)->capture_default_str();
  bench_cmd->add_option("--out", bench.out)->capture_default_str();
  add_launch(bench_cmd, bench.launch, backend);
  bench_cmd->callback([&] {
    finish_launch(bench.launch, backend);
    action = [&] { return cli::bench(bench); };
  });

  cli::ValidateArgs val;
  auto* validate = app.add_subcommand("validate", "Run the oracle equivalence checks");
  validate->add_option("--only", val.only, "Run only these checks")->delimiter(',');
  validate->add_option("--tolerance-scale", val.tolerance_scale, "Multiply every tolerance")
      ->check(CLI::NonNegativeNumber);
  validate->add_option("--seed", val.seed)->capture_default_str();
  validate->callback([&] { action = [&] { return cli::validate(val); }; });

  data_io::BlobSpec blobs;
  fs::path blobs_out = "blobs";
  std::vector<Index> grid{12, 12, 8};
  Index blob_count = 3;
  auto* mk = app.add_subcommand("make-blobs", "Write a Gaussian-blob dataset with known centers");
  mk->add_option("--grid", grid, "Grid size X,Y,Z")->delimiter(',');
  mk->add_option("--subjects", blobs.n_subjects)->check(CLI::PositiveNumber)->capture_default_str();
  mk->add_option("--trs", blobs.trs)->check(CLI::PositiveNumber)->capture_default_str();
  mk->add_option("--k", blob_count, "Blobs")->check(CLI::PositiveNumber)->capture_default_str();
  mk->add_option("--width", blobs.width)->check(CLI::PositiveNumber)->capture_default_str();
  mk->add_option("--noise", blobs.noise_sd)->check(CLI::NonNegativeNumber)->capture_default_str();
  mk->add_option("--jitter", blobs.center_jitter)->check(CLI::NonNegativeNumber)->capture_default_str();
  mk->add_option("--seed", blobs.seed)->capture_default_str();
  mk->add_option("--out", blobs_out)->capture_default_str();
  mk->callback([&] {
    blobs.grid = triple(grid, "--grid");
    blobs.centers = data_io::default_blob_centers(blobs.grid, blob_count);
    action = [&] { return cli::make_blobs(blobs, blobs_out); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    cli::print_error("usage", e.what());
    return 2;
  } catch (const UsageError& e) {
    cli::print_error("usage", e.what());
    return 2;
  } catch (const ConfigError& e) {
    cli::print_error(e);
    return 2;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    cli::print_error(e);
    return 2;
  } catch (const std::exception& e) {
    cli::print_error(e);
    return 1;
  }
}
