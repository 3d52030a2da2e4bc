#include "commands.hpp"

#include "factorfit/error.hpp"
#include "factorfit/serialize.hpp"
#include "factorfit/validation/suite.hpp"
#include "report.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace factorfit::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

RunReport base_report(const std::string& command, const LaunchOptions& launch, int size) {
  RunReport r;
  r.command = command;
  r.backend = std::string(comm::to_string(launch.backend));
  r.workers = size;
  return r;
}

std::vector<SubjectData> load_block(const data_io::Manifest& m, comm::Communicator& comm) {
  const auto range = comm::block_partition(static_cast<Index>(m.subjects.size()), comm.size(), comm.rank());
  return data_io::load_subjects(m, range.begin, range.end);
}

int effective_workers(const LaunchOptions& l) { return l.backend == comm::Backend::serial ? 1 : l.workers; }

void check_rank_count(const data_io::Manifest& m, const LaunchOptions& l) {
  if (static_cast<Index>(m.subjects.size()) < effective_workers(l))
    throw ConfigError("manifest lists " + std::to_string(m.subjects.size()) + " subjects, fewer than " +
                      std::to_string(effective_workers(l)) + " workers");
}

Matrix column(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

nlohmann::json rows_json(const Matrix& m) {
  auto out = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

void write_csv(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
}

std::vector<std::string> gather_paths(comm::Communicator& comm, const std::vector<std::string>& local) {
  ByteWriter w;
  w.u64(local.size());
  for (const auto& p : local) w.str(p);
  std::vector<std::string> all;
  for (const auto& part : comm.gather(std::move(w).take())) {
    ByteReader r(part);
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) all.push_back(r.str());
  }
  return all;
}

}  // namespace

double srm_flops_per_iteration(Index voxels, Index trs, Index k) {
  const auto v = static_cast<double>(voxels);
  const auto t = static_cast<double>(trs);
  const auto kk = static_cast<double>(k);
  return 2.0 * (2.0 * v * t * kk) + 2.0 * v * kk * kk + (2.0 * v * kk * kk - 2.0 * kk * kk * kk / 3.0);
}

int fit_srm(const FitSrmArgs& args) {
  srm::validate(args.config);
  const auto manifest = data_io::load_manifest(args.manifest, data_io::Purpose::srm);
  check_rank_count(manifest, args.launch);
  fs::create_directories(args.out);

  run_ranks(args.launch, [&](comm::Communicator& comm) {
    RunReport report = base_report("fit-srm", args.launch, comm.size());
    auto t0 = Clock::now();
    auto subjects = load_block(manifest, comm);
    comm.barrier();
    report.load_seconds = seconds_since(t0);

    comm.reset_stats();
    t0 = Clock::now();
    const srm::SrmModel model = srm::fit(std::move(subjects), args.config, comm);
    comm.barrier();
    report.compute_seconds = seconds_since(t0);
    report.communicate_seconds = comm.stats().seconds;

    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < model.W.size(); ++i) {
      const auto& id = model.subject_ids[i];
      data_io::save_matrix(args.out / (id + "_W.sfab"), model.W[i]);
      data_io::save_matrix(args.out / (id + "_mu.sfab"), model.mu[i]);
      outputs.push_back((args.out / (id + "_W.sfab")).string());
      outputs.push_back((args.out / (id + "_mu.sfab")).string());
    }
    report.outputs = gather_paths(comm, outputs);
    if (comm.is_root()) {
      data_io::save_matrix(args.out / "S.sfab", model.S);
      data_io::save_matrix(args.out / "sigma_s.sfab", model.sigma_s);
      data_io::save_matrix(args.out / "rho2.sfab", column(model.rho2_all));
      for (const char* f : {"S.sfab", "sigma_s.sfab", "rho2.sfab", "report.json"})
        report.outputs.push_back((args.out / f).string());
      report.objective = model.log_likelihood;
      for (const auto& s : manifest.subjects)
        report.flops += static_cast<double>(model.iterations_run) *
                        srm_flops_per_iteration(static_cast<Index>(s.data_header.rows),
                                                static_cast<Index>(s.data_header.cols), args.config.k);
      write_report(report, args.out / "report.json");
    }
  });
  return 0;
}

int fit_htfa(const FitHtfaArgs& args) {
  htfa::validate(args.config);
  htfa::validate(args.plan);
  const auto manifest = data_io::load_manifest(args.manifest, data_io::Purpose::htfa);
  check_rank_count(manifest, args.launch);
  fs::create_directories(args.out);

  run_ranks(args.launch, [&](comm::Communicator& comm) {
    RunReport report = base_report("fit-htfa", args.launch, comm.size());
    auto t0 = Clock::now();
    const auto subjects = load_block(manifest, comm);
    comm.barrier();
    report.load_seconds = seconds_since(t0);

    comm.reset_stats();
    t0 = Clock::now();
    const htfa::FitResult fit = htfa::fit(subjects, args.config, args.plan, comm);
    comm.barrier();
    report.compute_seconds = seconds_since(t0);
    report.communicate_seconds = comm.stats().seconds;

    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < fit.locals.size(); ++i) {
      const auto& id = fit.subject_ids[i];
      const auto& local = fit.locals[i];
      const std::pair<std::string, Matrix> arrays[] = {
          {id + "_centers.sfab", local.centers},
          {id + "_widths.sfab", local.widths},
          {id + "_weights.sfab", local.weights}};
      for (const auto& [name, m] : arrays) {
        data_io::save_matrix(args.out / name, m);
        outputs.push_back((args.out / name).string());
      }
      write_csv(args.out / (id + "_connectivity.csv"), htfa::connectivity_matrix(local.weights));
      outputs.push_back((args.out / (id + "_connectivity.csv")).string());
    }
    report.outputs = gather_paths(comm, outputs);
    if (comm.is_root()) {
      nlohmann::json t;
      t["centers"] = rows_json(fit.templ.centers);
      t["widths"] = std::vector<double>(fit.templ.widths.begin(), fit.templ.widths.end());
      t["width_var"] = std::vector<double>(fit.templ.width_var.begin(), fit.templ.width_var.end());
      t["center_cov"] = nlohmann::json::array();
      for (const auto& c : fit.templ.center_cov) t["center_cov"].push_back(rows_json(c));
      t["prior_center_cov"] = rows_json(fit.templ.prior_center_cov);
      t["prior_width_var"] = fit.templ.prior_width_var;
      std::ofstream tf(args.out / "template.json", std::ios::trunc);
      if (!tf) throw IoError("cannot write " + (args.out / "template.json").string());
      tf << std::setprecision(17) << t.dump(2) << '\n';
      report.outputs.push_back((args.out / "template.json").string());
      report.outputs.push_back((args.out / "report.json").string());
      report.objective = fit.objective;
      write_report(report, args.out / "report.json");
    }
  });
  return 0;
}

int gen_synth(const data_io::SynthSpec& spec, const fs::path& out) {
  const auto manifest = data_io::generate_synthetic(spec, out);
  std::cout << "wrote " << manifest.subjects.size() << " subjects to " << out.string() << '\n';
  return 0;
}

int bench(const BenchArgs& args) {
  const auto manifest = data_io::load_manifest(args.manifest, data_io::Purpose::srm);
  check_rank_count(manifest, args.launch);
  srm::SrmConfig config = args.config;
  config.iterations = std::max(args.iterations, 1);
  srm::validate(config);
  fs::create_directories(args.out);

  run_ranks(args.launch, [&](comm::Communicator& comm) {
    RunReport report = base_report("bench", args.launch, comm.size());
    auto t0 = Clock::now();
    auto subjects = load_block(manifest, comm);
    comm.barrier();
    report.load_seconds = seconds_since(t0);

    int iterations = 0;
    if (args.iterations > 0) {
      comm.reset_stats();
      comm.barrier();
      t0 = Clock::now();
      const auto model = srm::fit(std::move(subjects), config, comm);
      comm.barrier();
      report.compute_seconds = seconds_since(t0);
      report.communicate_seconds = comm.stats().seconds;
      report.objective = model.log_likelihood;
      iterations = model.iterations_run;
    }
    if (comm.is_root()) {
      for (const auto& s : manifest.subjects)
        report.flops += static_cast<double>(iterations) *
                        srm_flops_per_iteration(static_cast<Index>(s.data_header.rows),
                                                static_cast<Index>(s.data_header.cols), config.k);
      report.outputs.push_back((args.out / "report.json").string());
      write_report(report, args.out / "report.json");
      std::cout << "compute " << report.compute_seconds << " s, " << report.flops << " flops, "
                << (report.compute_seconds > 0 ? report.flops / report.compute_seconds / 1e9 : 0.0)
                << " Gflop/s\n";
    }
  });
  return 0;
}

int validate(const ValidateArgs& args) {
  validation::SuiteOptions options;
  options.only = args.only;
  options.tolerance_scale = args.tolerance_scale;
  options.seed = args.seed;
  const auto results = validation::run_suite(options);
  bool ok = true;
  std::cout << std::left << std::setw(10) << "check" << std::setw(8) << "result" << std::setw(14)
            << "max error" << std::setw(14) << "tolerance" << "instances\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::cout << std::left << std::setw(10) << r.name << std::setw(8) << (r.passed ? "pass" : "FAIL")
              << std::setw(14) << r.max_error << std::setw(14) << r.tolerance << r.instances << '\n';
  }
  return ok ? 0 : 1;
}

int make_blobs(const data_io::BlobSpec& spec, const fs::path& out) {
  const auto ds = data_io::make_blob_dataset(spec, out);
  std::cout << "wrote " << ds.manifest.subjects.size() << " subjects to " << out.string() << '\n';
  return 0;
}

}  // namespace factorfit::cli
