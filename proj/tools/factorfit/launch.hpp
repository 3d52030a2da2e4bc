#pragma once

#include "factorfit/collectives.hpp"

#include <functional>

namespace factorfit::cli {

struct LaunchOptions {
  comm::Backend backend = comm::Backend::serial;
  int workers = 1;
  /// sockets only: fork `workers` local processes instead of reading the
  /// rank environment variables.
  bool spawn_local = false;
};

/// Runs `body` once per rank with that rank's communicator. Rethrows the
/// first failure; a failed forked worker surfaces as a TransportError or
/// an Error naming the worker.
void run_ranks(const LaunchOptions& options, const std::function<void(comm::Communicator&)>& body);

}  // namespace factorfit::cli
