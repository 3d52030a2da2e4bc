#include "launch.hpp"

#include "factorfit/error.hpp"
#include "report.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <vector>

namespace factorfit::cli {

namespace {

void run_spawned(int workers, const std::function<void(comm::Communicator&)>& body) {
  auto listener = comm::SocketListener::bind({"127.0.0.1", 0});
  const comm::Endpoint coord{"127.0.0.1", listener.port()};
  std::fflush(nullptr);
  std::vector<pid_t> children;
  for (int rank = 1; rank < workers; ++rank) {
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) {
      listener.close();
      int code = 0;
      try {
        auto c = comm::connect_socket(rank, workers, coord);
        body(*c);
      } catch (const std::exception& e) {
        print_error(e);
        code = 1;
      }
      std::fflush(nullptr);
      ::_exit(code);
    }
    children.push_back(pid);
  }

  std::exception_ptr failure;
  try {
    auto c = std::move(listener).accept(workers);
    body(*c);
  } catch (...) {
    failure = std::current_exception();
  }
  int failed_rank = -1;
  for (std::size_t i = 0; i < children.size(); ++i) {
    int status = 0;
    ::waitpid(children[i], &status, 0);
    if ((!WIFEXITED(status) || WEXITSTATUS(status) != 0) && failed_rank < 0)
      failed_rank = static_cast<int>(i) + 1;
  }
  if (failure) std::rethrow_exception(failure);
  if (failed_rank >= 0) throw TransportError("worker rank " + std::to_string(failed_rank) + " failed", failed_rank);
}

}  // namespace

void run_ranks(const LaunchOptions& options, const std::function<void(comm::Communicator&)>& body) {
  switch (options.backend) {
    case comm::Backend::serial: {
      auto c = comm::make_serial();
      body(*c);
      return;
    }
    case comm::Backend::threads:
      comm::ThreadGroup::run(options.workers, body);
      return;
    case comm::Backend::sockets:
      if (options.spawn_local) {
        run_spawned(options.workers, body);
      } else {
        auto c = comm::socket_communicator_from_env();
        body(*c);
      }
      return;
  }
}

}  // namespace factorfit::cli
