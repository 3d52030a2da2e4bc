#include "factorfit/collectives.hpp"

#include "factorfit/error.hpp"

#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>

namespace factorfit::comm {

struct ThreadGroup::Hub {
  enum class Kind { none, gather, broadcast };

  struct Round {
    Kind kind = Kind::none;
    std::vector<Bytes> posts;
    int posted = 0;
    std::optional<Bytes> payload;
    int readers = 0;
    bool poisoned = false;
  };

  Hub(int n, CommOptions opts) : size(n), options(opts) {}

  const int size;
  const CommOptions options;
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::uint64_t, Round> rounds;
  int failed_rank = -1;

  Round& enter(std::uint64_t index, Kind kind, int rank) {
    Round& r = rounds[index];
    if (r.kind == Kind::none) {
      r.kind = kind;
      r.posts.resize(static_cast<std::size_t>(size));
    } else if (r.kind != kind) {
      r.poisoned = true;
      cv.notify_all();
      throw CollectiveContractError("rank " + std::to_string(rank) +
                                    " entered a different collective than its peers at call #" +
                                    std::to_string(index));
    }
    return r;
  }

  template <typename Pred>
  void wait(std::unique_lock<std::mutex>& lock, Round& r, int rank, const char* what, Pred ready) {
    const bool ok = cv.wait_for(lock, options.timeout,
                                [&] { return ready() || r.poisoned || failed_rank >= 0; });
    if (r.poisoned)
      throw CollectiveContractError("peers entered mismatched collectives (" + std::string(what) +
                                    ")");
    if (!ready() && failed_rank >= 0)
      throw TransportError("rank " + std::to_string(failed_rank) + " failed during " + what,
                           failed_rank);
    if (!ok)
      throw TransportError("rank " + std::to_string(rank) + " timed out in " + what);
  }
};

namespace {

class ThreadCommunicator final : public Communicator {
 public:
  ThreadCommunicator(std::shared_ptr<ThreadGroup::Hub> hub, int rank)
      : Communicator(rank, hub->size), hub_(std::move(hub)) {}

  Backend backend() const noexcept override { return Backend::threads; }

 protected:
  std::vector<Bytes> transport_gather(Bytes framed) override {
    using Hub = ThreadGroup::Hub;
    std::unique_lock lock(hub_->mu);
    const std::uint64_t index = calls_++;
    Hub::Round& r = hub_->enter(index, Hub::Kind::gather, rank());
    r.posts[static_cast<std::size_t>(rank())] = std::move(framed);
    ++r.posted;
    hub_->cv.notify_all();
    if (!is_root()) return {};
    hub_->wait(lock, r, rank(), "gather", [&] { return r.posted == hub_->size; });
    std::vector<Bytes> out = std::move(r.posts);
    hub_->rounds.erase(index);
    return out;
  }

  Bytes transport_broadcast(Bytes framed) override {
    using Hub = ThreadGroup::Hub;
    std::unique_lock lock(hub_->mu);
    const std::uint64_t index = calls_++;
    Hub::Round& r = hub_->enter(index, Hub::Kind::broadcast, rank());
    if (is_root()) {
      Bytes copy = framed;
      r.payload = std::move(framed);
      if (++r.readers == hub_->size) hub_->rounds.erase(index);
      hub_->cv.notify_all();
      return copy;
    }
    hub_->wait(lock, r, rank(), "broadcast", [&] { return r.payload.has_value(); });
    Bytes copy = *r.payload;
    if (++r.readers == hub_->size) hub_->rounds.erase(index);
    return copy;
  }

 private:
  std::shared_ptr<ThreadGroup::Hub> hub_;
  std::uint64_t calls_ = 0;
};

}  // namespace

ThreadGroup::ThreadGroup(int size, CommOptions options) {
  if (size < 1) throw ConfigError("thread group size must be >= 1");
  hub_ = std::make_shared<Hub>(size, options);
}

ThreadGroup::~ThreadGroup() = default;

int ThreadGroup::size() const noexcept { return hub_->size; }

std::unique_ptr<Communicator> ThreadGroup::communicator(int rank) {
  return std::make_unique<ThreadCommunicator>(hub_, rank);
}

void ThreadGroup::run(int size, const std::function<void(Communicator&)>& body,
                      CommOptions options) {
  ThreadGroup group(size, options);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(size));
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(size));
  for (int r = 0; r < size; ++r) {
    workers.emplace_back([&, r] {
      try {
        auto comm = group.communicator(r);
        body(*comm);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
        std::lock_guard lock(group.hub_->mu);
        if (group.hub_->failed_rank < 0) group.hub_->failed_rank = r;
        group.hub_->cv.notify_all();
      }
    });
  }
  for (auto& t : workers) t.join();
  // Prefer the original failure over the TransportErrors it caused elsewhere.
  const int first = group.hub_->failed_rank;
  if (first >= 0) std::rethrow_exception(errors[static_cast<std::size_t>(first)]);
}

}  // namespace factorfit::comm
