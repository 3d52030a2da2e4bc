#pragma once

#include "factorfit/types.hpp"

#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace factorfit::comm {

enum class Backend { serial, threads, sockets };

std::string_view to_string(Backend b) noexcept;
/// Throws ConfigError for unknown names.
Backend parse_backend(std::string_view name);

struct CommOptions {
  /// Upper bound on any single blocking wait (barrier, receive, accept).
  std::chrono::milliseconds timeout{60'000};
};

/// Bytes this rank contributed to each collective, plus wall time spent
/// inside collective calls.
struct CommStats {
  std::uint64_t reduce_bytes = 0;
  std::uint64_t gather_bytes = 0;
  std::uint64_t broadcast_bytes = 0;
  std::uint64_t reduce_calls = 0;
  std::uint64_t gather_calls = 0;
  std::uint64_t broadcast_calls = 0;
  std::uint64_t barrier_calls = 0;
  double seconds = 0.0;
};

/// Rank-symmetric collectives over a pluggable transport.
///
/// Every rank must issue the same sequence of collective calls. Calls are
/// matched by their position in that sequence; a rank issuing a different
/// collective at the same position gets a CollectiveContractError.
/// Reductions fold contributions in ascending rank order on the root, so
/// results do not depend on the backend.
class Communicator {
 public:
  static constexpr int root = 0;

  virtual ~Communicator() = default;
  Communicator(const Communicator&) = delete;
  Communicator& operator=(const Communicator&) = delete;

  int rank() const noexcept { return rank_; }
  int size() const noexcept { return size_; }
  bool is_root() const noexcept { return rank_ == root; }
  virtual Backend backend() const noexcept = 0;

  /// Elementwise sum over ranks, valid on the root. Other ranks get a 0x0
  /// matrix. Shape disagreement raises CollectiveContractError on every rank.
  Matrix reduce_sum(const Matrix& local);

  /// Sum of every rank's `items`, folded on the root in (rank, item) order:
  /// ((r0[0] + r0[1]) + r1[0]) + ... With items distributed to ranks in
  /// contiguous blocks this equals a serial left fold over all items.
  /// All items on all ranks must share one shape; a rank may pass no items.
  Matrix reduce_sum_items(std::span<const Matrix> items);

  /// Root's matrix, bit-identical on every rank. Non-root input is ignored.
  Matrix broadcast(const Matrix& buf);
  Bytes broadcast_bytes(Bytes payload);

  /// Root receives every rank's payload ordered by rank; others get {}.
  std::vector<Bytes> gather(Bytes local);

  /// Returns once every rank has entered. TransportError on timeout.
  void barrier();

  const CommStats& stats() const noexcept { return stats_; }
  void reset_stats() noexcept { stats_ = {}; }

 protected:
  Communicator(int rank, int size);

  enum class Op : std::uint8_t { gather = 1, broadcast = 2, barrier = 3, reduce = 4, status = 5 };

  /// Transport primitives. Payloads arrive already framed with the op tag
  /// and sequence number; implementations move bytes and never inspect them.
  virtual std::vector<Bytes> transport_gather(Bytes framed) = 0;
  virtual Bytes transport_broadcast(Bytes framed) = 0;

 private:
  Bytes frame(Op op, std::span<const std::uint8_t> body) const;
  std::span<const std::uint8_t> unframe(Op op, const Bytes& framed, int from) const;
  std::vector<Bytes> gather_framed(Op op, Bytes body);
  Bytes broadcast_framed(Op op, Bytes body);

  int rank_;
  int size_;
  std::uint64_t seq_ = 0;
  CommStats stats_;
};

/// Size-1 communicator; every collective is local.
std::unique_ptr<Communicator> make_serial();

/// In-process workers sharing one rendezvous. Each communicator must be
/// driven by its own thread.
class ThreadGroup {
 public:
  explicit ThreadGroup(int size, CommOptions options = {});
  ~ThreadGroup();

  int size() const noexcept;
  std::unique_ptr<Communicator> communicator(int rank);

  /// Runs `body` on `size` threads, one communicator each, and rethrows the
  /// exception of the first rank that failed. Peers blocked on the failed
  /// rank are released with a TransportError instead of waiting out the
  /// timeout.
  static void run(int size, const std::function<void(Communicator&)>& body,
                  CommOptions options = {});

  struct Hub;

 private:
  std::shared_ptr<Hub> hub_;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "host:port". Throws ConfigError.
Endpoint parse_endpoint(std::string_view text);

/// Rank 0 side of the sockets backend: binds first so that the chosen port
/// (useful with port 0) can be handed to the other ranks before accepting.
class SocketListener {
 public:
  static SocketListener bind(const Endpoint& where);
  SocketListener(SocketListener&& other) noexcept;
  SocketListener& operator=(SocketListener&& other) noexcept;
  ~SocketListener();

  std::uint16_t port() const noexcept { return port_; }
  /// Accepts `size - 1` peers and returns the root communicator.
  std::unique_ptr<Communicator> accept(int size, CommOptions options = {}) &&;
  /// Closes the listening socket without accepting (e.g. in forked children).
  void close() noexcept;

 private:
  SocketListener(int fd, std::uint16_t port) : fd_(fd), port_(port) {}
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Non-root side: connects to rank 0, retrying until `options.timeout`.
std::unique_ptr<Communicator> connect_socket(int rank, int size, const Endpoint& coordinator,
                                             CommOptions options = {});

/// Environment variables read by `socket_communicator_from_env`.
inline constexpr const char* kRankEnv = "FACTORFIT_RANK";
inline constexpr const char* kSizeEnv = "FACTORFIT_SIZE";
inline constexpr const char* kCoordEnv = "FACTORFIT_COORD";

/// Builds a sockets communicator from FACTORFIT_RANK / FACTORFIT_SIZE /
/// FACTORFIT_COORD. Rank 0 listens on the coordinator address.
std::unique_ptr<Communicator> socket_communicator_from_env(CommOptions options = {});

/// Contiguous block [begin, end) of `count` items owned by `rank`.
struct Range {
  Index begin = 0;
  Index end = 0;
  Index size() const noexcept { return end - begin; }
};
Range block_partition(Index count, int size, int rank);

/// Global index range of this rank's items when every rank holds a
/// contiguous block in rank order, and the total item count.
struct Placement {
  Range range;
  Index total = 0;
};
Placement place_local_items(Communicator& comm, Index local_count);

}  // namespace factorfit::comm
