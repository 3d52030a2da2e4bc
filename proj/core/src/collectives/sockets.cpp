#include "factorfit/collectives.hpp"

#include "factorfit/error.hpp"
#include "factorfit/serialize.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <thread>

namespace factorfit::comm {

namespace {

constexpr std::uint32_t kHelloMagic = 0x54494646;  // "FFIT"
constexpr std::uint64_t kMaxFrame = std::uint64_t{1} << 40;

using Clock = std::chrono::steady_clock;

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const noexcept { return fd_; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::string errno_text() { return std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

void wait_ready(int fd, short events, Clock::time_point deadline, int peer, const char* what) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return;
    if (rc == 0)
      throw TransportError(std::string("timed out during ") + what + " with rank " +
                               std::to_string(peer),
                           peer);
    if (errno != EINTR) throw TransportError(std::string("poll failed: ") + errno_text(), peer);
  }
}

void send_all(int fd, const std::uint8_t* data, std::size_t n, int peer, Clock::time_point deadline) {
  while (n > 0) {
    wait_ready(fd, POLLOUT, deadline, peer, "send");
    const ssize_t sent = ::send(fd, data, n, MSG_NOSIGNAL);
    if (sent < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError("lost rank " + std::to_string(peer) + ": " + errno_text(), peer);
    }
    data += sent;
    n -= static_cast<std::size_t>(sent);
  }
}

void recv_all(int fd, std::uint8_t* data, std::size_t n, int peer, Clock::time_point deadline) {
  while (n > 0) {
    wait_ready(fd, POLLIN, deadline, peer, "receive");
    const ssize_t got = ::recv(fd, data, n, 0);
    if (got == 0) throw TransportError("lost rank " + std::to_string(peer) + ": peer closed", peer);
    if (got < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError("lost rank " + std::to_string(peer) + ": " + errno_text(), peer);
    }
    data += got;
    n -= static_cast<std::size_t>(got);
  }
}

// Wire frame: 8-byte little-endian length, one kind byte, then the payload.
enum class Kind : std::uint8_t { data = 0, ready = 1, payload = 2, reject = 3 };

struct Frame {
  Kind kind = Kind::data;
  Bytes body;
};

void send_frame(int fd, Kind kind, const Bytes& body, int peer, CommOptions options) {
  const auto deadline = Clock::now() + options.timeout;
  std::uint8_t head[9];
  store_le64(head, body.size());
  head[8] = static_cast<std::uint8_t>(kind);
  send_all(fd, head, 9, peer, deadline);
  send_all(fd, body.data(), body.size(), peer, deadline);
}

Frame recv_frame(int fd, int peer, CommOptions options) {
  const auto deadline = Clock::now() + options.timeout;
  std::uint8_t head[9];
  recv_all(fd, head, 9, peer, deadline);
  const std::uint64_t n = load_le64(head);
  if (n > kMaxFrame || head[8] > static_cast<std::uint8_t>(Kind::reject))
    throw TransportError("malformed frame header from rank " + std::to_string(peer), peer);
  Frame f{static_cast<Kind>(head[8]), Bytes(static_cast<std::size_t>(n))};
  recv_all(fd, f.body.data(), f.body.size(), peer, deadline);
  return f;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const Endpoint& where) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string host = where.host.empty() ? "127.0.0.1" : where.host;
  const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr)
    throw TransportError("cannot resolve '" + host + "': " + ::gai_strerror(rc));
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(where.port);
  return addr;
}

class SocketCommunicator final : public Communicator {
 public:
  // Root: peers[r] is the connection to rank r (peers[0] unused).
  SocketCommunicator(int size, std::vector<Fd> peers, CommOptions options)
      : Communicator(0, size), peers_(std::move(peers)), options_(options) {}
  // Non-root: single connection to the root.
  SocketCommunicator(int rank, int size, Fd root_fd, CommOptions options)
      : Communicator(rank, size), options_(options) {
    peers_.resize(1);
    peers_[0] = std::move(root_fd);
  }

  Backend backend() const noexcept override { return Backend::sockets; }

 protected:
  // A non-root rank announces a broadcast with a ready frame, so the root
  // sees a gather on one side and a broadcast on the other as a frame of the
  // wrong kind instead of both sides waiting to receive.
  std::vector<Bytes> transport_gather(Bytes framed) override {
    if (!is_root()) {
      send_frame(peers_[0].get(), Kind::data, framed, root, options_);
      return {};
    }
    std::vector<Bytes> out(static_cast<std::size_t>(size()));
    out[0] = std::move(framed);
    for (int r = 1; r < size(); ++r) {
      Frame f = recv_frame(peers_[static_cast<std::size_t>(r)].get(), r, options_);
      if (f.kind != Kind::data) reject(r, "a gather", "a broadcast");
      out[static_cast<std::size_t>(r)] = std::move(f.body);
    }
    return out;
  }

  Bytes transport_broadcast(Bytes framed) override {
    if (!is_root()) {
      send_frame(peers_[0].get(), Kind::ready, {}, root, options_);
      Frame f = recv_frame(peers_[0].get(), root, options_);
      if (f.kind == Kind::reject)
        throw CollectiveContractError("rank " + std::to_string(rank()) +
                                      " diverged from the collective sequence: " +
                                      std::string(f.body.begin(), f.body.end()));
      if (f.kind != Kind::payload) throw TransportError("unexpected frame from rank 0", root);
      return std::move(f.body);
    }
    for (int r = 1; r < size(); ++r) {
      const Frame f = recv_frame(peers_[static_cast<std::size_t>(r)].get(), r, options_);
      if (f.kind != Kind::ready) reject(r, "a broadcast", "a gather");
    }
    for (int r = 1; r < size(); ++r)
      send_frame(peers_[static_cast<std::size_t>(r)].get(), Kind::payload, framed, r, options_);
    return framed;
  }

 private:
  [[noreturn]] void reject(int peer, const char* mine, const char* theirs) {
    const std::string why = "rank 0 issued " + std::string(mine) + " while rank " +
                            std::to_string(peer) + " issued " + theirs;
    const Bytes body(why.begin(), why.end());
    for (int r = 1; r < size(); ++r) {
      try {
        send_frame(peers_[static_cast<std::size_t>(r)].get(), Kind::reject, body, r, options_);
      } catch (const TransportError&) {
      }
    }
    throw CollectiveContractError(why);
  }

  std::vector<Fd> peers_;
  CommOptions options_;
};

}  // namespace

Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 >= text.size())
    throw ConfigError("coordinator address must be host:port, got '" + std::string(text) + "'");
  unsigned port = 0;
  const auto digits = text.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535)
    throw ConfigError("bad port in '" + std::string(text) + "'");
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

SocketListener SocketListener::bind(const Endpoint& where) {
  const sockaddr_in addr = resolve(where);
  Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (fd.get() < 0) throw TransportError("socket(): " + errno_text());
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0)
    throw TransportError("bind " + where.host + ":" + std::to_string(where.port) + ": " +
                         errno_text());
  if (::listen(fd.get(), 128) != 0) throw TransportError("listen(): " + errno_text());
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
  return SocketListener(fd.release(), ntohs(bound.sin_port));
}

SocketListener::SocketListener(SocketListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), port_(other.port_) {}

SocketListener& SocketListener::operator=(SocketListener&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    port_ = other.port_;
  }
  return *this;
}

SocketListener::~SocketListener() { close(); }

void SocketListener::close() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

std::unique_ptr<Communicator> SocketListener::accept(int size, CommOptions options) && {
  if (fd_ < 0) throw TransportError("listener already closed");
  if (size < 1) throw ConfigError("communicator size must be >= 1");
  const auto deadline = Clock::now() + options.timeout;
  std::vector<Fd> peers(static_cast<std::size_t>(size));
  for (int accepted = 1; accepted < size; ++accepted) {
    wait_ready(fd_, POLLIN, deadline, -1, "accept");
    Fd conn(::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC));
    if (conn.get() < 0) throw TransportError("accept(): " + errno_text());
    set_nodelay(conn.get());
    const Frame hello = recv_frame(conn.get(), -1, options);
    ByteReader rd(hello.body);
    const auto magic = rd.u32();
    const auto rank = static_cast<int>(rd.u32());
    const auto their_size = static_cast<int>(rd.u32());
    if (magic != kHelloMagic) throw TransportError("peer sent a bad handshake");
    if (their_size != size || rank < 1 || rank >= size)
      throw CollectiveContractError("peer announced rank " + std::to_string(rank) + " of " +
                                    std::to_string(their_size) + ", expected size " +
                                    std::to_string(size));
    if (peers[static_cast<std::size_t>(rank)].get() >= 0)
      throw CollectiveContractError("two peers announced rank " + std::to_string(rank));
    peers[static_cast<std::size_t>(rank)] = std::move(conn);
  }
  close();
  return std::make_unique<SocketCommunicator>(size, std::move(peers), options);
}

std::unique_ptr<Communicator> connect_socket(int rank, int size, const Endpoint& coordinator,
                                             CommOptions options) {
  if (rank < 1 || rank >= size)
    throw ConfigError("connect_socket is for ranks 1..size-1, got " + std::to_string(rank));
  const sockaddr_in addr = resolve(coordinator);
  const auto deadline = Clock::now() + options.timeout;
  for (;;) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (fd.get() < 0) throw TransportError("socket(): " + errno_text());
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_nodelay(fd.get());
      ByteWriter w;
      w.u32(kHelloMagic);
      w.u32(static_cast<std::uint32_t>(rank));
      w.u32(static_cast<std::uint32_t>(size));
      send_frame(fd.get(), Kind::data, w.bytes(), Communicator::root, options);
      return std::make_unique<SocketCommunicator>(rank, size, std::move(fd), options);
    }
    if (Clock::now() >= deadline)
      throw TransportError("rank " + std::to_string(rank) + " could not reach " +
                               coordinator.host + ":" + std::to_string(coordinator.port) + ": " +
                               errno_text(),
                           Communicator::root);
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

std::unique_ptr<Communicator> socket_communicator_from_env(CommOptions options) {
  const auto read_int = [](const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr) throw ConfigError(std::string(name) + " is not set");
    int out = 0;
    const std::string_view s(v);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw ConfigError(std::string(name) + " is not an integer: '" + v + "'");
    return out;
  };
  const int rank = read_int(kRankEnv);
  const int size = read_int(kSizeEnv);
  const char* coord = std::getenv(kCoordEnv);
  if (coord == nullptr) throw ConfigError(std::string(kCoordEnv) + " is not set");
  if (size < 1 || rank < 0 || rank >= size)
    throw ConfigError("invalid " + std::string(kRankEnv) + "/" + kSizeEnv + " pair " +
                      std::to_string(rank) + "/" + std::to_string(size));
  const Endpoint ep = parse_endpoint(coord);
  if (rank == Communicator::root) return SocketListener::bind(ep).accept(size, options);
  return connect_socket(rank, size, ep, options);
}

}  // namespace factorfit::comm
