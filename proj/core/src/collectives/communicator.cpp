#include "factorfit/collectives.hpp"

#include "factorfit/error.hpp"
#include "factorfit/serialize.hpp"

#include <chrono>

namespace factorfit::comm {

namespace {

constexpr std::size_t kFrameHeader = 9;  // op (1) + sequence number (8)

const char* op_name(std::uint8_t op) {
  switch (op) {
    case 1: return "gather";
    case 2: return "broadcast";
    case 3: return "barrier";
    case 4: return "reduce_sum";
    case 5: return "reduce_status";
    default: return "unknown";
  }
}

class Stopwatch {
 public:
  explicit Stopwatch(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

class SerialCommunicator final : public Communicator {
 public:
  SerialCommunicator() : Communicator(0, 1) {}
  Backend backend() const noexcept override { return Backend::serial; }

 protected:
  std::vector<Bytes> transport_gather(Bytes framed) override {
    std::vector<Bytes> out;
    out.push_back(std::move(framed));
    return out;
  }
  Bytes transport_broadcast(Bytes framed) override { return framed; }
};

}  // namespace

std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::serial: return "serial";
    case Backend::threads: return "threads";
    case Backend::sockets: return "sockets";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "serial") return Backend::serial;
  if (name == "threads") return Backend::threads;
  if (name == "sockets") return Backend::sockets;
  throw ConfigError("unknown backend '" + std::string(name) + "' (serial|threads|sockets)");
}

Communicator::Communicator(int rank, int size) : rank_(rank), size_(size) {
  if (size < 1) throw ConfigError("communicator size must be >= 1");
  if (rank < 0 || rank >= size)
    throw ConfigError("rank " + std::to_string(rank) + " outside [0, " + std::to_string(size) + ")");
}

Bytes Communicator::frame(Op op, std::span<const std::uint8_t> body) const {
  Bytes out(kFrameHeader + body.size());
  out[0] = static_cast<std::uint8_t>(op);
  store_le64(out.data() + 1, seq_);
  std::copy(body.begin(), body.end(), out.begin() + kFrameHeader);
  return out;
}

std::span<const std::uint8_t> Communicator::unframe(Op op, const Bytes& framed, int from) const {
  if (framed.size() < kFrameHeader)
    throw CollectiveContractError("short collective frame from rank " + std::to_string(from));
  const std::uint8_t got = framed[0];
  const std::uint64_t seq = load_le64(framed.data() + 1);
  if (got != static_cast<std::uint8_t>(op) || seq != seq_)
    throw CollectiveContractError("rank " + std::to_string(from) + " issued " + op_name(got) +
                                  " as call #" + std::to_string(seq) + " while rank " +
                                  std::to_string(rank_) + " issued " +
                                  op_name(static_cast<std::uint8_t>(op)) + " as call #" +
                                  std::to_string(seq_));
  return {framed.data() + kFrameHeader, framed.size() - kFrameHeader};
}

std::vector<Bytes> Communicator::gather_framed(Op op, Bytes body) {
  auto framed = transport_gather(frame(op, body));
  if (is_root()) {
    if (framed.size() != static_cast<std::size_t>(size_))
      throw CollectiveContractError("gather returned " + std::to_string(framed.size()) +
                                    " payloads for " + std::to_string(size_) + " ranks");
    std::vector<Bytes> out;
    out.reserve(framed.size());
    for (std::size_t r = 0; r < framed.size(); ++r) {
      const auto bodyspan = unframe(op, framed[r], static_cast<int>(r));
      out.emplace_back(bodyspan.begin(), bodyspan.end());
    }
    ++seq_;
    return out;
  }
  ++seq_;
  return {};
}

Bytes Communicator::broadcast_framed(Op op, Bytes body) {
  Bytes framed = transport_broadcast(is_root() ? frame(op, body) : Bytes{});
  const auto bodyspan = unframe(op, framed, root);
  ++seq_;
  return Bytes(bodyspan.begin(), bodyspan.end());
}

Matrix Communicator::reduce_sum(const Matrix& local) {
  return reduce_sum_items(std::span<const Matrix>(&local, 1));
}

Matrix Communicator::reduce_sum_items(std::span<const Matrix> items) {
  Stopwatch timer(stats_.seconds);
  ++stats_.reduce_calls;
  ByteWriter w;
  w.u64(items.size());
  for (const auto& m : items) w.matrix(m);
  Bytes body = std::move(w).take();
  stats_.reduce_bytes += body.size();

  auto contributions = gather_framed(Op::reduce, std::move(body));

  Matrix sum;
  std::string problem;
  if (is_root()) {
    bool have_shape = false;
    for (std::size_t r = 0; r < contributions.size() && problem.empty(); ++r) {
      ByteReader rd(contributions[r]);
      const auto count = rd.u64();
      for (std::uint64_t i = 0; i < count; ++i) {
        Matrix m = rd.matrix();
        if (!have_shape) {
          sum = std::move(m);
          have_shape = true;
          continue;
        }
        if (m.rows() != sum.rows() || m.cols() != sum.cols()) {
          problem = "reduce_sum shape mismatch: rank " + std::to_string(r) + " item " +
                    std::to_string(i) + " is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(sum.rows()) + "x" +
                    std::to_string(sum.cols());
          break;
        }
        sum += m;
      }
    }
    if (problem.empty() && !have_shape) problem = "reduce_sum called with no items on any rank";
  }

  ByteWriter status;
  status.u8(problem.empty() ? 0 : 1);
  status.str(problem);
  const Bytes verdict = broadcast_framed(Op::status, std::move(status).take());
  ByteReader rd(verdict);
  if (rd.u8() != 0) throw CollectiveContractError(rd.str());
  return is_root() ? sum : Matrix();
}

Matrix Communicator::broadcast(const Matrix& buf) {
  Stopwatch timer(stats_.seconds);
  ++stats_.broadcast_calls;
  Bytes body;
  if (is_root()) {
    ByteWriter w;
    w.matrix(buf);
    body = std::move(w).take();
    stats_.broadcast_bytes += body.size();
  }
  const Bytes got = broadcast_framed(Op::broadcast, std::move(body));
  ByteReader rd(got);
  return rd.matrix();
}

Bytes Communicator::broadcast_bytes(Bytes payload) {
  Stopwatch timer(stats_.seconds);
  ++stats_.broadcast_calls;
  if (is_root()) stats_.broadcast_bytes += payload.size();
  return broadcast_framed(Op::broadcast, is_root() ? std::move(payload) : Bytes{});
}

std::vector<Bytes> Communicator::gather(Bytes local) {
  Stopwatch timer(stats_.seconds);
  ++stats_.gather_calls;
  stats_.gather_bytes += local.size();
  return gather_framed(Op::gather, std::move(local));
}

void Communicator::barrier() {
  Stopwatch timer(stats_.seconds);
  ++stats_.barrier_calls;
  gather_framed(Op::barrier, {});
  broadcast_framed(Op::barrier, {});
}

std::unique_ptr<Communicator> make_serial() { return std::make_unique<SerialCommunicator>(); }

Range block_partition(Index count, int size, int rank) {
  if (size < 1 || rank < 0 || rank >= size) throw ConfigError("invalid rank/size for partition");
  const Index base = count / size;
  const Index extra = count % size;
  const Index begin = rank * base + std::min<Index>(rank, extra);
  return {begin, begin + base + (rank < extra ? 1 : 0)};
}

Placement place_local_items(Communicator& comm, Index local_count) {
  ByteWriter mine;
  mine.u64(static_cast<std::uint64_t>(local_count));
  const auto counts = comm.gather(std::move(mine).take());
  Bytes table;
  if (comm.is_root()) {
    ByteWriter w;
    std::uint64_t acc = 0;
    for (const auto& c : counts) {
      w.u64(acc);
      acc += ByteReader(c).u64();
    }
    w.u64(acc);
    table = std::move(w).take();
  }
  table = comm.broadcast_bytes(std::move(table));
  ByteReader rd(table);
  std::vector<Index> offsets;
  for (int r = 0; r <= comm.size(); ++r) offsets.push_back(static_cast<Index>(rd.u64()));
  const auto me = static_cast<std::size_t>(comm.rank());
  return {{offsets[me], offsets[me + 1]}, offsets.back()};
}

}  // namespace factorfit::comm
