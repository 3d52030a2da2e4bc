#pragma once

#include "factorfit/types.hpp"

#include <array>
#include <cstdint>
#include <initializer_list>

namespace factorfit {

/// SplitMix64 step. Used only to expand seeds into xoshiro state.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// xoshiro256** 1.0 seeded through SplitMix64.
///
/// The generator and every derived distribution below are pinned so that
/// seeded outputs are identical across platforms and standard libraries;
/// nothing here goes through <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  /// Independent stream for `(base, i, j, ...)`: the words are folded into a
  /// single SplitMix64 state in order, so stream `(b, i)` never depends on
  /// how many other streams exist.
  static Rng stream(std::uint64_t base, std::initializer_list<std::uint64_t> ids) noexcept;

  std::uint64_t next() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer on [0, n); n must be > 0. Lemire's multiply-shift
  /// with rejection, so it is unbiased.
  std::uint64_t bounded(std::uint64_t n) noexcept;

  /// Standard normal via the Marsaglia polar method.
  double normal() noexcept;

  /// rows x cols matrix of standard normals filled column by column.
  Matrix normal_matrix(Index rows, Index cols);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<Index> permutation(Index n);

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace factorfit
