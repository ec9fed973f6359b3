#pragma once

#include <array>
#include <cstdint>

#include "wv/tensor.hpp"

namespace wv {

/// Counter-based random stream (Philox4x32-10). A draw is a pure function of
/// (seed, stream_id, counter), so streams can be split and replayed without
/// shared state.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one value per counter step).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::uint64_t next_u64();

  /// A new stream keyed by this stream's seed and a derived id; does not advance this stream.
  RandomStream split(std::uint64_t child) const;

 private:
  std::array<std::uint32_t, 4> block();

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

/// 64-bit mixing hash, used to derive per-item seeds.
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

Tensor sample_normal(RandomStream& stream, const Shape& shape);
Tensor sample_uniform(RandomStream& stream, const Shape& shape);

}  // namespace wv
