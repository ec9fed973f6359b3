#include "wv/rng.hpp"

#include <cmath>
#include <numbers>

namespace wv {

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + (b ^ 0xD1B54A32D192ED03ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::array<std::uint32_t, 4> RandomStream::block() {
  const std::uint64_t c = counter_++;
  return philox4x32({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                     static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)},
                    {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
}

std::uint64_t RandomStream::next_u64() {
  const auto b = block();
  return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

double RandomStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RandomStream::normal() {
  const auto b = block();
  const std::uint64_t a = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
  const std::uint64_t c = (static_cast<std::uint64_t>(b[2]) << 32) | b[3];
  const double u1 = 1.0 - static_cast<double>(a >> 11) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(c >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  require(n > 0, "below(0)");
  // Rejection keeps the result exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

RandomStream RandomStream::split(std::uint64_t child) const {
  return RandomStream(seed_, mix64(stream_id_, child + 1));
}

namespace {
void check_shape(const Shape& shape) {
  require(!shape.empty(), "sample: empty shape");
  for (auto e : shape) require(e > 0, "sample: extents must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor sample_normal(RandomStream& stream, const Shape& shape) {
  check_shape(shape);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = stream.normal();
  return Tensor::f64(shape, std::move(v));
}

Tensor sample_uniform(RandomStream& stream, const Shape& shape) {
  check_shape(shape);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = stream.uniform();
  return Tensor::f64(shape, std::move(v));
}

}  // namespace wv
