#include "wv/layers.hpp"

#include <cmath>

namespace wv::nn {

namespace {

std::vector<double> init_values(std::int64_t n, int fan_in, Init init, double gain, RandomStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  if (init == Init::kZero) return v;
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : v) x = std * rng.normal();
  return v;
}

}  // namespace

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, RandomStream& rng, Init init, double gain,
               bool bias) {
  w = ps.add(prefix + ".w", {in, out}, init_values(static_cast<std::int64_t>(in) * out, in, init, gain, rng));
  if (bias) b = ps.add_zeros(prefix + ".b", {out});
}

Conv3d::Conv3d(ParamStore& ps, const std::string& prefix, int in, int out, int k, int stride_, int pad_,
               RandomStream& rng, Init init, double gain)
    : stride(stride_), pad(pad_) {
  const int fan_in = in * k * k * k;
  w = ps.add(prefix + ".w", {out, in, k, k, k},
             init_values(static_cast<std::int64_t>(out) * fan_in, fan_in, init, gain, rng));
  b = ps.add_zeros(prefix + ".b", {out});
}

ConvT3d::ConvT3d(ParamStore& ps, const std::string& prefix, int in, int out, RandomStream& rng, double gain) {
  // Each output voxel receives exactly `in` contributions.
  w = ps.add(prefix + ".w", {in, out, 2, 2, 2},
             init_values(static_cast<std::int64_t>(in) * out * 8, in, Init::kFanIn, gain, rng));
  b = ps.add_zeros(prefix + ".b", {out});
}

ad::Var volume_to_tokens(const ad::Var& x) {
  require(x.shape().size() == 4, "volume_to_tokens expects [C,T,H,W]");
  const auto c = x.dim(0);
  return ad::transpose(ad::reshape(x, {c, x.numel() / c}));
}

ad::Var tokens_to_volume(const ad::Var& tokens, const Shape& volume_shape) {
  require(tokens.shape().size() == 2 && tokens.dim(1) == volume_shape.at(0), "tokens_to_volume: channel mismatch");
  return ad::reshape(ad::transpose(tokens), volume_shape);
}

std::vector<double> sinusoid(double s, int dim) {
  require(dim > 0 && dim % 2 == 0, "sinusoid: dim must be even");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double f = std::pow(10000.0, -2.0 * i / dim);
    out[static_cast<std::size_t>(i)] = std::sin(s * f);
    out[static_cast<std::size_t>(half + i)] = std::cos(s * f);
  }
  return out;
}

}  // namespace wv::nn
