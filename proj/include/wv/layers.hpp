#pragma once

#include <string>

#include "wv/autodiff.hpp"
#include "wv/params.hpp"

// Thin parameter holders over ad:: ops. Each registers its tensors in a
// ParamStore under `<prefix>.w` / `<prefix>.b`.

namespace wv::nn {

enum class Init { kFanIn, kZero };

struct Linear {
  ad::Var w, b;
  Linear() = default;
  /// `bias = false` registers no bias tensor.
  Linear(ParamStore& ps, const std::string& prefix, int in, int out, RandomStream& rng, Init init = Init::kFanIn,
         double gain = 1.0, bool bias = true);
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
};

struct Conv3d {
  ad::Var w, b;
  int stride = 1, pad = 0;
  Conv3d() = default;
  Conv3d(ParamStore& ps, const std::string& prefix, int in, int out, int k, int stride, int pad, RandomStream& rng,
         Init init = Init::kFanIn, double gain = 1.0);
  ad::Var operator()(const ad::Var& x) const { return ad::conv3d(x, w, b, stride, pad); }
};

/// Transposed convolution, kernel 2, stride 2.
struct ConvT3d {
  ad::Var w, b;
  ConvT3d() = default;
  ConvT3d(ParamStore& ps, const std::string& prefix, int in, int out, RandomStream& rng, double gain = 1.0);
  ad::Var operator()(const ad::Var& x) const { return ad::conv_transpose3d_k2s2(x, w, b); }
};

/// [C,T,H,W] <-> [T*H*W, C] token layout.
ad::Var volume_to_tokens(const ad::Var& x);
ad::Var tokens_to_volume(const ad::Var& tokens, const Shape& volume_shape);

/// Sinusoidal features of a scalar: [sin(s*f_0..), cos(s*f_0..)], f_i = 10000^(-2i/dim).
std::vector<double> sinusoid(double s, int dim);

}  // namespace wv::nn
