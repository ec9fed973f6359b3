#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "wv/layers.hpp"
#include "wv/params.hpp"
#include "wv/tensor.hpp"

namespace wv {

// ---------------------------------------------------------------------------
// VAE-lite: deterministic autoencoder with 8x8x8 compression.
//
// Encoder: three linear stride-2x2x2 stages (3 -> 24 -> 192 -> C_lat) followed by
// a residual 3x3x3 block on the latent grid. The decoder mirrors it. The stage
// widths are exactly large enough for the first two stages to act as a
// space-to-depth reshuffle, so the third stage can hold any linear map of an
// 8x8x8 RGB patch.

struct VaeConfig {
  int channels = 8;     // C_lat
  int res_hidden = 32;  // hidden width of the latent residual blocks
  void validate() const;
};

class Vae {
 public:
  static constexpr int kWidth1 = 24, kWidth2 = 192;

  Vae(const VaeConfig& cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// x [3,T,H,W] -> [C_lat, T/8, H/8, W/8]
  ad::Var encode(const ad::Var& video) const;
  /// Linear (unclamped) decoder output, used by the training loss.
  ad::Var decode_raw(const ad::Var& latent) const;

  /// Sets the stride-2 stages to the principal subspace of the 8x8x8 patches of
  /// `videos` (centred on the per-colour mean, latent scaled to unit mean
  /// variance) and zeroes the residual blocks' output convolutions.
  void pca_init(const std::vector<Tensor>& videos);

 private:
  VaeConfig cfg_;
  ParamStore params_;
  nn::Conv3d e1_, e2_, e3_, er1_, er2_;
  nn::Conv3d dr1_, dr2_;
  nn::ConvT3d d1_, d2_, d3_;
};

/// Deterministic encode of a [3,T,H,W] video with values in [0,1].
Tensor vae_encode(const Vae& vae, const Tensor& video);
/// Decode clamped to [0,1].
Tensor vae_decode(const Vae& vae, const Tensor& latent);

struct VaeTrainConfig {
  double lr = 1e-4;
  int steps = 2000;
  int batch = 4;
  double weight_decay = 0.0;
  bool pca_init = true;  // initialize from the training patches before the first step
};

struct VaeStepLog {
  int step;
  double loss;
  double lr;
};

/// Minimizes reconstruction MSE over `videos` (each f64 [3,T,H,W] in [0,1]).
/// Batches are drawn with `stream`; `on_step` receives every step's loss.
/// Returns the per-step losses.
std::vector<double> train_vae(Vae& vae, const std::vector<Tensor>& videos, const VaeTrainConfig& cfg,
                              RandomStream& stream, const std::function<void(const VaeStepLog&)>& on_step = {});

/// u8 [3,T,H,W] -> f64 in [0,1].
Tensor rgb_to_unit(const Tensor& rgb);
/// f64 [3,T,H,W] in [0,1] -> u8.
Tensor unit_to_rgb(const Tensor& video);

/// Disparity colour code: d = 1/z min-max normalized over the clip's foreground
/// (background maps to 0), rgb = (d, 4 d (1 - d), 1 - d).
Tensor colorize_depth(const Tensor& depth);

struct ControlFeatures {
  Tensor sketch;  // f_s [C_lat, Tl, Hl, Wl]
  Tensor depth;   // f_d
};

/// Sketch replicated to 3 channels and colourized depth, both encoded with the frozen VAE.
ControlFeatures encode_controls(const Tensor& edges, const Tensor& depth, const Vae& vae);

// ---------------------------------------------------------------------------
// Patch-wise mixture-of-experts fusion of the two control streams.

struct MoeConfig {
  int channels = 8;  // C_lat
  int heads = 2;
  int tau_dim = 16;  // sinusoid width fed to the gate
  int gate_hidden = 16;
};

class Moe {
 public:
  /// Registers parameters under `prefix` in `ps`.
  Moe(ParamStore& ps, const std::string& prefix, const MoeConfig& cfg, RandomStream& rng);

  struct Output {
    ad::Var c;      // fused control [C, Tl, Hl, Wl]
    ad::Var alpha;  // [Tl*Hl*Wl]
    ad::Var e_s, e_d;
  };

  /// x_tau, f_s, f_d: [C, Tl, Hl, Wl]. A dropped modality's features are replaced by zeros.
  Output operator()(const ad::Var& x_tau, const ad::Var& f_s, const ad::Var& f_d, double tau, bool present_s,
                    bool present_d) const;

  const MoeConfig& config() const { return cfg_; }

 private:
  struct CrossAttention {
    nn::Linear q, k, v, o;
  };
  ad::Var attend(const CrossAttention& a, const ad::Var& queries, const ad::Var& context) const;

  MoeConfig cfg_;
  nn::Conv3d es1_, es2_, ed1_, ed2_;
  CrossAttention s_from_d_, d_from_s_;
  nn::Conv3d gate1_, gate2_;
};

}  // namespace wv
