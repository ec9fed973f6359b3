#pragma once

#include <vector>

#include "wv/latents.hpp"
#include "wv/layers.hpp"
#include "wv/params.hpp"

namespace wv {

struct ModelConfig {
  int dim = 64;  // D
  int blocks = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int views = 3;  // K
  int styles = 4;
  int latent_channels = 8;
  int latent_t = 2, latent_h = 8, latent_w = 8;
  bool use_pointcloud = true;
  bool use_rays = true;
  bool use_crossview = true;
  int point_hidden = 32;
  int ray_hidden = 64;
  int moe_heads = 2;
  double point_radius = 4.0;  // radial clip of normalized points before the point MLP
  void validate() const;
  std::int64_t tokens_per_view() const { return static_cast<std::int64_t>(latent_t) * latent_h * latent_w; }
  Shape latent_shape() const { return {latent_channels, latent_t, latent_h, latent_w}; }
};

/// Per-view model input.
struct ViewInput {
  ad::Var x_tau;          // [C, Tl, Hl, Wl]
  Tensor f_s, f_d;        // encoded sketch / depth controls, [C, Tl, Hl, Wl]
  bool present_s = true;  // modality presence
  bool present_d = true;
  Tensor points;  // normalized pooled points [Tl, Hl, Wl, 3]
  Tensor rays;    // Plücker grid [Tl, Hl, Wl, 6]
  double tau = 0.0;
  int style = 0;
};

/// MoE control fusion followed by the DiT velocity network.
class FlowModel {
 public:
  FlowModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// 64 sinusoidal features of tau * 1000 followed by a two-layer MLP -> [D].
  ad::Var timestep_embed(double tau) const;
  /// Fused control tokens plus optional point and ray injection -> [N, D].
  ad::Var embed_inputs(const ad::Var& x_tau, const ad::Var& c_tau, const Tensor& points, const Tensor& rays) const;
  /// Velocity per view, each with the shape of its x_tau.
  std::vector<ad::Var> forward(const std::vector<ViewInput>& views) const;

  /// Conditioning vector per view: timestep embedding + style embedding.
  ad::Var condition(double tau, int style) const;
  /// Residual self-attention over one view's tokens with adaptive-norm modulation.
  ad::Var intra_view_attention(int block, const ad::Var& tokens, const ad::Var& cond) const;
  /// Residual joint attention over all views' tokens of each latent frame.
  std::vector<ad::Var> cross_view_attention(int block, const std::vector<ad::Var>& tokens,
                                            const std::vector<ad::Var>& conds) const;

  const Moe& moe() const { return moe_; }

 private:
  struct Attention {
    nn::Linear q, k, v, o;
  };
  struct Block {
    nn::Linear mod;        // SiLU(cond) -> shift, scale, gate for attention and MLP (6D)
    nn::Linear cross_mod;  // SiLU(cond) -> shift, scale, gate for cross-view attention (3D)
    Attention self, cross;
    nn::Linear fc1, fc2;
  };

  ad::Var self_attend(const Attention& a, const ad::Var& x) const;
  ad::Var block_forward_mlp(const Block& b, const ad::Var& x, const ad::Var& mod) const;

  ModelConfig cfg_;
  ParamStore params_;
  Moe moe_;
  nn::Linear t1_, t2_;
  ad::Var style_table_, pos_;
  nn::Linear point1_, point2_, ray1_, ray2_, in_proj_;
  std::vector<Block> blocks_;
  nn::Linear final_mod_, head_;
};

}  // namespace wv
