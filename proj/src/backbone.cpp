#include "wv/backbone.hpp"

#include <cmath>

namespace wv {

using ad::Var;

void ModelConfig::validate() const {
  if (dim < 1 || blocks < 0 || heads < 1 || mlp_ratio < 1) throw ConfigError("model: dim, heads, mlp_ratio must be positive");
  if (dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
  if (views < 1 || styles < 1 || latent_channels < 1) throw ConfigError("model: views, styles, channels must be positive");
  if (latent_t < 1 || latent_h < 1 || latent_w < 1) throw ConfigError("model: latent extents must be positive");
  if (!(point_radius > 0.0)) throw ConfigError("model: point_radius must be positive");
}

namespace {

constexpr int kTauFeatures = 64;

Var constant_rows(const Tensor& t, std::int64_t rows, std::int64_t cols) {
  const auto v = t.to_f64();
  require(static_cast<std::int64_t>(v.size()) == rows * cols,
          "geometry input has " + std::to_string(v.size()) + " values, expected " + std::to_string(rows * cols));
  return Var::constant(Tensor::f64({rows, cols}, v));
}

}  // namespace

FlowModel::FlowModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      moe_([&]() -> Moe {
        cfg.validate();
        RandomStream rng(seed, 0x30E);
        MoeConfig mc;
        mc.channels = cfg.latent_channels;
        mc.heads = cfg.moe_heads;
        return Moe(params_, "moe", mc, rng);
      }()) {
  RandomStream rng(seed, 0xD17);
  const int d = cfg.dim, c = cfg.latent_channels;
  const double g = std::sqrt(2.0);
  t1_ = nn::Linear(params_, "dit.t_embed.l1", kTauFeatures, d, rng, nn::Init::kFanIn, g);
  t2_ = nn::Linear(params_, "dit.t_embed.l2", d, d, rng);
  {
    std::vector<double> table(static_cast<std::size_t>(cfg.styles) * d);
    for (auto& x : table) x = 0.02 * rng.normal();
    style_table_ = params_.add("dit.style", {cfg.styles, d}, std::move(table));
    std::vector<double> pos(static_cast<std::size_t>(cfg.tokens_per_view()) * d);
    for (auto& x : pos) x = 0.02 * rng.normal();
    pos_ = params_.add("dit.pos", {cfg.tokens_per_view(), d}, std::move(pos));
  }
  point1_ = nn::Linear(params_, "dit.point.l1", 3, cfg.point_hidden, rng, nn::Init::kFanIn, g);
  point2_ = nn::Linear(params_, "dit.point.l2", cfg.point_hidden, c, rng, nn::Init::kZero);
  ray1_ = nn::Linear(params_, "dit.ray.l1", 6, cfg.ray_hidden, rng, nn::Init::kFanIn, g);
  ray2_ = nn::Linear(params_, "dit.ray.l2", cfg.ray_hidden, d, rng, nn::Init::kZero);
  in_proj_ = nn::Linear(params_, "dit.in", c, d, rng);

  // Key biases only shift every logit of a query equally, so they are omitted.
  auto make_attention = [&](const std::string& p) {
    return Attention{nn::Linear(params_, p + ".q", d, d, rng),
                     nn::Linear(params_, p + ".k", d, d, rng, nn::Init::kFanIn, 1.0, false),
                     nn::Linear(params_, p + ".v", d, d, rng), nn::Linear(params_, p + ".o", d, d, rng)};
  };
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "dit.block" + std::to_string(b);
    Block blk;
    blk.mod = nn::Linear(params_, p + ".mod", d, 6 * d, rng, nn::Init::kZero);
    blk.cross_mod = nn::Linear(params_, p + ".cross_mod", d, 3 * d, rng, nn::Init::kZero);
    blk.self = make_attention(p + ".attn");
    blk.cross = make_attention(p + ".xattn");
    blk.fc1 = nn::Linear(params_, p + ".fc1", d, cfg.mlp_ratio * d, rng, nn::Init::kFanIn, g);
    blk.fc2 = nn::Linear(params_, p + ".fc2", cfg.mlp_ratio * d, d, rng);
    blocks_.push_back(std::move(blk));
  }
  final_mod_ = nn::Linear(params_, "dit.final.mod", d, 2 * d, rng, nn::Init::kZero);
  head_ = nn::Linear(params_, "dit.final.head", d, c, rng, nn::Init::kZero);
}

Var FlowModel::timestep_embed(double tau) const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("timestep_embed: tau must lie in [0,1], got " + std::to_string(tau));
  Var f = Var::constant(Tensor::f64({1, kTauFeatures}, nn::sinusoid(tau * 1000.0, kTauFeatures)));
  return ad::reshape(t2_(ad::silu(t1_(f))), {cfg_.dim});
}

Var FlowModel::condition(double tau, int style) const {
  if (style < 0 || style >= cfg_.styles)
    throw ContractError("style id " + std::to_string(style) + " outside [0," + std::to_string(cfg_.styles) + ")");
  return ad::add(timestep_embed(tau), ad::take_row(style_table_, style));
}

Var FlowModel::embed_inputs(const Var& x_tau, const Var& c_tau, const Tensor& points, const Tensor& rays) const {
  require(x_tau.shape() == cfg_.latent_shape(), "embed_inputs: x_tau must be " + shape_str(cfg_.latent_shape()) +
                                                    ", got " + shape_str(x_tau.shape()));
  require(c_tau.shape() == x_tau.shape(), "embed_inputs: control shape mismatch");
  const std::int64_t n = cfg_.tokens_per_view();
  Var h = nn::volume_to_tokens(ad::add(x_tau, c_tau));  // [N, C]
  if (cfg_.use_pointcloud) {
    // Radial clip keeps far background points in a bounded range.
    auto p = points.to_f64();
    require(static_cast<std::int64_t>(p.size()) == n * 3, "embed_inputs: points must be [Tl,Hl,Wl,3]");
    for (std::size_t i = 0; i < p.size(); i += 3) {
      const double r = std::sqrt(p[i] * p[i] + p[i + 1] * p[i + 1] + p[i + 2] * p[i + 2]);
      const double s = 1.0 / std::max(1.0, r / cfg_.point_radius);
      for (int a = 0; a < 3; ++a) p[i + a] *= s;
    }
    h = ad::add(h, point2_(ad::silu(point1_(Var::constant(Tensor::f64({n, 3}, std::move(p)))))));
  }
  Var tokens = in_proj_(h);
  if (cfg_.use_rays) tokens = ad::add(tokens, ray2_(ad::silu(ray1_(constant_rows(rays, n, 6)))));
  return tokens;
}

Var FlowModel::self_attend(const Attention& a, const Var& x) const {
  return a.o(ad::attention(a.q(x), a.k(x), a.v(x), cfg_.heads));
}

Var FlowModel::intra_view_attention(int block, const Var& tokens, const Var& cond) const {
  const Block& b = blocks_.at(static_cast<std::size_t>(block));
  const Var mod = ad::reshape(b.mod(ad::reshape(ad::silu(cond), {1, cfg_.dim})), {6, cfg_.dim});
  const Var y = self_attend(b.self, ad::modulate(ad::layer_norm(tokens), ad::take_row(mod, 0), ad::take_row(mod, 1)));
  return ad::gated_residual(tokens, ad::take_row(mod, 2), y);
}

std::vector<Var> FlowModel::cross_view_attention(int block, const std::vector<Var>& tokens,
                                                 const std::vector<Var>& conds) const {
  const Block& b = blocks_.at(static_cast<std::size_t>(block));
  const std::size_t k = tokens.size();
  const std::int64_t cells = static_cast<std::int64_t>(cfg_.latent_h) * cfg_.latent_w;
  std::vector<Var> normed, gates;
  for (std::size_t v = 0; v < k; ++v) {
    const Var mod = ad::reshape(b.cross_mod(ad::reshape(ad::silu(conds[v]), {1, cfg_.dim})), {3, cfg_.dim});
    normed.push_back(ad::modulate(ad::layer_norm(tokens[v]), ad::take_row(mod, 0), ad::take_row(mod, 1)));
    gates.push_back(ad::take_row(mod, 2));
  }
  std::vector<std::vector<Var>> per_view(k);
  for (std::int64_t t = 0; t < cfg_.latent_t; ++t) {
    std::vector<Var> frame;
    for (std::size_t v = 0; v < k; ++v) frame.push_back(ad::slice0(normed[v], t * cells, (t + 1) * cells));
    const Var joint = self_attend(b.cross, ad::concat0(frame));  // [K*cells, D]
    for (std::size_t v = 0; v < k; ++v)
      per_view[v].push_back(ad::slice0(joint, static_cast<std::int64_t>(v) * cells, static_cast<std::int64_t>(v + 1) * cells));
  }
  std::vector<Var> out;
  for (std::size_t v = 0; v < k; ++v) out.push_back(ad::gated_residual(tokens[v], gates[v], ad::concat0(per_view[v])));
  return out;
}

Var FlowModel::block_forward_mlp(const Block& b, const Var& x, const Var& cond) const {
  const Var mod = ad::reshape(b.mod(ad::reshape(ad::silu(cond), {1, cfg_.dim})), {6, cfg_.dim});
  const Var h = ad::modulate(ad::layer_norm(x), ad::take_row(mod, 3), ad::take_row(mod, 4));
  return ad::gated_residual(x, ad::take_row(mod, 5), b.fc2(ad::silu(b.fc1(h))));
}

std::vector<Var> FlowModel::forward(const std::vector<ViewInput>& views) const {
  if (views.empty()) throw ContractError("dit_forward: no views");
  if (static_cast<int>(views.size()) > cfg_.views)
    throw ContractError("dit_forward: " + std::to_string(views.size()) + " views exceed configured K=" +
                        std::to_string(cfg_.views));
  const std::size_t k = views.size();
  std::vector<Var> tokens, conds;
  for (const auto& in : views) {
    require(in.x_tau.shape() == cfg_.latent_shape(), "dit_forward: x_tau must be " + shape_str(cfg_.latent_shape()) +
                                                         ", got " + shape_str(in.x_tau.shape()));
    const Var cond = condition(in.tau, in.style);
    const auto fused = moe_(in.x_tau, Var::constant(in.f_s), Var::constant(in.f_d), in.tau, in.present_s, in.present_d);
    tokens.push_back(ad::add(embed_inputs(in.x_tau, fused.c, in.points, in.rays), pos_));
    conds.push_back(cond);
  }
  const bool cross = cfg_.use_crossview && k > 1;
  for (int b = 0; b < cfg_.blocks; ++b) {
    for (std::size_t v = 0; v < k; ++v) tokens[v] = intra_view_attention(b, tokens[v], conds[v]);
    if (cross) tokens = cross_view_attention(b, tokens, conds);
    for (std::size_t v = 0; v < k; ++v) tokens[v] = block_forward_mlp(blocks_[static_cast<std::size_t>(b)], tokens[v], conds[v]);
  }
  std::vector<Var> out;
  for (std::size_t v = 0; v < k; ++v) {
    const Var mod = ad::reshape(final_mod_(ad::reshape(ad::silu(conds[v]), {1, cfg_.dim})), {2, cfg_.dim});
    const Var h = ad::modulate(ad::layer_norm(tokens[v]), ad::take_row(mod, 0), ad::take_row(mod, 1));
    out.push_back(nn::tokens_to_volume(head_(h), cfg_.latent_shape()));
  }
  return out;
}

}  // namespace wv
