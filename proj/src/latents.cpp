#include "wv/latents.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "wv/scene.hpp"

namespace wv {

using ad::Var;

void VaeConfig::validate() const {
  if (channels < 1 || res_hidden < 1) throw ConfigError("vae: channels and res_hidden must be positive");
  if (channels > 3 * 512) throw ConfigError("vae: channels cannot exceed the 1536 values of an 8x8x8 RGB patch");
}

Vae::Vae(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RandomStream rng(seed, 0x7AE);
  const int c = cfg.channels, hr = cfg.res_hidden;
  const double g = std::sqrt(2.0);
  e1_ = nn::Conv3d(params_, "vae.enc1", 3, kWidth1, 2, 2, 0, rng);
  e2_ = nn::Conv3d(params_, "vae.enc2", kWidth1, kWidth2, 2, 2, 0, rng);
  e3_ = nn::Conv3d(params_, "vae.enc3", kWidth2, c, 2, 2, 0, rng);
  er1_ = nn::Conv3d(params_, "vae.enc_res.conv1", c, hr, 3, 1, 1, rng, nn::Init::kFanIn, g);
  er2_ = nn::Conv3d(params_, "vae.enc_res.conv2", hr, c, 3, 1, 1, rng, nn::Init::kFanIn, 0.1);
  dr1_ = nn::Conv3d(params_, "vae.dec_res.conv1", c, hr, 3, 1, 1, rng, nn::Init::kFanIn, g);
  dr2_ = nn::Conv3d(params_, "vae.dec_res.conv2", hr, c, 3, 1, 1, rng, nn::Init::kFanIn, 0.1);
  d1_ = nn::ConvT3d(params_, "vae.dec1", c, kWidth2, rng);
  d2_ = nn::ConvT3d(params_, "vae.dec2", kWidth2, kWidth1, rng);
  d3_ = nn::ConvT3d(params_, "vae.dec3", kWidth1, 3, rng);
}

Var Vae::encode(const Var& video) const {
  require(video.shape().size() == 4 && video.dim(0) == 3, "vae_encode expects [3,T,H,W], got " + shape_str(video.shape()));
  for (int a = 1; a < 4; ++a)
    require(video.dim(a) % 8 == 0, "vae_encode: T, H, W must be multiples of 8, got " + shape_str(video.shape()));
  const Var z = e3_(e2_(e1_(video)));
  return ad::add(z, er2_(ad::silu(er1_(z))));
}

Var Vae::decode_raw(const Var& latent) const {
  require(latent.shape().size() == 4 && latent.dim(0) == cfg_.channels, "vae_decode: latent channel mismatch");
  const Var z = ad::add(latent, dr2_(ad::silu(dr1_(latent))));
  return d3_(d2_(d1_(z)));
}

namespace {

constexpr int kPatch = 3 * 512;

// Index of (colour c, offset t,h,w within the 8x8x8 patch) in a patch vector.
int patch_index(int c, int t, int h, int w) { return ((c * 8 + t) * 8 + h) * 8 + w; }

void fill(Var& p, double value) {
  auto v = p.mutable_value();
  std::fill(v.begin(), v.end(), value);
}

}  // namespace

void Vae::pca_init(const std::vector<Tensor>& videos) {
  if (videos.empty()) throw ConfigError("vae pca_init: empty dataset");
  const int c_lat = cfg_.channels;

  // Per-colour mean over every video.
  std::array<double, 3> mean{};
  double count = 0.0;
  for (const auto& v : videos) {
    require(v.shape().size() == 4 && v.shape()[0] == 3, "vae pca_init expects [3,T,H,W] videos");
    for (int a = 1; a < 4; ++a) require(v.shape()[static_cast<std::size_t>(a)] % 8 == 0, "vae pca_init: extents must be multiples of 8");
    const auto x = v.to_f64();
    const std::size_t n = x.size() / 3;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < n; ++i) mean[static_cast<std::size_t>(c)] += x[c * n + i];
    count += static_cast<double>(n);
  }
  for (auto& m : mean) m /= count;

  // Second moment of the centred patch vectors.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kPatch, kPatch);
  std::int64_t patches = 0;
  for (const auto& v : videos) {
    const auto x = v.to_f64();
    const std::int64_t t = v.shape()[1], h = v.shape()[2], w = v.shape()[3];
    const std::int64_t pt = t / 8, ph = h / 8, pw = w / 8, np = pt * ph * pw;
    Eigen::MatrixXd rows(np, kPatch);
    for (std::int64_t p = 0; p < np; ++p) {
      const std::int64_t bt = p / (ph * pw), bh = (p / pw) % ph, bw = p % pw;
      for (int c = 0; c < 3; ++c)
        for (int ot = 0; ot < 8; ++ot)
          for (int oh = 0; oh < 8; ++oh)
            for (int ow = 0; ow < 8; ++ow) {
              const std::int64_t src = ((c * t + bt * 8 + ot) * h + bh * 8 + oh) * w + bw * 8 + ow;
              rows(p, patch_index(c, ot, oh, ow)) = x[static_cast<std::size_t>(src)] - mean[static_cast<std::size_t>(c)];
            }
    }
    cov.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
    patches += np;
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(patches);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("vae pca_init: eigendecomposition failed");
  // Leading components, largest first, sign fixed by the largest-magnitude entry.
  Eigen::MatrixXd basis(kPatch, c_lat);
  double energy = 0.0;
  for (int j = 0; j < c_lat; ++j) {
    const int src = kPatch - 1 - j;
    Eigen::VectorXd col = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0.0) col = -col;
    basis.col(j) = col;
    energy += std::max(eig.eigenvalues()(src), 0.0);
  }
  const double scale = energy > 0.0 ? 1.0 / std::sqrt(energy / c_lat) : 1.0;

  // Stage 1: colour c, offset k1 -> channel c*8 + k1 (minus the colour mean).
  // Stage 2: channel o1, offset k2 -> channel o1*8 + k2.
  // Stage 3: projection onto the basis; offsets combine coarse-to-fine.
  for (Var* p : {&e1_.w, &e1_.b, &e2_.w, &e2_.b, &e3_.b, &d1_.b, &d2_.w, &d2_.b, &d3_.w}) fill(*p, 0.0);
  auto w1 = e1_.w.mutable_value();
  auto b1 = e1_.b.mutable_value();
  auto w2 = e2_.w.mutable_value();
  auto tw1 = d3_.w.mutable_value();
  auto tb1 = d3_.b.mutable_value();
  auto tw2 = d2_.w.mutable_value();
  for (int c = 0; c < 3; ++c) {
    tb1[static_cast<std::size_t>(c)] = mean[static_cast<std::size_t>(c)];
    for (int k = 0; k < 8; ++k) {
      const int o1 = c * 8 + k;
      b1[static_cast<std::size_t>(o1)] = -mean[static_cast<std::size_t>(c)];
      w1[static_cast<std::size_t>((o1 * 3 + c) * 8 + k)] = 1.0;   // enc1.w [24,3,2,2,2]
      tw1[static_cast<std::size_t>((o1 * 3 + c) * 8 + k)] = 1.0;  // dec3.w [24,3,2,2,2]
    }
  }
  for (int o1 = 0; o1 < kWidth1; ++o1)
    for (int k = 0; k < 8; ++k) {
      const int o2 = o1 * 8 + k;
      w2[static_cast<std::size_t>((o2 * kWidth1 + o1) * 8 + k)] = 1.0;   // enc2.w [192,24,2,2,2]
      tw2[static_cast<std::size_t>((o2 * kWidth1 + o1) * 8 + k)] = 1.0;  // dec2.w [192,24,2,2,2]
    }
  auto w3 = e3_.w.mutable_value();   // [C,192,2,2,2]
  auto tw3 = d1_.w.mutable_value();  // [C,192,2,2,2]
  for (int j = 0; j < c_lat; ++j)
    for (int o2 = 0; o2 < kWidth2; ++o2)
      for (int k3 = 0; k3 < 8; ++k3) {
        const int c = o2 / 64, k1 = (o2 / 8) % 8, k2 = o2 % 8;
        const auto bit = [](int k, int shift) { return (k >> shift) & 1; };
        const int ot = 4 * bit(k3, 2) + 2 * bit(k2, 2) + bit(k1, 2);
        const int oh = 4 * bit(k3, 1) + 2 * bit(k2, 1) + bit(k1, 1);
        const int ow = 4 * bit(k3, 0) + 2 * bit(k2, 0) + bit(k1, 0);
        const double v = basis(patch_index(c, ot, oh, ow), j);
        const std::size_t at = static_cast<std::size_t>((j * kWidth2 + o2) * 8 + k3);
        w3[at] = scale * v;
        tw3[at] = v / scale;
      }
  for (Var* p : {&er2_.w, &er2_.b, &dr2_.w, &dr2_.b}) fill(*p, 0.0);
}

Tensor vae_encode(const Vae& vae, const Tensor& video) {
  ad::NoGradGuard guard;
  return vae.encode(Var::constant(video)).to_tensor();
}

Tensor vae_decode(const Vae& vae, const Tensor& latent) {
  ad::NoGradGuard guard;
  auto v = vae.decode_raw(Var::constant(latent)).to_tensor().to_f64();
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  const Shape s = {3, latent.shape()[1] * 8, latent.shape()[2] * 8, latent.shape()[3] * 8};
  return Tensor::f64(s, std::move(v));
}

std::vector<double> train_vae(Vae& vae, const std::vector<Tensor>& videos, const VaeTrainConfig& cfg,
                              RandomStream& stream, const std::function<void(const VaeStepLog&)>& on_step) {
  if (videos.empty()) throw ConfigError("train_vae: empty dataset");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train_vae: steps must be >= 0 and batch >= 1");
  if (cfg.pca_init) vae.pca_init(videos);
  AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    // Cosine decay to 10% of the base rate.
    const double progress = cfg.steps > 1 ? static_cast<double>(step - 1) / (cfg.steps - 1) : 0.0;
    const double lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(progress * 3.14159265358979323846)));
    opt.set_lr(lr);
    vae.params().zero_grad();
    double total = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Tensor& v = videos[stream.below(videos.size())];
      Var x = Var::constant(v);
      Var recon = vae.decode_raw(vae.encode(x));
      Var loss = ad::scale(ad::sum_sq_diff(recon, x), 1.0 / (static_cast<double>(x.numel()) * cfg.batch));
      ad::backward(loss);
      total += loss.item();
    }
    opt.step(vae.params());
    losses.push_back(total);
    if (on_step) on_step({step, total, lr});
  }
  return losses;
}

Tensor rgb_to_unit(const Tensor& rgb) {
  auto v = rgb.to_f64();
  for (auto& x : v) x /= 255.0;
  return Tensor::f64(rgb.shape(), std::move(v));
}

Tensor unit_to_rgb(const Tensor& video) {
  auto v = video.to_f64();
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0) * 255.0;
  return Tensor::f64(video.shape(), std::move(v)).as(DType::kUInt8);
}

Tensor colorize_depth(const Tensor& depth) {
  require(depth.shape().size() == 3, "colorize_depth expects [T,H,W]");
  const auto z = depth.to_f64();
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (double d : z) {
    require(d > 0.0, "colorize_depth: depths must be positive");
    if (d >= kDepthSentinel) continue;
    const double disp = 1.0 / d;
    if (!any) lo = hi = disp;
    lo = std::min(lo, disp);
    hi = std::max(hi, disp);
    any = true;
  }
  if (!any) throw NumericError("colorize_depth: clip has no foreground pixels");
  const std::size_t n = z.size();
  std::vector<double> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    if (z[i] < kDepthSentinel) d = hi > lo ? (1.0 / z[i] - lo) / (hi - lo) : 1.0;
    out[i] = d;
    out[n + i] = 4.0 * d * (1.0 - d);
    out[2 * n + i] = 1.0 - d;
  }
  Shape s = depth.shape();
  s.insert(s.begin(), 3);
  return Tensor::f64(s, std::move(out));
}

ControlFeatures encode_controls(const Tensor& edges, const Tensor& depth, const Vae& vae) {
  require(edges.shape() == depth.shape() && edges.shape().size() == 3, "encode_controls: sketch/depth shape mismatch");
  auto e = edges.to_f64();
  const std::size_t n = e.size();
  std::vector<double> sketch(3 * n);
  for (int c = 0; c < 3; ++c) std::copy(e.begin(), e.end(), sketch.begin() + static_cast<std::ptrdiff_t>(c * n));
  Shape s = edges.shape();
  s.insert(s.begin(), 3);
  return {vae_encode(vae, Tensor::f64(s, std::move(sketch))), vae_encode(vae, colorize_depth(depth))};
}

// ---------------------------------------------------------------------------

Moe::Moe(ParamStore& ps, const std::string& prefix, const MoeConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  const int c = cfg.channels, inner = cfg.heads * cfg.channels;
  const double g = std::sqrt(2.0);
  es1_ = nn::Conv3d(ps, prefix + ".expert_s.conv1", c, c, 3, 1, 1, rng, nn::Init::kFanIn, g);
  es2_ = nn::Conv3d(ps, prefix + ".expert_s.conv2", c, c, 3, 1, 1, rng, nn::Init::kFanIn, g);
  ed1_ = nn::Conv3d(ps, prefix + ".expert_d.conv1", c, c, 3, 1, 1, rng, nn::Init::kFanIn, g);
  ed2_ = nn::Conv3d(ps, prefix + ".expert_d.conv2", c, c, 3, 1, 1, rng, nn::Init::kFanIn, g);
  for (auto [attn, name] : {std::pair{&s_from_d_, ".xattn_s"}, std::pair{&d_from_s_, ".xattn_d"}}) {
    attn->q = nn::Linear(ps, prefix + name + ".q", c, inner, rng);
    attn->k = nn::Linear(ps, prefix + name + ".k", c, inner, rng, nn::Init::kFanIn, 1.0, false);
    attn->v = nn::Linear(ps, prefix + name + ".v", c, inner, rng);
    attn->o = nn::Linear(ps, prefix + name + ".o", inner, c, rng, nn::Init::kFanIn, 0.5);
  }
  const int gate_in = 3 * c + cfg.tau_dim + 2;
  gate1_ = nn::Conv3d(ps, prefix + ".gate.conv1", gate_in, cfg.gate_hidden, 1, 1, 0, rng, nn::Init::kFanIn, g);
  gate2_ = nn::Conv3d(ps, prefix + ".gate.conv2", cfg.gate_hidden, 1, 1, 1, 0, rng);
}

Var Moe::attend(const CrossAttention& a, const Var& queries, const Var& context) const {
  return a.o(ad::attention(a.q(queries), a.k(context), a.v(context), cfg_.heads));
}

Moe::Output Moe::operator()(const Var& x_tau, const Var& f_s, const Var& f_d, double tau, bool present_s,
                            bool present_d) const {
  if (!present_s && !present_d) throw ContractError("moe_fuse: at least one control modality must be present");
  require(x_tau.shape() == f_s.shape() && x_tau.shape() == f_d.shape(), "moe_fuse: latent extents differ");
  require(x_tau.dim(0) == cfg_.channels, "moe_fuse: channel mismatch");
  const Shape vol = x_tau.shape();
  const std::int64_t tl = vol[1], cells = vol[2] * vol[3];

  const Var fs = present_s ? f_s : Var::zeros(vol);
  const Var fd = present_d ? f_d : Var::zeros(vol);
  Var es = es2_(ad::silu(es1_(fs)));
  Var ed = ed2_(ad::silu(ed1_(fd)));

  // Frame-wise bidirectional cross-attention between the two token sets.
  const Var ts = nn::volume_to_tokens(es), td = nn::volume_to_tokens(ed);
  std::vector<Var> out_s, out_d;
  for (std::int64_t t = 0; t < tl; ++t) {
    const Var s = ad::slice0(ts, t * cells, (t + 1) * cells);
    const Var d = ad::slice0(td, t * cells, (t + 1) * cells);
    out_s.push_back(ad::add(s, attend(s_from_d_, s, d)));
    out_d.push_back(ad::add(d, attend(d_from_s_, d, s)));
  }
  es = nn::tokens_to_volume(ad::concat0(out_s), vol);
  ed = nn::tokens_to_volume(ad::concat0(out_d), vol);

  // Gate input: x_tau | e_s | e_d | tau features | presence flags.
  const Shape plane = {1, vol[1], vol[2], vol[3]};
  std::vector<Var> gate_in = {x_tau, es, ed};
  for (double f : nn::sinusoid(tau * 1000.0, cfg_.tau_dim)) gate_in.push_back(Var::filled(plane, f));
  gate_in.push_back(Var::filled(plane, present_s ? 1.0 : 0.0));
  gate_in.push_back(Var::filled(plane, present_d ? 1.0 : 0.0));
  Var alpha = ad::sigmoid(gate2_(ad::silu(gate1_(ad::concat0(gate_in)))));
  alpha = ad::reshape(alpha, {alpha.numel()});

  return {ad::convex_mix(alpha, es, ed), alpha, es, ed};
}

}  // namespace wv
