// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--work DIR]
//
// Criteria 7-12 share one dataset, two VAEs and the overfit flow runs, built
// lazily under the work directory. Criterion 7 scores a 96-channel VAE; the
// flow criteria run in the latent space of a 32-channel VAE trained the same way.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "wv/flow.hpp"
#include "wv/geometry.hpp"
#include "wv/metrics.hpp"
#include "wv/pipeline.hpp"
#include "wv/tensor_io.hpp"

using namespace wv;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor noise(std::uint64_t seed, const Shape& s) {
  RandomStream rng(seed, 0);
  return sample_normal(rng, s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_f64(), y = b.to_f64();
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

void randomize(const ParamStore& ps, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  for (auto& [name, p] : ps.entries()) {
    ad::Var v = p;
    for (auto& x : v.mutable_value()) x = 0.3 * rng.normal();
  }
}

Result criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> parts;
  double worst = 0.0;

  {  // MoE fusion, every parameter group including the gate.
    ParamStore ps;
    RandomStream init(13, 0);
    MoeConfig mc;
    mc.channels = 3;
    mc.tau_dim = 4;
    mc.gate_hidden = 4;
    Moe moe(ps, "moe", mc, init);
    randomize(ps, 16);
    const ad::Var x = ad::Var::constant(noise(14, {3, 1, 2, 3}));
    const ad::Var fs_ = ad::Var::constant(noise(15, {3, 1, 2, 3}));
    const ad::Var fd = ad::Var::constant(noise(16, {3, 1, 2, 3}));
    const ad::Var probe = ad::Var::constant(noise(17, {3, 1, 2, 3}));
    auto loss = [&] { return ad::sum(ad::mul(moe(x, fs_, fd, 0.4, true, true).c, probe)); };
    const auto rep = finite_diff_gradcheck(loss, ps.entries(), 1e-4);
    bool gate = false;
    for (const auto& [name, p] : ps.entries()) gate = gate || name.find(".gate.") != std::string::npos;
    if (!gate) return {false, "no gate parameters in the MoE"};
    parts.push_back(fmt("moe %.2e (%lld coords)", rep.max_rel_error, static_cast<long long>(rep.coordinates_checked)));
    worst = std::max(worst, rep.max_rel_error);
  }
  {  // VAE-lite.
    VaeConfig vc;
    vc.channels = 4;
    vc.res_hidden = 3;
    Vae vae(vc, 2);
    RandomStream rng(2, 0);
    const ad::Var x = ad::Var::constant(sample_uniform(rng, {3, 8, 16, 16}));
    auto loss = [&] { return ad::scale(ad::sum_sq_diff(vae.decode_raw(vae.encode(x)), x), 1.0 / x.numel()); };
    const auto rep = finite_diff_gradcheck(loss, vae.params().entries(), 1e-4, 16);
    parts.push_back(fmt("vae %.2e", rep.max_rel_error));
    worst = std::max(worst, rep.max_rel_error);
  }
  {  // Full DiT + flow + wavelet loss, K=2, T=8, 16x16 (latent 1x2x2).
    ModelConfig c;
    c.dim = 16;
    c.blocks = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.views = 2;
    c.latent_channels = 3;
    c.latent_t = 1;
    c.latent_h = 2;
    c.latent_w = 2;
    c.point_hidden = 4;
    c.ray_hidden = 4;
    FlowModel m(c, 22);
    randomize(m.params(), 23);
    RandomStream rng(24, 0);
    std::vector<ViewInput> in;
    for (int v = 0; v < 2; ++v) {
      ViewInput vi;
      vi.x_tau = ad::Var::constant(sample_normal(rng, c.latent_shape()));
      vi.f_s = sample_normal(rng, c.latent_shape());
      vi.f_d = sample_normal(rng, c.latent_shape());
      vi.points = sample_normal(rng, {1, 2, 2, 3});
      vi.rays = sample_normal(rng, {1, 2, 2, 6});
      vi.tau = rng.uniform();
      vi.style = v;
      in.push_back(vi);
    }
    const std::vector<Tensor> x0 = {sample_normal(rng, c.latent_shape()), sample_normal(rng, c.latent_shape())};
    const std::vector<Tensor> x1 = {sample_normal(rng, c.latent_shape()), sample_normal(rng, c.latent_shape())};
    auto loss = [&] {
      const auto v = m.forward(in);
      return ad::add(flow_loss(v, x0, x1, {false, false}), ad::scale(wavelet_loss(v, x0, x1, {false, false}), 0.1));
    };
    const auto rep = finite_diff_gradcheck(loss, m.params().entries(), 1e-4, 12);
    parts.push_back(fmt("dit %.2e (%zu tensors)", rep.max_rel_error, m.params().entries().size()));
    worst = std::max(worst, rep.max_rel_error);
  }
  const double secs = seconds_since(t0);
  std::string detail = "max rel error";
  for (const auto& p : parts) detail += " " + p + ";";
  detail += fmt(" %.0f s", secs);
  return {worst < 1e-4 && secs < 300.0, detail};
}

// ---------------------------------------------------------------------------
// 2. Wavelet identities

Result criterion_2() {
  double inv = 0.0, parseval = 0.0, wav = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = noise(100 + rep, {4, 4, 8, 8}).as(DType::kFloat32);
    const Tensor bands = haar3d(x);
    if (bands.dtype() != DType::kFloat32) return {false, "haar3d changed the dtype"};
    inv = std::max(inv, max_abs_diff(inverse_haar3d(bands), x));
    double ex = 0.0, eb = 0.0;
    for (double v : x.to_f64()) ex += v * v;
    for (double v : bands.to_f64()) eb += v * v;
    parseval = std::max(parseval, std::abs(ex - eb) / ex);
  }
  for (int rep = 0; rep < 100; ++rep) {
    const Shape s = {4, 2, 4, 4};
    const std::vector<Tensor> x0 = {noise(200 + rep, s)}, x1 = {noise(400 + rep, s)};
    const ad::Var v = ad::Var::constant(noise(600 + rep, s));
    const double lw = wavelet_loss({v}, x0, x1, {false}).item();
    const auto a = x0[0].to_f64(), b = x1[0].to_f64();
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double e = a[i] + v.value()[i] - b[i];
      mse += e * e;
    }
    mse /= static_cast<double>(a.size());
    wav = std::max(wav, std::abs(lw - mse) / mse);
  }
  return {inv < 1e-6 && parseval < 1e-5 && wav < 1e-5,
          fmt("inverse max abs %.1e, Parseval rel %.1e, wavelet vs latent MSE rel %.1e (100 tensors)", inv, parseval, wav)};
}

// ---------------------------------------------------------------------------
// 3. Sampler oracle

Result criterion_3() {
  const Shape s = {8, 2, 8, 8};
  const Tensor x0 = noise(41, s), x1 = noise(42, s);
  auto d = x1.to_f64();
  const auto z = x0.to_f64();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= z[i];
  const Tensor vel = Tensor::f64(s, d);
  VelocityFn stub = [&](const std::vector<Tensor>& xs, const std::vector<double>&) {
    return std::vector<Tensor>(xs.size(), vel);
  };
  double worst = 0.0;
  for (int n : {1, 5, 30}) worst = std::max(worst, max_abs_diff(euler_integrate(stub, {x0}, {false}, n)[0], x1));
  const bool default30 = SampleSection{}.steps == 30;
  return {worst < 1e-5 && default30, fmt("max abs error %.1e over N in {1,5,30}; default steps %d", worst, SampleSection{}.steps)};
}

// ---------------------------------------------------------------------------
// 4. Pooling oracle

Result criterion_4() {
  RandomStream rng(8, 0);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int T = 8 * (1 + static_cast<int>(rng.below(3))), H = 8 * (1 + static_cast<int>(rng.below(3))),
              W = 8 * (1 + static_cast<int>(rng.below(3)));
    std::vector<double> d(static_cast<std::size_t>(T * H * W)), p(d.size() * 3);
    const int levels = 2 + static_cast<int>(rng.below(6));  // quantized depth forces ties
    for (auto& x : d) x = 1.0 + static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
    for (auto& x : p) x = rng.normal();
    const auto pooled = pool_pointmap(Tensor::f64({T, H, W, 3}, p), Tensor::f64({T, H, W}, d)).to_f64();
    std::vector<double> ref;
    for (int t = 0; t < T; t += 8)
      for (int bi = 0; bi < H / 8; ++bi)
        for (int bj = 0; bj < W / 8; ++bj) {
          int best = -1;
          double best_d = 0.0;
          for (int y = bi * 8; y < bi * 8 + 8; ++y)
            for (int x = bj * 8; x < bj * 8 + 8; ++x) {
              const double v = d[static_cast<std::size_t>((t * H + y) * W + x)];
              if (best < 0 || v < best_d) {
                best = (t * H + y) * W + x;
                best_d = v;
              }
            }
          for (int c = 0; c < 3; ++c) ref.push_back(p[static_cast<std::size_t>(best * 3 + c)]);
        }
    if (pooled != ref) ++mismatches;
  }
  bool frames_ok = true;
  for (int T : {8, 16, 24, 64}) {
    std::vector<int> want;
    for (int t = 0; t < T; t += 8) want.push_back(t);
    frames_ok = frames_ok && retained_frames(T) == want;
  }
  return {mismatches == 0 && frames_ok,
          fmt("%d/200 clips differ from the brute-force argmin; retained frames %s", mismatches, frames_ok ? "ok" : "wrong")};
}

// ---------------------------------------------------------------------------
// 5. Heterogeneous-path statistics

Result criterion_5() {
  RandomStream rng(31, 0);
  std::map<unsigned, int> subsets;
  std::vector<double> bins(10, 0.0);
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_timestep_path(3, rng, 1.0);
    unsigned mask = 0;
    double tau = -1.0;
    for (int k = 0; k < 3; ++k) {
      if (p.frozen[static_cast<std::size_t>(k)]) {
        mask |= 1U << k;
        if (p.tau[static_cast<std::size_t>(k)] != 1.0) return {false, "frozen view with tau != 1"};
      } else {
        tau = p.tau[static_cast<std::size_t>(k)];
      }
    }
    if (mask == 0 || mask == 7) return {false, "frozen set is empty or full"};
    subsets[mask]++;
    bins[static_cast<std::size_t>(std::min(9.0, tau * 10.0))] += 1.0;
  }
  double worst = 0.0;
  for (const auto& [mask, n] : subsets) worst = std::max(worst, std::abs(n / static_cast<double>(draws) - 1.0 / 6.0));
  const double expected = draws / 10.0;
  double chi = 0.0;
  for (double b : bins) chi += (b - expected) * (b - expected) / expected;
  return {subsets.size() == 6 && worst <= 0.01 && chi < 27.877,
          fmt("%zu subsets, max |freq - 1/6| %.4f, tau chi-square %.2f (critical 27.877)", subsets.size(), worst, chi)};
}

// ---------------------------------------------------------------------------
// 6. Masking exactness

json tiny_run_config() {
  return json::parse(R"({
    "data": {"clips": 2, "K": 3, "T": 8, "H": 32, "W": 32},
    "vae": {"channels": 4, "steps": 2, "batch": 1, "res_hidden": 2},
    "model": {"dim": 8, "blocks": 1, "heads": 2, "mlp_ratio": 2, "point_hidden": 4, "ray_hidden": 4},
    "train": {"stage": "multi", "steps": 4, "warmup": 1},
    "sample": {"steps": 3}
  })");
}

Result criterion_6(const fs::path& work) {
  // (a) Training loss with p_hetero = 1: frozen-view noise and frozen-view targets are invisible to the loss.
  ModelConfig c;
  c.dim = 16;
  c.blocks = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.latent_channels = 3;
  c.latent_t = 1;
  c.latent_h = 2;
  c.latent_w = 2;
  c.point_hidden = 4;
  c.ray_hidden = 4;
  FlowModel m(c, 60);
  randomize(m.params(), 61);
  RandomStream rng(62, 0);
  ClipSample clip;
  for (int v = 0; v < 3; ++v) {
    ViewSample s;
    s.x1 = sample_normal(rng, c.latent_shape());
    s.f_s = sample_normal(rng, c.latent_shape());
    s.f_d = sample_normal(rng, c.latent_shape());
    s.points = sample_normal(rng, {1, 2, 2, 3});
    s.rays = sample_normal(rng, {1, 2, 2, 6});
    s.style = v;
    clip.push_back(s);
  }
  FlowTrainConfig tc;
  tc.p_hetero = 1.0;
  auto loss_of = [&](const StepInputs& in) {
    ad::NoGradGuard g;
    const auto v = m.forward(in.inputs);
    return ad::add(flow_loss(v, in.x0, in.x1, in.path.frozen), ad::scale(wavelet_loss(v, in.x0, in.x1, in.path.frozen), tc.lambda_wav))
        .item();
  };
  int cases = 0, noise_equal = 0, target_equal = 0;
  for (std::int64_t step = 0; step < 20; ++step) {
    const StepInputs s = prepare_step_inputs(clip, tc, 63, step, 0);
    const double base = loss_of(s);
    StepInputs p = s;
    for (std::size_t k = 0; k < 3; ++k)
      if (p.path.frozen[k]) p.x0[k] = noise(700 + static_cast<std::uint64_t>(step * 3) + k, c.latent_shape());
    noise_equal += loss_of(p) == base;
    // Targets of frozen views enter only through the masked loss terms (for fixed velocities).
    std::vector<ad::Var> v;
    {
      ad::NoGradGuard g;
      v = m.forward(s.inputs);
    }
    const double lf = flow_loss(v, s.x0, s.x1, s.path.frozen).item();
    const double lw = wavelet_loss(v, s.x0, s.x1, s.path.frozen).item();
    auto x1p = s.x1;
    for (std::size_t k = 0; k < 3; ++k)
      if (s.path.frozen[k]) x1p[k] = noise(900 + static_cast<std::uint64_t>(step * 3) + k, c.latent_shape());
    target_equal += flow_loss(v, s.x0, x1p, s.path.frozen).item() == lf && wavelet_loss(v, s.x0, x1p, s.path.frozen).item() == lw;
    ++cases;
  }

  // (b) cmd_extend copies the given views byte for byte.
  const fs::path dir = work / "c6";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", tiny_run_config().dump());
  cmd_gen_data(dir / "config.json", dir / "data", 6);
  cmd_train_vae(dir / "config.json", dir / "data", dir / "vae");
  const auto trained = cmd_train(dir / "config.json", dir / "data", dir / "vae" / "vae.wvck", dir / "train", std::nullopt);
  const fs::path ckpt = trained.last_checkpoint;
  cmd_sample(ckpt, dir / "vae" / "vae.wvck", dir / "data", 0, dir / "joint");
  const auto before0 = read_file(dir / "joint" / "rgb_v0.wvt"), before1 = read_file(dir / "joint" / "rgb_v1.wvt");
  cmd_extend(ckpt, dir / "vae" / "vae.wvck", dir / "data", 0, {0, 1}, 2, dir / "ext", dir / "joint");
  cmd_extend(ckpt, dir / "vae" / "vae.wvck", dir / "data", 0, {0, 2}, 1, dir / "ext_data");
  const bool bytes_ok = read_file(dir / "ext" / "rgb_v0.wvt") == before0 && read_file(dir / "ext" / "rgb_v1.wvt") == before1 &&
                        read_file(dir / "joint" / "rgb_v0.wvt") == before0 &&
                        read_file(dir / "ext_data" / "rgb_v0.wvt") == read_file(clip_dir(dir / "data", 0) / "rgb_v0.wvt") &&
                        read_file(dir / "ext_data" / "rgb_v2.wvt") == read_file(clip_dir(dir / "data", 0) / "rgb_v2.wvt");
  return {noise_equal == cases && target_equal == cases && bytes_ok,
          fmt("loss bit-identical under frozen-noise perturbation %d/%d, frozen-target perturbation %d/%d; extend given views %s",
              noise_equal, cases, target_equal, cases, bytes_ok ? "byte-identical" : "CHANGED")};
}

// ---------------------------------------------------------------------------
// 7-12: dataset, VAE and overfit flow runs

constexpr int kTrainClips = 32, kHeldOutClips = 8, kFlowClips = 8;
constexpr std::uint64_t kDataSeed = 2024;
constexpr int kStageSteps[3] = {1000, 1000, 1000};
constexpr int kReconChannels = 96, kFlowChannels = 32;
const char* const kStages[3] = {"single", "multi", "hetero"};

json vae_run_config(int channels = kReconChannels) {
  json j;
  j["data"] = {{"clips", kTrainClips}, {"K", 3}, {"T", 16}, {"H", 64}, {"W", 64}};
  j["vae"] = {{"channels", channels}, {"lr", 1e-4}, {"steps", 200}, {"batch", 2}, {"seed", 7}};
  return j;
}

json flow_run_config(bool pointcloud, const std::string& stage, int steps) {
  json j = vae_run_config(kFlowChannels);
  j["data"]["clips"] = kFlowClips;
  j["model"] = {{"dim", 64}, {"blocks", 4}, {"heads", 4}, {"use_pointcloud", pointcloud}};
  j["train"] = {{"stage", stage}, {"steps", steps}, {"lr", 1e-3}, {"batch", 1}, {"warmup", 50}, {"seed", 11}};
  j["sample"] = {{"steps", 30}, {"seed", 5}};
  return j;
}

struct FlowRun {
  fs::path checkpoint;
  fs::path samples;  // clip_<i>/rgb_v<k>.wvt for the flow clips
  double seconds = 0.0;
};

class Workspace {
 public:
  explicit Workspace(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  fs::path data() {
    if (!data_ready_) {
      const fs::path cfg = root_ / "data_config.json";
      json j = vae_run_config();
      j["data"]["clips"] = kTrainClips + kHeldOutClips;
      write_text(cfg, j.dump(2));
      if (!fs::exists(root_ / "data" / "manifest.json")) cmd_gen_data(cfg, root_ / "data", kDataSeed);
      data_ready_ = true;
    }
    return root_ / "data";
  }

  // Trains a VAE into `dir`; returns seconds.
  double train_vae_into(const fs::path& dir, int channels) {
    const fs::path cfg = dir / "config.json";
    fs::create_directories(dir);
    write_text(cfg, vae_run_config(channels).dump(2));
    const auto t0 = std::chrono::steady_clock::now();
    cmd_train_vae(cfg, data(), dir);
    return seconds_since(t0);
  }

  fs::path vae() {
    if (!vae_seconds_) vae_seconds_ = train_vae_into(root_ / "vae", kReconChannels);
    return root_ / "vae" / "vae.wvck";
  }
  fs::path flow_vae() {
    if (!flow_vae_ready_) {
      train_vae_into(root_ / "flow_vae", kFlowChannels);
      flow_vae_ready_ = true;
    }
    return root_ / "flow_vae" / "vae.wvck";
  }
  double vae_seconds() {
    vae();
    return *vae_seconds_;
  }

  // Three-stage training plus 30-step samples of every flow clip.
  FlowRun run_flow(const fs::path& dir, const fs::path& vae_path, bool pointcloud) {
    FlowRun r;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<fs::path> resume;
    for (int s = 0; s < 3; ++s) {
      const fs::path cfg = dir / (std::string(kStages[s]) + ".json");
      fs::create_directories(dir);
      write_text(cfg, flow_run_config(pointcloud, kStages[s], kStageSteps[s]).dump(2));
      resume = cmd_train(cfg, data(), vae_path, dir / kStages[s], resume).last_checkpoint;
    }
    r.checkpoint = *resume;
    r.samples = dir / "samples";
    for (int i = 0; i < kFlowClips; ++i)
      cmd_sample(r.checkpoint, vae_path, data(), i, r.samples / fmt("clip_%04d", i));
    r.seconds = seconds_since(t0);
    return r;
  }

  const FlowRun& flow(bool pointcloud) {
    auto& slot = pointcloud ? with_pc_ : without_pc_;
    if (!slot) slot = run_flow(root_ / (pointcloud ? "flow_pc" : "flow_nopc"), flow_vae(), pointcloud);
    return *slot;
  }

 private:
  fs::path root_;
  bool data_ready_ = false, flow_vae_ready_ = false;
  std::optional<double> vae_seconds_;
  std::optional<FlowRun> with_pc_, without_pc_;
};

Result criterion_7(Workspace& ws) {
  const fs::path vae_path = ws.vae();
  const Vae vae = load_vae(vae_path);
  std::vector<double> held;
  for (int i = kTrainClips; i < kTrainClips + kHeldOutClips; ++i)
    for (const auto& v : load_clip(clip_dir(ws.data(), i)).views)
      held.push_back(psnr(unit_to_rgb(vae_decode(vae, vae_encode(vae, rgb_to_unit(v.rgb)))), v.rgb));
  const int steps = vae_run_config()["vae"]["steps"].get<int>();
  const double p = mean(held);
  const double secs = ws.vae_seconds();
  return {p >= 30.0 && steps <= 2000 && secs < 1800.0,
          fmt("held-out PSNR %.2f dB on %zu videos (%d clips) after %d AdamW steps, C_lat 96, %.0f s", p, held.size(),
              kHeldOutClips, steps, secs)};
}

struct SampleScores {
  double psnr = 0.0, edge_f1_sketch = 0.0, xvc = 0.0;
};

SampleScores score_samples(const fs::path& samples, const fs::path& data) {
  const json r = cmd_eval(samples, data, {"psnr", "edge_f1", "xvc"}, samples / "report.json");
  return {r["aggregate"]["psnr_db"].get<double>(), r["aggregate"]["edge_f1_sketch"].get<double>(),
          r["aggregate"]["xvc"].is_null() ? 1e9 : r["aggregate"]["xvc"].get<double>()};
}

Result criterion_8(Workspace& ws) {
  const FlowRun& run = ws.flow(true);
  const SampleScores s = score_samples(run.samples, ws.data());
  return {s.psnr >= 20.0 && s.edge_f1_sketch >= 0.6,
          fmt("30-step samples on %d clips: PSNR %.2f dB vs styled oracle, Edge-F1 %.3f vs conditioning sketches "
              "(%d+%d+%d steps, %.0f s)",
              kFlowClips, s.psnr, s.edge_f1_sketch, kStageSteps[0], kStageSteps[1], kStageSteps[2], run.seconds)};
}

Result criterion_9(Workspace& ws) {
  const double with_pc = score_samples(ws.flow(true).samples, ws.data()).xvc;
  const double without_pc = score_samples(ws.flow(false).samples, ws.data()).xvc;
  std::vector<double> matched, mismatched;
  for (int i = 0; i < kFlowClips; ++i) {
    const ClipBundle a = load_clip(clip_dir(ws.data(), i)), b = load_clip(clip_dir(ws.data(), (i + 1) % kFlowClips));
    std::vector<Tensor> va, vb, da;
    for (int k = 0; k < a.num_views(); ++k) {
      va.push_back(rgb_to_unit(a.views[static_cast<std::size_t>(k)].rgb));
      vb.push_back(rgb_to_unit(b.views[static_cast<std::size_t>(k)].rgb));
      da.push_back(a.views[static_cast<std::size_t>(k)].depth);
    }
    matched.push_back(xvc(va, da, a.cameras));
    mismatched.push_back(xvc(vb, da, a.cameras));
  }
  const double m = mean(matched), mm = mean(mismatched);
  return {with_pc < without_pc && m <= 0.01 && mm >= 5.0 * m,
          fmt("xvc with point cloud %.4f, without %.4f; oracle %.4f, mismatched clips %.4f (%.1fx)", with_pc, without_pc, m, mm,
              mm / m)};
}

// Mean xvc between the target view and each given view.
double xvc_against_given(const fs::path& dir, const ClipBundle& clip, const std::vector<int>& given, int target) {
  const Tensor t = rgb_to_unit(read_tensor(dir / fmt("rgb_v%d.wvt", target)));
  std::vector<double> out;
  for (int g : given) {
    const Tensor gv = rgb_to_unit(read_tensor(dir / fmt("rgb_v%d.wvt", g)));
    const auto& cg = clip.views[static_cast<std::size_t>(g)];
    const auto& ct = clip.views[static_cast<std::size_t>(target)];
    try {
      out.push_back(xvc({gv, t}, {cg.depth, ct.depth},
                        {clip.cameras[static_cast<std::size_t>(g)], clip.cameras[static_cast<std::size_t>(target)]}));
    } catch (const NumericError&) {
      // No co-visible pixels between this pair.
    }
  }
  return mean(out);
}

Result criterion_10(Workspace& ws) {
  const FlowRun& run = ws.flow(true);
  const fs::path dir = ws.root() / "extend";
  std::vector<double> joint, extended;
  for (int i = 0; i < kFlowClips; ++i) {
    const fs::path given_from = run.samples / fmt("clip_%04d", i);
    const fs::path out = dir / fmt("clip_%04d", i);
    cmd_extend(run.checkpoint, ws.flow_vae(), ws.data(), i, {0, 1}, 2, out, given_from);
    const ClipBundle clip = load_clip(clip_dir(ws.data(), i));
    joint.push_back(xvc_against_given(given_from, clip, {0, 1}, 2));
    extended.push_back(xvc_against_given(out, clip, {0, 1}, 2));
  }
  const double j = mean(joint), e = mean(extended);
  return {e <= 1.5 * j, fmt("xvc of view 3 against generated views 1-2: extended %.4f, joint %.4f (ratio %.2f, limit 1.5)", e, j,
                             e / j)};
}

Result criterion_11(Workspace& ws) {
  const FlowRun& run = ws.flow(true);
  const SampleScores both = score_samples(run.samples, ws.data());
  SampleScores mode[2];
  const Modality mods[2] = {Modality::kSketch, Modality::kDepth};
  const char* names[2] = {"sketch", "depth"};
  bool finite = true;
  for (int m = 0; m < 2; ++m) {
    const fs::path dir = ws.root() / (std::string("modality_") + names[m]);
    SampleOptions opt;
    opt.modality = mods[m];
    for (int i = 0; i < kFlowClips; ++i) {
      cmd_sample(run.checkpoint, ws.flow_vae(), ws.data(), i, dir / fmt("clip_%04d", i), opt);
      for (int k = 0; k < 3; ++k)
        for (double x : read_tensor(dir / fmt("clip_%04d", i) / fmt("latent_v%d.wvt", k)).to_f64()) finite = finite && std::isfinite(x);
    }
    mode[m] = score_samples(dir, ws.data());
  }
  const double gap = std::abs(mode[0].edge_f1_sketch - both.edge_f1_sketch);
  return {finite && gap <= 0.1,
          fmt("Edge-F1 vs sketches: both %.3f, sketch-only %.3f (gap %.3f), depth-only %.3f; depth-only PSNR %.2f dB; outputs %s",
              both.edge_f1_sketch, mode[0].edge_f1_sketch, gap, mode[1].edge_f1_sketch, mode[1].psnr,
              finite ? "finite" : "NON-FINITE")};
}

std::map<std::string, std::string> hashes_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".wvck" || ext == ".wvt") out[fs::relative(e.path(), dir).string()] = file_sha256(e.path());
  }
  return out;
}

Result criterion_12(Workspace& ws) {
  const fs::path rep = ws.root() / "repeat";
  fs::remove_all(rep);
  ws.vae();
  ws.train_vae_into(rep / "vae", kReconChannels);
  ws.train_vae_into(rep / "flow_vae", kFlowChannels);
  const FlowRun& first = ws.flow(true);
  const bool vae_same = hashes_under(ws.root() / "vae") == hashes_under(rep / "vae") &&
                        hashes_under(ws.root() / "flow_vae") == hashes_under(rep / "flow_vae");
  const FlowRun second = ws.run_flow(rep / "flow_pc", rep / "flow_vae" / "vae.wvck", true);
  const auto flow_a = hashes_under(first.checkpoint.parent_path().parent_path());
  const auto flow_b = hashes_under(second.checkpoint.parent_path().parent_path());
  std::size_t differ = 0;
  for (const auto& [k, h] : flow_a) {
    auto it = flow_b.find(k);
    differ += it == flow_b.end() || it->second != h;
  }
  const bool ok = vae_same && flow_a.size() == flow_b.size() && differ == 0 && !flow_a.empty();
  return {ok, fmt("VAE checkpoints %s; %zu flow checkpoints and samples compared, %zu differ", vae_same ? "identical" : "DIFFER",
                  flow_a.size(), differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string criteria = "1,2,3,4,5,6,7,8,9,10,11,12";
  std::string work = (fs::temp_directory_path() / "wv_acceptance").string();
  app.add_option("--criteria", criteria, "Comma-separated criterion numbers");
  app.add_option("--work", work, "Scratch directory for datasets, checkpoints and samples");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(criteria);
  for (std::string item; std::getline(ss, item, ',');) selected.insert(std::stoi(item));
  fs::create_directories(work);
  Workspace ws(work);

  const std::map<int, std::pair<const char*, std::function<Result()>>> all = {
      {1, {"gradient suite", [] { return criterion_1(); }}},
      {2, {"wavelet identities", [] { return criterion_2(); }}},
      {3, {"sampler oracle", [] { return criterion_3(); }}},
      {4, {"pooling oracle", [] { return criterion_4(); }}},
      {5, {"heterogeneous-path statistics", [] { return criterion_5(); }}},
      {6, {"masking exactness", [&] { return criterion_6(work); }}},
      {7, {"VAE-lite training", [&] { return criterion_7(ws); }}},
      {8, {"flow overfit", [&] { return criterion_8(ws); }}},
      {9, {"cross-view consistency ablation", [&] { return criterion_9(ws); }}},
      {10, {"autoregressive extension", [&] { return criterion_10(ws); }}},
      {11, {"modality robustness", [&] { return criterion_11(ws); }}},
      {12, {"determinism", [&] { return criterion_12(ws); }}},
  };
  int failed = 0;
  for (const auto& [n, entry] : all) {
    if (!selected.count(n)) continue;
    Result r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r = entry.second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << "CRITERION " << n << " [" << entry.first << "]: " << (r.pass ? "PASS" : "FAIL") << " - " << r.detail
              << fmt(" [%.0f s]", seconds_since(t0)) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
