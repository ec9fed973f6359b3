#include "wv/flow.hpp"

#include <cmath>

#include "wv/kernels.hpp"

namespace wv {

using ad::Var;

namespace {

Tensor with_dtype(const Tensor& like, Shape shape, std::vector<double> v) {
  Tensor t = Tensor::f64(std::move(shape), std::move(v));
  return like.dtype() == DType::kFloat64 ? t : t.as(like.dtype());
}

}  // namespace

Tensor haar3d(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.size() == 4 && s[1] % 2 == 0 && s[2] % 2 == 0 && s[3] % 2 == 0,
          "haar3d expects [C,T,H,W] with even T, H, W, got " + shape_str(s));
  const auto in = x.to_f64();
  std::vector<double> out(in.size());
  kernels::haar3d_forward(static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3]),
                          in.data(), out.data());
  return with_dtype(x, {8, s[0], s[1] / 2, s[2] / 2, s[3] / 2}, std::move(out));
}

Tensor inverse_haar3d(const Tensor& bands) {
  const Shape& s = bands.shape();
  require(s.size() == 5 && s[0] == 8, "inverse_haar3d expects [8,C,T,H,W], got " + shape_str(s));
  const auto in = bands.to_f64();
  std::vector<double> out(in.size());
  kernels::haar3d_inverse(static_cast<int>(s[1]), static_cast<int>(2 * s[2]), static_cast<int>(2 * s[3]),
                          static_cast<int>(2 * s[4]), in.data(), out.data());
  return with_dtype(bands, {s[1], 2 * s[2], 2 * s[3], 2 * s[4]}, std::move(out));
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double tau) {
  require(x0.shape() == x1.shape(), "interpolate: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(x1.shape()));
  auto a = x0.to_f64();
  const auto b = x1.to_f64();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (1.0 - tau) * a[i] + tau * b[i];
  return Tensor::f64(x0.shape(), std::move(a));
}

namespace {

void check_loss_args(const std::vector<Var>& v, const std::vector<Tensor>& x0, const std::vector<Tensor>& x1,
                     const std::vector<bool>& frozen) {
  require(v.size() == x0.size() && v.size() == x1.size() && v.size() == frozen.size(), "loss: view count mismatch");
  bool any = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(v[i].shape() == x0[i].shape() && v[i].shape() == x1[i].shape(), "loss: shape mismatch in view " + std::to_string(i));
    any = any || !frozen[i];
  }
  require(any, "loss: every view is frozen");
}

Var masked_mean(const std::vector<Var>& per_view_sums, const std::vector<std::int64_t>& counts,
                const std::vector<bool>& frozen) {
  std::vector<Var> terms;
  for (std::size_t i = 0; i < per_view_sums.size(); ++i)
    if (!frozen[i]) terms.push_back(ad::scale(per_view_sums[i], 1.0 / static_cast<double>(counts[i])));
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

Tensor sub_tensor(const Tensor& a, const Tensor& b) {
  auto x = a.to_f64();
  const auto y = b.to_f64();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= y[i];
  return Tensor::f64(a.shape(), std::move(x));
}

}  // namespace

Var flow_loss(const std::vector<Var>& v, const std::vector<Tensor>& x0, const std::vector<Tensor>& x1,
              const std::vector<bool>& frozen) {
  check_loss_args(v, x0, x1, frozen);
  std::vector<Var> sums(v.size());
  std::vector<std::int64_t> counts(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (frozen[i]) continue;  // never touches frozen targets
    sums[i] = ad::sum_sq_diff(v[i], Var::constant(sub_tensor(x1[i], x0[i])));
    counts[i] = v[i].numel();
  }
  return masked_mean(sums, counts, frozen);
}

Var wavelet_loss(const std::vector<Var>& v, const std::vector<Tensor>& x0, const std::vector<Tensor>& x1,
                 const std::vector<bool>& frozen) {
  check_loss_args(v, x0, x1, frozen);
  std::vector<Var> sums(v.size());
  std::vector<std::int64_t> counts(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (frozen[i]) continue;
    const Var pred = ad::haar3d(ad::pad_replicate_even(ad::add(Var::constant(x0[i]), v[i])));
    Var target;
    {
      ad::NoGradGuard guard;
      target = ad::haar3d(ad::pad_replicate_even(Var::constant(x1[i])));
    }
    sums[i] = ad::sum_sq_diff(pred, Var::constant(target.to_tensor()));
    counts[i] = pred.numel();
  }
  return masked_mean(sums, counts, frozen);
}

TimestepPath sample_timestep_path(int views, RandomStream& stream, double p_hetero) {
  if (views < 1) throw ContractError("sample_timestep_path: views must be >= 1");
  if (!(p_hetero >= 0.0 && p_hetero <= 1.0)) throw ConfigError("p_hetero must lie in [0,1]");
  TimestepPath path;
  path.frozen.assign(static_cast<std::size_t>(views), false);
  const double coin = stream.uniform();
  if (views > 1 && coin < p_hetero) {
    // Nonempty proper subsets are the bit masks 1 .. 2^K - 2.
    const std::uint64_t mask = 1 + stream.below((std::uint64_t{1} << views) - 2);
    for (int k = 0; k < views; ++k) path.frozen[static_cast<std::size_t>(k)] = (mask >> k) & 1U;
    path.heterogeneous = true;
  }
  const double tau = stream.uniform();
  for (int k = 0; k < views; ++k) path.tau.push_back(path.frozen[static_cast<std::size_t>(k)] ? 1.0 : tau);
  return path;
}

StepInputs prepare_step_inputs(const ClipSample& clip, const FlowTrainConfig& cfg, std::uint64_t seed,
                               std::int64_t step, int sample) {
  if (clip.empty()) throw ContractError("train_step: clip has no views");
  const int k = static_cast<int>(clip.size());
  const std::uint64_t key = mix64(seed, static_cast<std::uint64_t>(step));
  RandomStream path_rng(key, 4 * static_cast<std::uint64_t>(sample));
  RandomStream drop_rng(key, 4 * static_cast<std::uint64_t>(sample) + 1);
  RandomStream gauge_rng(key, 4 * static_cast<std::uint64_t>(sample) + 2);
  RandomStream noise_rng(key, 4 * static_cast<std::uint64_t>(sample) + 3);

  StepInputs out;
  out.path = sample_timestep_path(k, path_rng, cfg.p_hetero);
  std::vector<Tensor> points;
  for (const auto& v : clip) points.push_back(v.points);
  if (cfg.random_gauge) points = random_gauge(points, gauge_rng, cfg.gauge);

  for (int i = 0; i < k; ++i) {
    const auto& v = clip[static_cast<std::size_t>(i)];
    const bool frozen = out.path.frozen[static_cast<std::size_t>(i)];
    out.x1.push_back(v.x1);
    // Noise is drawn for every view so the stream layout is independent of the frozen set.
    out.x0.push_back(sample_normal(noise_rng, v.x1.shape()));
    const double u = drop_rng.uniform();
    ViewInput in;
    in.tau = out.path.tau[static_cast<std::size_t>(i)];
    in.x_tau = Var::constant(frozen ? v.x1 : interpolate(out.x0.back(), v.x1, in.tau));
    in.f_s = v.f_s;
    in.f_d = v.f_d;
    in.present_d = !(u < cfg.drop_depth_p);
    in.present_s = !(u >= cfg.drop_depth_p && u < cfg.drop_depth_p + cfg.drop_sketch_p);
    in.points = points[static_cast<std::size_t>(i)];
    in.rays = v.rays;
    in.style = v.style;
    out.inputs.push_back(std::move(in));
  }
  return out;
}

namespace {

std::string first_nonfinite(const std::vector<Var>& outputs, const ParamStore& params) {
  for (std::size_t i = 0; i < outputs.size(); ++i)
    for (double x : outputs[i].value())
      if (!std::isfinite(x)) return "velocity[" + std::to_string(i) + "]";
  for (const auto& [name, p] : params.entries())
    for (double x : p.value())
      if (!std::isfinite(x)) return "parameter " + name;
  return "loss";
}

}  // namespace

LossReport train_step(FlowModel& model, AdamW& opt, const std::vector<const ClipSample*>& batch,
                      const FlowTrainConfig& cfg, std::uint64_t seed, std::int64_t step) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  if (cfg.drop_depth_p < 0.0 || cfg.drop_sketch_p < 0.0 || cfg.drop_depth_p + cfg.drop_sketch_p > 1.0)
    throw ConfigError("modality dropout probabilities must be >= 0 and sum to at most 1");
  model.params().zero_grad();
  LossReport report;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const StepInputs s = prepare_step_inputs(*batch[b], cfg, seed, step, static_cast<int>(b));
    const auto v = model.forward(s.inputs);
    const Var lf = flow_loss(v, s.x0, s.x1, s.path.frozen);
    const Var lw = wavelet_loss(v, s.x0, s.x1, s.path.frozen);
    const Var total = ad::add(lf, ad::scale(lw, cfg.lambda_wav));
    if (!std::isfinite(total.item()))
      throw NumericError("non-finite training loss at step " + std::to_string(step) + ": first non-finite tensor is " +
                         first_nonfinite(v, model.params()));
    ad::backward(ad::scale(total, inv_b));
    report.flow += lf.item() * inv_b;
    report.wavelet += lw.item() * inv_b;
    report.total += total.item() * inv_b;
    report.heterogeneous += s.path.heterogeneous ? 1 : 0;
  }
  double gn = 0.0;
  for (const auto& [name, p] : model.params().entries())
    for (double g : p.grad()) gn += g * g;
  report.grad_norm = std::sqrt(gn);
  if (!std::isfinite(report.grad_norm))
    throw NumericError("non-finite gradient at step " + std::to_string(step));
  opt.step(model.params());
  return report;
}

std::vector<Tensor> euler_integrate(const VelocityFn& velocity, std::vector<Tensor> x, const std::vector<bool>& frozen,
                                    int steps) {
  if (steps < 1) throw ConfigError("sampling steps must be >= 1");
  require(x.size() == frozen.size(), "euler_integrate: view count mismatch");
  const double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double tau = static_cast<double>(i) / steps;
    std::vector<double> taus;
    for (bool f : frozen) taus.push_back(f ? 1.0 : tau);
    const auto v = velocity(x, taus);
    require(v.size() == x.size(), "euler_integrate: velocity returned wrong view count");
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (frozen[k]) continue;
      require(v[k].shape() == x[k].shape(), "euler_integrate: velocity shape mismatch");
      auto xs = x[k].to_f64();
      const auto vs = v[k].to_f64();
      for (std::size_t j = 0; j < xs.size(); ++j) xs[j] += h * vs[j];
      x[k] = Tensor::f64(x[k].shape(), std::move(xs));
    }
  }
  return x;
}

Tensor sampling_noise(const Shape& shape, std::uint64_t seed, int view) {
  RandomStream rng(seed, 0x5A3000 + static_cast<std::uint64_t>(view));
  return sample_normal(rng, shape);
}

std::vector<Tensor> euler_sample(const FlowModel& model, const std::vector<SampleView>& views, int steps,
                                 std::uint64_t seed) {
  if (views.empty()) throw ContractError("euler_sample: no views");
  const Shape shape = model.config().latent_shape();
  std::vector<Tensor> x;
  std::vector<bool> frozen;
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& v = views[k];
    frozen.push_back(v.clean.has_value());
    if (v.clean) {
      require(v.clean->shape() == shape, "euler_sample: clean latent must be " + shape_str(shape));
      x.push_back(*v.clean);
    } else {
      x.push_back(sampling_noise(shape, seed, static_cast<int>(k)));
    }
  }
  VelocityFn fn = [&](const std::vector<Tensor>& xs, const std::vector<double>& taus) {
    ad::NoGradGuard guard;
    std::vector<ViewInput> in;
    for (std::size_t k = 0; k < views.size(); ++k) {
      const auto& v = views[k];
      ViewInput vi;
      vi.x_tau = Var::constant(xs[k]);
      vi.f_s = v.f_s;
      vi.f_d = v.f_d;
      vi.present_s = v.present_s;
      vi.present_d = v.present_d;
      vi.points = v.points;
      vi.rays = v.rays;
      vi.tau = taus[k];
      vi.style = v.style;
      in.push_back(std::move(vi));
    }
    std::vector<Tensor> out;
    for (const auto& o : model.forward(in)) out.push_back(o.to_tensor());
    return out;
  };
  return euler_integrate(fn, std::move(x), frozen, steps);
}

Tensor autoregressive_extend(const FlowModel& model, const std::vector<SampleView>& views, int target, int steps,
                             std::uint64_t seed) {
  if (target < 0 || target >= static_cast<int>(views.size())) throw ContractError("extend: target view out of range");
  if (views[static_cast<std::size_t>(target)].clean) throw ContractError("extend: target view is already given");
  int given = 0;
  for (const auto& v : views) given += v.clean ? 1 : 0;
  if (given == 0) throw ContractError("extend: at least one given view is required");
  return euler_sample(model, views, steps, seed)[static_cast<std::size_t>(target)];
}

}  // namespace wv
