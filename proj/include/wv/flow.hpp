#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "wv/backbone.hpp"
#include "wv/geometry.hpp"

namespace wv {

/// Single-level orthonormal Haar of x [C,T,H,W] (even extents) -> [8,C,T/2,H/2,W/2].
/// The result keeps the input dtype (float32 or float64).
Tensor haar3d(const Tensor& x);
/// Inverse of haar3d.
Tensor inverse_haar3d(const Tensor& bands);

/// x_tau = (1 - tau) x0 + tau x1
Tensor interpolate(const Tensor& x0, const Tensor& x1, double tau);

/// Mean over unfrozen views of the per-element squared error between v and x1 - x0.
ad::Var flow_loss(const std::vector<ad::Var>& v, const std::vector<Tensor>& x0, const std::vector<Tensor>& x1,
                  const std::vector<bool>& frozen);

/// Same masking as flow_loss, on single-level Haar coefficients of x0 + v against x1.
/// Odd extents are replicate-padded first.
ad::Var wavelet_loss(const std::vector<ad::Var>& v, const std::vector<Tensor>& x0, const std::vector<Tensor>& x1,
                     const std::vector<bool>& frozen);

struct TimestepPath {
  std::vector<double> tau;
  std::vector<bool> frozen;
  bool heterogeneous = false;
};

/// With probability p_hetero (ignored for K = 1) freezes a uniformly drawn
/// nonempty proper subset of views at tau = 1; the remaining views share one
/// tau ~ U[0,1). The draw sequence does not depend on p_hetero unless the
/// heterogeneous branch is taken.
TimestepPath sample_timestep_path(int views, RandomStream& stream, double p_hetero);

/// One training clip after latent encoding.
struct ViewSample {
  Tensor x1;        // clean latent [C, Tl, Hl, Wl]
  Tensor f_s, f_d;  // encoded controls
  Tensor points;    // normalized pooled points [Tl, Hl, Wl, 3]
  Tensor rays;      // [Tl, Hl, Wl, 6]
  int style = 0;
};
using ClipSample = std::vector<ViewSample>;

struct FlowTrainConfig {
  double lambda_wav = 0.1;
  double p_hetero = 0.5;
  double drop_depth_p = 0.1;
  double drop_sketch_p = 0.1;
  bool random_gauge = true;
  GaugeConfig gauge;
};

struct LossReport {
  double flow = 0.0;
  double wavelet = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  int heterogeneous = 0;  // samples in the batch that took the heterogeneous branch
};

/// Randomness for (seed, step, sample) is derived statelessly, so resumed runs replay identically.
struct StepInputs {
  std::vector<ViewInput> inputs;
  std::vector<Tensor> x0, x1;
  TimestepPath path;
};
StepInputs prepare_step_inputs(const ClipSample& clip, const FlowTrainConfig& cfg, std::uint64_t seed,
                               std::int64_t step, int sample);

/// Forward, loss, backward and one optimizer update over `batch`.
LossReport train_step(FlowModel& model, AdamW& opt, const std::vector<const ClipSample*>& batch,
                      const FlowTrainConfig& cfg, std::uint64_t seed, std::int64_t step);

/// Velocity callback: current states and per-view tau -> velocities.
using VelocityFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&, const std::vector<double>&)>;

/// Forward Euler on tau_i = i / steps. Frozen views keep their state and are
/// reported to the callback at tau = 1.
std::vector<Tensor> euler_integrate(const VelocityFn& velocity, std::vector<Tensor> x, const std::vector<bool>& frozen,
                                    int steps);

struct SampleView {
  Tensor f_s, f_d;
  bool present_s = true, present_d = true;
  Tensor points, rays;
  int style = 0;
  std::optional<Tensor> clean;  // set for views held fixed (frozen) during sampling
};

/// Initial noise of view `view` for a sampling seed.
Tensor sampling_noise(const Shape& shape, std::uint64_t seed, int view);

/// Generates latents for every view not given as clean.
std::vector<Tensor> euler_sample(const FlowModel& model, const std::vector<SampleView>& views, int steps,
                                 std::uint64_t seed);

/// Generates view `target` conditioned on the views carrying clean latents.
Tensor autoregressive_extend(const FlowModel& model, const std::vector<SampleView>& views, int target, int steps,
                             std::uint64_t seed);

}  // namespace wv
