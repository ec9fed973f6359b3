#pragma once

#include <vector>

#include "wv/geometry.hpp"
#include "wv/scene.hpp"
#include "wv/tensor.hpp"

namespace wv {

/// Returned by psnr when the two videos are identical.
inline constexpr double kPsnrIdentical = 100.0;

/// PSNR in dB of videos with values in [0,1] (u8 inputs are divided by 255).
double psnr(const Tensor& pred, const Tensor& target);

/// F1 between binary edge maps [T,H,W] with per-frame Chebyshev tolerance `tol`.
/// Both empty -> 1, exactly one empty -> 0.
double edge_f1(const Tensor& pred, const Tensor& target, int tol = 1);

/// Sobel magnitude (normalized so a unit step reads 1) of each colour channel,
/// maximum over channels, thresholded. video [3,T,H,W] in [0,1] -> u8 [T,H,W].
Tensor sobel_edges(const Tensor& video, double threshold = 0.2);

/// Scale-invariant log RMSE over pixels where `mask` is nonzero (all pixels when empty).
double si_rmse(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask = {});

struct XvcOptions {
  double eps_rel = 0.02;
  /// Minimum cosine between depth-derived surface normals of the source pixel and
  /// every landing tap; -1 disables the test. Rejects samples that straddle a crease.
  double normal_cos = 0.9;
};

/// Cross-view reprojection consistency. Foreground pixels of view a are
/// unprojected with a's depth, projected into view b, and compared with b's
/// bilinearly sampled colour when all four depth taps agree within eps_rel and lie on
/// the same surface.
/// RMSE per (ordered pair, frame), averaged. videos [3,T,H,W] in [0,1].
double xvc(const std::vector<Tensor>& videos, const std::vector<Tensor>& depths, const std::vector<CameraTrack>& cameras,
           const XvcOptions& opt = {});

}  // namespace wv
