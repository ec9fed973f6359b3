#pragma once

#include <array>
#include <optional>
#include <vector>

#include "wv/rng.hpp"
#include "wv/tensor.hpp"

namespace wv {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);
Vec3 matvec(const Mat3& m, const Vec3& v);
/// m^T v
Vec3 matTvec(const Mat3& m, const Vec3& v);
Mat3 matmul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
Mat3 identity3();
/// Rotation by `angle` radians about unit `axis` (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  void validate() const;
};

/// World -> camera: x_cam = R x_world + t. Camera frame: x right, y down, z forward.
struct Pose {
  Mat3 rotation = identity3();
  Vec3 translation = {0, 0, 0};
  Vec3 center() const;
  void validate() const;
};

/// Pose of a camera at `eye` looking at `target`, with `up` pointing up in the image.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

struct Projection {
  double u, v, z;
};

/// Pinhole projection; std::nullopt when the point is not in front of the camera.
std::optional<Projection> project(const Vec3& world, const Intrinsics& k, const Pose& pose);
/// Inverse of project for a camera-frame depth z > 0.
Vec3 unproject(double u, double v, double depth, const Intrinsics& k, const Pose& pose);

/// Temporal indices kept at latent resolution: 0, 8, ..., T-8.
std::vector<int> retained_frames(int frames);

/// Plücker rays (d, o x d) at latent-cell centers for one view.
/// `poses` holds one pose per full-resolution frame. Returns f64 [T/8, H/8, W/8, 6].
Tensor make_ray_grid(const Intrinsics& k, const std::vector<Pose>& poses, int frames);

/// Depth-aware pooling: per retained frame and 8x8 patch, the point of the pixel
/// with smallest depth (row-major first on ties).
/// points [T,H,W,3], depth [T,H,W] -> f64 [T/8, H/8, W/8, 3]
Tensor pool_pointmap(const Tensor& points, const Tensor& depth);
/// Same for depth: the minimum depth of each patch, f64 [T/8, H/8, W/8].
Tensor pool_depth(const Tensor& depth);

struct Similarity {
  double scale = 1.0;  // x' = scale * R (x - centroid)
  Mat3 rotation = identity3();
  Vec3 centroid = {0, 0, 0};
};

struct PooledPoints {
  std::vector<Tensor> views;  // f64 [Tl, Hl, Wl, 3] each
  Similarity transform;
};

/// Centroid / mean-distance normalization computed jointly over every point of
/// every view whose `mask` entry is nonzero (all points when `masks` is empty).
/// The same transform is applied to all points.
PooledPoints normalize_points(const std::vector<Tensor>& views, const std::vector<std::vector<std::uint8_t>>& masks = {});

struct GaugeConfig {
  double scale_min = 0.5, scale_max = 2.0;
  double translate = 1.0;          // uniform in [-translate, translate]^3
  double max_rotation_deg = 30.0;  // rotation angle uniform in [0, max]
};

/// Applies one random similarity (rotation, scale, translation) jointly to all views.
std::vector<Tensor> random_gauge(const std::vector<Tensor>& views, RandomStream& stream, const GaugeConfig& cfg = {});

}  // namespace wv
