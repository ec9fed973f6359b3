#include "wv/geometry.hpp"

#include <cmath>
#include <numbers>

namespace wv {

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  require(n > 0.0, "normalized: zero vector");
  return (1.0 / n) * a;
}

Vec3 matvec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Vec3 matTvec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[3] * v[1] + m[6] * v[2], m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
          m[2] * v[0] + m[5] * v[1] + m[8] * v[2]};
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

Mat3 transpose(const Mat3& m) { return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}; }

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = normalized(axis);
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  const double x = a[0], y = a[1], z = a[2];
  return {c + x * x * C,     x * y * C - z * s, x * z * C + y * s,  //
          y * x * C + z * s, c + y * y * C,     y * z * C - x * s,  //
          z * x * C - y * s, z * y * C + x * s, c + z * z * C};
}

void Intrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw ContractError("intrinsics: focal lengths must be positive");
  if (!(cx > 0 && cx < width && cy > 0 && cy < height))
    throw ContractError("intrinsics: principal point outside the image");
}

Vec3 Pose::center() const { return -1.0 * matTvec(rotation, translation); }

void Pose::validate() const {
  const Mat3 rrt = matmul(rotation, transpose(rotation));
  const Mat3 id = identity3();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rrt[i] - id[i]) > 1e-6) throw ContractError("pose: rotation is not orthonormal");
  const Mat3& r = rotation;
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::abs(det - 1.0) > 1e-6) throw ContractError("pose: rotation determinant is not +1");
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = normalized(target - eye);
  const Vec3 right = normalized(cross(f, up));
  const Vec3 down = cross(f, right);
  Pose p;
  p.rotation = {right[0], right[1], right[2], down[0], down[1], down[2], f[0], f[1], f[2]};
  p.translation = -1.0 * matvec(p.rotation, eye);
  return p;
}

std::optional<Projection> project(const Vec3& world, const Intrinsics& k, const Pose& pose) {
  const Vec3 c = matvec(pose.rotation, world) + pose.translation;
  if (!(c[2] > 0.0)) return std::nullopt;
  return Projection{k.fx * c[0] / c[2] + k.cx, k.fy * c[1] / c[2] + k.cy, c[2]};
}

Vec3 unproject(double u, double v, double depth, const Intrinsics& k, const Pose& pose) {
  if (!(depth > 0.0)) throw ContractError("unproject: depth must be positive");
  const Vec3 c = {(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth};
  return matTvec(pose.rotation, c - pose.translation);
}

std::vector<int> retained_frames(int frames) {
  require(frames > 0 && frames % 8 == 0, "frame count must be a positive multiple of 8");
  std::vector<int> out;
  for (int t = 0; t < frames; t += 8) out.push_back(t);
  return out;
}

Tensor make_ray_grid(const Intrinsics& k, const std::vector<Pose>& poses, int frames) {
  require(static_cast<int>(poses.size()) == frames, "make_ray_grid: one pose per frame expected");
  require(k.width % 8 == 0 && k.height % 8 == 0, "make_ray_grid: image extents must be multiples of 8");
  const auto kept = retained_frames(frames);
  const int tl = static_cast<int>(kept.size()), hl = k.height / 8, wl = k.width / 8;
  std::vector<double> out(static_cast<std::size_t>(tl) * hl * wl * 6);
  std::size_t o = 0;
  for (int f : kept) {
    const Pose& pose = poses[static_cast<std::size_t>(f)];
    const Vec3 origin = pose.center();
    for (int i = 0; i < hl; ++i)
      for (int j = 0; j < wl; ++j) {
        const double u = 8.0 * j + 3.5, v = 8.0 * i + 3.5;
        const Vec3 dc = {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
        const Vec3 d = normalized(matTvec(pose.rotation, dc));
        const Vec3 m = cross(origin, d);
        for (int c = 0; c < 3; ++c) out[o + c] = d[c];
        for (int c = 0; c < 3; ++c) out[o + 3 + c] = m[c];
        o += 6;
      }
  }
  return Tensor::f64({tl, hl, wl, 6}, std::move(out));
}

namespace {

struct PatchArgmin {
  std::int64_t t, h, w;  // full-resolution extents
};

PatchArgmin check_pool_shapes(const Tensor& depth) {
  const auto& s = depth.shape();
  require(s.size() == 3, "pool: depth must be [T,H,W]");
  require(s[0] % 8 == 0 && s[1] % 8 == 0 && s[2] % 8 == 0, "pool: extents must be multiples of 8, got " + shape_str(s));
  return {s[0], s[1], s[2]};
}

// Index of the first pixel with minimum depth in patch (frame f, block bi, bj).
std::int64_t patch_argmin(const std::vector<double>& d, const PatchArgmin& g, std::int64_t f, std::int64_t bi,
                          std::int64_t bj) {
  std::int64_t best = -1;
  double best_z = 0.0;
  for (std::int64_t y = 8 * bi; y < 8 * bi + 8; ++y)
    for (std::int64_t x = 8 * bj; x < 8 * bj + 8; ++x) {
      const std::int64_t idx = (f * g.h + y) * g.w + x;
      if (best < 0 || d[static_cast<std::size_t>(idx)] < best_z) {
        best = idx;
        best_z = d[static_cast<std::size_t>(idx)];
      }
    }
  return best;
}

}  // namespace

Tensor pool_pointmap(const Tensor& points, const Tensor& depth) {
  const auto g = check_pool_shapes(depth);
  require(points.shape() == Shape({g.t, g.h, g.w, 3}), "pool_pointmap: points must be [T,H,W,3] matching depth");
  const auto d = depth.to_f64();
  const auto p = points.to_f64();
  const std::int64_t tl = g.t / 8, hl = g.h / 8, wl = g.w / 8;
  std::vector<double> out(static_cast<std::size_t>(tl * hl * wl * 3));
  std::size_t o = 0;
  for (std::int64_t ti = 0; ti < tl; ++ti)
    for (std::int64_t bi = 0; bi < hl; ++bi)
      for (std::int64_t bj = 0; bj < wl; ++bj) {
        const std::int64_t idx = patch_argmin(d, g, ti * 8, bi, bj);
        for (int c = 0; c < 3; ++c) out[o++] = p[static_cast<std::size_t>(idx * 3 + c)];
      }
  return Tensor::f64({tl, hl, wl, 3}, std::move(out));
}

Tensor pool_depth(const Tensor& depth) {
  const auto g = check_pool_shapes(depth);
  const auto d = depth.to_f64();
  const std::int64_t tl = g.t / 8, hl = g.h / 8, wl = g.w / 8;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(tl * hl * wl));
  for (std::int64_t ti = 0; ti < tl; ++ti)
    for (std::int64_t bi = 0; bi < hl; ++bi)
      for (std::int64_t bj = 0; bj < wl; ++bj) out.push_back(d[static_cast<std::size_t>(patch_argmin(d, g, ti * 8, bi, bj))]);
  return Tensor::f64({tl, hl, wl}, std::move(out));
}

PooledPoints normalize_points(const std::vector<Tensor>& views, const std::vector<std::vector<std::uint8_t>>& masks) {
  require(!views.empty(), "normalize_points: no views");
  require(masks.empty() || masks.size() == views.size(), "normalize_points: one mask per view");
  std::vector<std::vector<double>> pts;
  for (const auto& v : views) {
    require(v.shape().size() >= 1 && v.shape().back() == 3 && v.numel() > 0, "normalize_points: [..., 3] expected");
    pts.push_back(v.to_f64());
  }
  auto selected = [&](std::size_t view, std::size_t i) { return masks.empty() || masks[view].at(i) != 0; };

  Vec3 centroid = {0, 0, 0};
  std::int64_t count = 0;
  for (std::size_t v = 0; v < pts.size(); ++v)
    for (std::size_t i = 0; i < pts[v].size() / 3; ++i)
      if (selected(v, i)) {
        for (int c = 0; c < 3; ++c) centroid[c] += pts[v][3 * i + c];
        ++count;
      }
  if (count == 0) throw NumericError("normalize_points: no points selected");
  centroid = (1.0 / static_cast<double>(count)) * centroid;

  double mean_dist = 0.0;
  for (std::size_t v = 0; v < pts.size(); ++v)
    for (std::size_t i = 0; i < pts[v].size() / 3; ++i)
      if (selected(v, i)) mean_dist += norm(Vec3{pts[v][3 * i], pts[v][3 * i + 1], pts[v][3 * i + 2]} - centroid);
  mean_dist /= static_cast<double>(count);
  if (!(mean_dist > 1e-12)) throw NumericError("normalize_points: all points coincide (zero scale)");

  PooledPoints out;
  out.transform.scale = 1.0 / mean_dist;
  out.transform.centroid = centroid;
  for (std::size_t v = 0; v < pts.size(); ++v) {
    auto& p = pts[v];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = (p[i] - centroid[i % 3]) * out.transform.scale;
    out.views.push_back(Tensor::f64(views[v].shape(), std::move(p)));
  }
  return out;
}

std::vector<Tensor> random_gauge(const std::vector<Tensor>& views, RandomStream& stream, const GaugeConfig& cfg) {
  require(cfg.scale_min > 0 && cfg.scale_min <= cfg.scale_max, "random_gauge: bad scale range");
  Vec3 axis = {stream.normal(), stream.normal(), stream.normal()};
  if (norm(axis) < 1e-12) axis = {0, 0, 1};
  const double angle = stream.uniform() * cfg.max_rotation_deg * std::numbers::pi / 180.0;
  const Mat3 r = axis_angle(axis, angle);
  const double s = stream.uniform(cfg.scale_min, cfg.scale_max);
  const Vec3 t = {stream.uniform(-cfg.translate, cfg.translate), stream.uniform(-cfg.translate, cfg.translate),
                  stream.uniform(-cfg.translate, cfg.translate)};
  std::vector<Tensor> out;
  for (const auto& v : views) {
    auto p = v.to_f64();
    for (std::size_t i = 0; i + 2 < p.size(); i += 3) {
      const Vec3 q = s * matvec(r, Vec3{p[i], p[i + 1], p[i + 2]}) + t;
      p[i] = q[0];
      p[i + 1] = q[1];
      p[i + 2] = q[2];
    }
    out.push_back(Tensor::f64(v.shape(), std::move(p)));
  }
  return out;
}

}  // namespace wv
