#include "wv/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace wv {

namespace {

std::vector<double> unit_values(const Tensor& t) {
  auto v = t.to_f64();
  if (t.dtype() == DType::kUInt8)
    for (auto& x : v) x /= 255.0;
  return v;
}

void require_video(const Tensor& t, const char* what) {
  require(t.shape().size() == 4 && t.shape()[0] == 3, std::string(what) + " must be [3,T,H,W], got " + shape_str(t.shape()));
}

// Per-pixel unit surface normals from oracle depth: one-sided differences toward the
// neighbour with the closer depth; zero where a pixel has no foreground neighbour on an axis.
std::vector<Vec3> depth_normals(const std::vector<double>& depth, std::int64_t t, std::int64_t h, std::int64_t w,
                                const Intrinsics& k, const Pose& pose) {
  const std::int64_t plane = h * w;
  std::vector<Vec3> pts(static_cast<std::size_t>(plane)), out(static_cast<std::size_t>(plane), Vec3{0, 0, 0});
  std::vector<bool> fg(static_cast<std::size_t>(plane));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      const double z = depth[static_cast<std::size_t>(t * plane) + i];
      fg[i] = z < kDepthSentinel;
      if (fg[i]) pts[i] = unproject(static_cast<double>(x), static_cast<double>(y), z, k, pose);
    }
  auto diff = [&](std::int64_t y, std::int64_t x, std::int64_t dy, std::int64_t dx, Vec3& d) {
    const auto i = static_cast<std::size_t>(y * w + x);
    double best = -1.0;
    for (int s : {1, -1}) {
      const std::int64_t yy = y + s * dy, xx = x + s * dx;
      if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
      const auto j = static_cast<std::size_t>(yy * w + xx);
      if (!fg[j]) continue;
      const Vec3 e = static_cast<double>(s) * (pts[j] - pts[i]);
      const double len = norm(e);
      if (best < 0.0 || len < best) {
        best = len;
        d = e;
      }
    }
    return best > 0.0;
  };
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!fg[static_cast<std::size_t>(y * w + x)]) continue;
      Vec3 du{}, dv{};
      if (!diff(y, x, 0, 1, du) || !diff(y, x, 1, 0, dv)) continue;
      const Vec3 n = cross(du, dv);
      if (norm(n) > 0.0) out[static_cast<std::size_t>(y * w + x)] = normalized(n);
    }
  return out;
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "psnr: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const auto a = unit_values(pred), b = unit_values(target);
  require(!a.empty(), "psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return std::min(kPsnrIdentical, 10.0 * std::log10(1.0 / mse));
}

double edge_f1(const Tensor& pred, const Tensor& target, int tol) {
  require(pred.shape() == target.shape() && pred.shape().size() == 3, "edge_f1: maps must share a [T,H,W] shape");
  require(tol >= 0, "edge_f1: tolerance must be >= 0");
  const auto p = pred.to_f64(), g = target.to_f64();
  const std::int64_t tn = pred.shape()[0], h = pred.shape()[1], w = pred.shape()[2];
  // Count pixels of `a` that have a set pixel of `b` within the tolerance window of the same frame.
  auto matched = [&](const std::vector<double>& a, const std::vector<double>& b, std::int64_t& total) {
    std::int64_t hit = 0;
    total = 0;
    for (std::int64_t t = 0; t < tn; ++t)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          if (a[static_cast<std::size_t>((t * h + y) * w + x)] == 0.0) continue;
          ++total;
          bool found = false;
          for (std::int64_t yy = std::max<std::int64_t>(0, y - tol); yy <= std::min(h - 1, y + tol) && !found; ++yy)
            for (std::int64_t xx = std::max<std::int64_t>(0, x - tol); xx <= std::min(w - 1, x + tol); ++xx)
              if (b[static_cast<std::size_t>((t * h + yy) * w + xx)] != 0.0) {
                found = true;
                break;
              }
          hit += found ? 1 : 0;
        }
    return hit;
  };
  std::int64_t np = 0, ng = 0;
  const std::int64_t tp_p = matched(p, g, np);
  const std::int64_t tp_g = matched(g, p, ng);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = static_cast<double>(tp_p) / static_cast<double>(np);
  const double recall = static_cast<double>(tp_g) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Tensor sobel_edges(const Tensor& video, double threshold) {
  require_video(video, "sobel_edges input");
  const auto v = unit_values(video);
  const std::int64_t tn = video.shape()[1], h = video.shape()[2], w = video.shape()[3];
  const std::int64_t plane = h * w, n = tn * plane;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
  auto at = [&](std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) {
    y = std::clamp<std::int64_t>(y, 0, h - 1);
    x = std::clamp<std::int64_t>(x, 0, w - 1);
    return v[static_cast<std::size_t>(c * n + t * plane + y * w + x)];
  };
  for (std::int64_t t = 0; t < tn; ++t)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double best = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double gx = (at(c, t, y - 1, x + 1) + 2 * at(c, t, y, x + 1) + at(c, t, y + 1, x + 1)) -
                            (at(c, t, y - 1, x - 1) + 2 * at(c, t, y, x - 1) + at(c, t, y + 1, x - 1));
          const double gy = (at(c, t, y + 1, x - 1) + 2 * at(c, t, y + 1, x) + at(c, t, y + 1, x + 1)) -
                            (at(c, t, y - 1, x - 1) + 2 * at(c, t, y - 1, x) + at(c, t, y - 1, x + 1));
          best = std::max(best, std::sqrt(gx * gx + gy * gy) / 4.0);
        }
        out[static_cast<std::size_t>(t * plane + y * w + x)] = best > threshold ? 1 : 0;
      }
  return Tensor::u8({tn, h, w}, std::move(out));
}

double si_rmse(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask) {
  require(pred.shape() == target.shape(), "si_rmse: shape mismatch");
  const auto a = pred.to_f64(), b = target.to_f64();
  require(mask.empty() || mask.size() == a.size(), "si_rmse: mask size mismatch");
  double s = 0.0, s2 = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    if (!(a[i] > 0.0) || !(b[i] > 0.0)) throw NumericError("si_rmse: depths must be positive");
    const double d = std::log(a[i]) - std::log(b[i]);
    s += d;
    s2 += d * d;
    ++n;
  }
  if (n == 0) throw NumericError("si_rmse: no valid pixels");
  const double m = s / static_cast<double>(n);
  return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
}

double xvc(const std::vector<Tensor>& videos, const std::vector<Tensor>& depths, const std::vector<CameraTrack>& cameras,
           const XvcOptions& opt) {
  const std::size_t k = videos.size();
  if (k < 2) throw ContractError("xvc needs at least two views");
  require(depths.size() == k && cameras.size() == k, "xvc: view count mismatch");
  for (std::size_t i = 0; i < k; ++i) {
    require_video(videos[i], "xvc video");
    require(videos[i].shape() == videos[0].shape(), "xvc: video shapes differ");
    require(depths[i].shape() == Shape({videos[0].shape()[1], videos[0].shape()[2], videos[0].shape()[3]}),
            "xvc: depth must be [T,H,W] matching the video");
    require(cameras[i].poses.size() == static_cast<std::size_t>(videos[0].shape()[1]), "xvc: one pose per frame required");
  }
  const std::int64_t tn = videos[0].shape()[1], h = videos[0].shape()[2], w = videos[0].shape()[3];
  const std::int64_t plane = h * w, n = tn * plane;
  std::vector<std::vector<double>> col(k), dep(k);
  for (std::size_t i = 0; i < k; ++i) {
    col[i] = unit_values(videos[i]);
    dep[i] = depths[i].to_f64();
  }

  double acc = 0.0;
  std::int64_t terms = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      for (std::int64_t t = 0; t < tn; ++t) {
        std::vector<Vec3> na, nb;
        if (opt.normal_cos > -1.0) {
          na = depth_normals(dep[a], t, h, w, cameras[a].intrinsics, cameras[a].poses[static_cast<std::size_t>(t)]);
          nb = depth_normals(dep[b], t, h, w, cameras[b].intrinsics, cameras[b].poses[static_cast<std::size_t>(t)]);
        }
        const auto& ka = cameras[a].intrinsics;
        const auto& kb = cameras[b].intrinsics;
        const Pose& pa = cameras[a].poses[static_cast<std::size_t>(t)];
        const Pose& pb = cameras[b].poses[static_cast<std::size_t>(t)];
        double se = 0.0;
        std::int64_t count = 0;
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x) {
            const double z = dep[a][static_cast<std::size_t>(t * plane + y * w + x)];
            if (z >= kDepthSentinel) continue;
            const auto pr = project(unproject(static_cast<double>(x), static_cast<double>(y), z, ka, pa), kb, pb);
            if (!pr) continue;
            const double u = pr->u, v = pr->v;
            if (u < 0.0 || v < 0.0 || u > static_cast<double>(w - 1) || v > static_cast<double>(h - 1)) continue;
            const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(u), w - 2 < 0 ? 0 : w - 2);
            const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(v), h - 2 < 0 ? 0 : h - 2);
            const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
            const std::int64_t taps[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
            const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            bool visible = true;
            for (auto tap : taps) {
              const double zb = dep[b][static_cast<std::size_t>(t * plane + tap)];
              if (std::abs(zb - pr->z) > opt.eps_rel * pr->z) visible = false;
              if (!na.empty() && dot(na[static_cast<std::size_t>(y * w + x)], nb[static_cast<std::size_t>(tap)]) < opt.normal_cos)
                visible = false;
            }
            if (!visible) continue;
            for (int c = 0; c < 3; ++c) {
              double sb = 0.0;
              for (int j = 0; j < 4; ++j) sb += wts[j] * col[b][static_cast<std::size_t>(c * n + t * plane + taps[j])];
              const double sa = col[a][static_cast<std::size_t>(c * n + t * plane + y * w + x)];
              se += (sa - sb) * (sa - sb);
            }
            count += 3;
          }
        if (count == 0) continue;
        acc += std::sqrt(se / static_cast<double>(count));
        ++terms;
      }
    }
  if (terms == 0) throw NumericError("xvc: no co-visible pixels between any pair of views");
  return acc / static_cast<double>(terms);
}

}  // namespace wv
