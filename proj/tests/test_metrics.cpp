#include <cmath>

#include "doctest.h"
#include "wv/latents.hpp"
#include "wv/metrics.hpp"

using namespace wv;

namespace {

Tensor edge_map(int t, int h, int w, const std::vector<std::array<int, 3>>& on) {
  std::vector<std::uint8_t> v(static_cast<std::size_t>(t) * h * w, 0);
  for (const auto& [f, y, x] : on) v[(static_cast<std::size_t>(f) * h + y) * w + x] = 1;
  return Tensor::u8({t, h, w}, std::move(v));
}

struct OracleClip {
  std::vector<Tensor> videos, depths;
  std::vector<CameraTrack> cams;
};

OracleClip oracle(std::uint64_t seed, int index) {
  DataConfig dc;
  dc.frames = 8;
  const auto styles = make_styles(dc.styles);
  auto spec = random_clip_spec(dc, seed, index);
  std::fill(spec.style_ids.begin(), spec.style_ids.end(), 0);
  const auto clip = render_clip(spec, styles);
  OracleClip o;
  for (const auto& v : clip.views) {
    o.videos.push_back(rgb_to_unit(v.rgb));
    o.depths.push_back(v.depth);
  }
  o.cams = clip.cameras;
  return o;
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor a = Tensor::f64({1, 1, 1, 4}, {0.0, 0.25, 0.5, 1.0});
  CHECK(psnr(a, a) == kPsnrIdentical);
  const Tensor b = Tensor::f64({1, 1, 1, 4}, {0.1, 0.35, 0.6, 0.9});
  CHECK(psnr(a, b) == doctest::Approx(20.0));  // mse 0.01
  const Tensor u = Tensor::u8({1, 1, 1, 2}, {0, 255});
  const Tensor f = Tensor::f64({1, 1, 1, 2}, {0.0, 1.0});
  CHECK(psnr(u, f) == kPsnrIdentical);
  CHECK_THROWS_AS(psnr(a, u), ContractError);
}

TEST_CASE("edge_f1 empty maps and tolerance") {
  const Tensor empty = edge_map(2, 5, 5, {});
  const Tensor one = edge_map(2, 5, 5, {{0, 2, 2}});
  CHECK(edge_f1(empty, empty) == 1.0);
  CHECK(edge_f1(one, empty) == 0.0);
  CHECK(edge_f1(empty, one) == 0.0);
  CHECK(edge_f1(one, one) == 1.0);
  const Tensor shifted = edge_map(2, 5, 5, {{0, 3, 3}});
  CHECK(edge_f1(shifted, one, 1) == 1.0);
  CHECK(edge_f1(shifted, one, 0) == 0.0);
  // Matches never cross frames.
  CHECK(edge_f1(edge_map(2, 5, 5, {{1, 2, 2}}), one, 2) == 0.0);
  // Two predictions, one correct: precision 1/2, recall 1.
  const Tensor two = edge_map(2, 5, 5, {{0, 2, 2}, {0, 0, 4}});
  CHECK(edge_f1(two, one, 0) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(edge_f1(one, edge_map(1, 5, 5, {})), ContractError);
}

TEST_CASE("sobel_edges marks a unit step") {
  const int h = 8, w = 8;
  std::vector<double> v(3 * h * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 4; x < w; ++x) v[static_cast<std::size_t>(y * w + x)] = 1.0;  // red channel only
  const Tensor e = sobel_edges(Tensor::f64({3, 1, h, w}, v));
  CHECK(e.shape() == Shape{1, h, w});
  const auto m = e.to_f64();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) CHECK(m[static_cast<std::size_t>(y * w + x)] == ((x == 3 || x == 4) ? 1.0 : 0.0));
  // A 0.1 step stays below the 0.2 threshold.
  for (auto& x : v) x *= 0.1;
  for (double x : sobel_edges(Tensor::f64({3, 1, h, w}, v)).to_f64()) CHECK(x == 0.0);
}

TEST_CASE("si_rmse is scale invariant and masked") {
  const Tensor gt = Tensor::f64({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(si_rmse(gt, gt) == doctest::Approx(0.0).epsilon(1e-12));
  const Tensor scaled = Tensor::f64({1, 2, 2}, {2.5, 5.0, 7.5, 10.0});
  CHECK(si_rmse(scaled, gt) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  const Tensor off = Tensor::f64({1, 2, 2}, {1.0, 2.0, 3.0, 40.0});
  CHECK(si_rmse(off, gt) > 0.1);
  CHECK(si_rmse(off, gt, {1, 1, 1, 0}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(si_rmse(Tensor::f64({1, 2, 2}, {1.0, 0.0, 1.0, 1.0}), gt), NumericError);
  CHECK_THROWS_AS(si_rmse(gt, gt, {0, 0, 0, 0}), NumericError);
}

TEST_CASE("xvc on oracle renders, mismatched clips and view order") {
  const OracleClip a = oracle(900, 0), b = oracle(900, 1);
  const double matched = xvc(a.videos, a.depths, a.cams);
  CHECK(matched <= 0.01);
  const double mismatched = xvc(b.videos, a.depths, a.cams);
  CHECK(mismatched >= 5.0 * matched);

  std::vector<Tensor> v = {a.videos[2], a.videos[0], a.videos[1]};
  std::vector<Tensor> d = {a.depths[2], a.depths[0], a.depths[1]};
  std::vector<CameraTrack> c = {a.cams[2], a.cams[0], a.cams[1]};
  CHECK(xvc(v, d, c) == doctest::Approx(matched).epsilon(1e-9));

  CHECK_THROWS_AS(xvc({a.videos[0]}, {a.depths[0]}, {a.cams[0]}), ContractError);
}
