#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "test_util.hpp"
#include "wv/scene.hpp"
#include "wv/tensor_io.hpp"

using namespace wv;

TEST_CASE("ray-sphere intersections") {
  auto hit = intersect_ray_sphere({0, 0, 0}, {0, 0, 1}, {0, 0, 5}, 1);
  REQUIRE(hit);
  CHECK(*hit == doctest::Approx(4.0));
  CHECK_FALSE(intersect_ray_sphere({0, 0, 0}, {0, 1, 0}, {0, 0, 5}, 1));
  auto tangent = intersect_ray_sphere({0, 1, 0}, {0, 0, 1}, {0, 0, 5}, 1);
  REQUIRE(tangent);
  CHECK(*tangent == doctest::Approx(5.0));
  auto inside = intersect_ray_sphere({0, 0, 5}, {0, 0, 1}, {0, 0, 5}, 1);
  CHECK(*inside == doctest::Approx(1.0));
  test::CheckedScope on(true);
  CHECK_THROWS(intersect_ray_sphere({0, 0, 0}, {0, 0, 2}, {0, 0, 5}, 1));
}

namespace {

// Marches along the ray and reports the first boundary crossing.
std::optional<double> march_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  auto inside = [&](double s) {
    const Vec3 p = o + s * d;
    for (int a = 0; a < 3; ++a)
      if (p[a] < lo[a] || p[a] > hi[a]) return false;
    return true;
  };
  const double step = 1e-4;
  bool prev = inside(step * 0.5);
  for (double s = step; s < 50; s += step) {
    const bool cur = inside(s);
    if (cur != prev) return s;
    prev = cur;
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("ray-box intersections") {
  auto hit = intersect_ray_box({0, 0, 0}, {0, 0, 1}, {-1, -1, 2}, {1, 1, 3});
  REQUIRE(hit);
  CHECK(*hit == doctest::Approx(2.0));
  CHECK_FALSE(intersect_ray_box({0, 5, 0}, {0, 0, 1}, {-1, -1, 2}, {1, 1, 3}));
  CHECK_THROWS(intersect_ray_box({0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 1, 3}));
  RandomStream rng(4, 0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 o = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec3 d = normalized({rng.normal(), rng.normal(), rng.normal()});
    const Vec3 lo = {-1, -0.5, -0.8}, hi = {0.7, 1.0, 0.9};
    auto a = intersect_ray_box(o, d, lo, hi);
    auto b = march_box(o, d, lo, hi);
    REQUIRE(a.has_value() == b.has_value());
    if (a) CHECK(std::abs(*a - *b) < 2e-4);
  }
}

TEST_CASE("apply_style: identity, determinism, range") {
  const auto styles = make_styles(4);
  const Vec3 c = {0.2, 0.5, 0.8};
  CHECK(apply_style(c, 0, styles) == c);
  for (int s = 1; s < 4; ++s) {
    CHECK(apply_style(c, s, styles) == apply_style(c, s, make_styles(4)));
    CHECK(apply_style(c, s, styles) != c);
    for (double v : apply_style(c, s, styles)) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(apply_style(c, 4, styles), ContractError);
}

namespace {

ClipSpec single_sphere_spec() {
  ClipSpec spec;
  spec.frames = 8;
  spec.height = spec.width = 64;
  Intrinsics k;
  k.fx = k.fy = 64;
  k.cx = k.cy = 32;
  k.width = k.height = 64;
  spec.cameras.push_back({k, std::vector<Pose>(8)});
  SceneObject s;
  s.center = {0, 0, 5};
  s.radius = 1;
  s.color = {0.8, 0.3, 0.2};
  spec.objects.push_back(s);
  spec.light = {0, 0, -1};
  spec.style_ids = {0};
  return spec;
}

}  // namespace

TEST_CASE("render_clip: analytic sphere depth") {
  auto clip = render_clip(single_sphere_spec(), make_styles(4));
  const auto d = clip.views[0].depth.data<float>();
  CHECK(std::abs(d[32 * 64 + 32] - 4.0) < 1e-4);
  CHECK(d[0] == static_cast<float>(kDepthSentinel));
  const auto rgb = clip.views[0].rgb.data<std::uint8_t>();
  CHECK(rgb[32 * 64 + 32] == 204);  // 0.8 * (0.2 + 0.8 * 1)
}

TEST_CASE("render_clip: empty scene") {
  auto spec = single_sphere_spec();
  spec.objects.clear();
  auto clip = render_clip(spec, make_styles(1));
  for (auto e : clip.views[0].edges.data<std::uint8_t>()) CHECK(e == 0);
  for (auto z : clip.views[0].depth.data<float>()) CHECK(z == static_cast<float>(kDepthSentinel));
}

TEST_CASE("render_clip: unproject consistency, edges binary, style-invariant edges, schedule independence") {
  DataConfig cfg;
  cfg.frames = 8;
  cfg.height = cfg.width = 32;
  auto spec = random_clip_spec(cfg, 17, 0);
  const auto styles = make_styles(4);
  auto clip = render_clip(spec, styles, true);
  auto serial = render_clip(spec, styles, false);
  for (int v = 0; v < 3; ++v) {
    const auto& a = clip.views[v];
    const auto& b = serial.views[v];
    CHECK(a.rgb.bitwise_equal(b.rgb));
    CHECK(a.depth.bitwise_equal(b.depth));
    CHECK(a.edges.bitwise_equal(b.edges));
    CHECK(a.points.bitwise_equal(b.points));
    const auto d = a.depth.data<float>();
    const auto p = a.points.data<float>();
    int fg = 0;
    for (int t = 0; t < 8; ++t)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          const std::size_t i = (t * 32 + y) * 32 + x;
          if (d[i] >= kDepthSentinel) continue;
          ++fg;
          const auto& cam = spec.cameras[v];
          const Vec3 w = unproject(x, y, d[i], cam.intrinsics, cam.poses[t]);
          CHECK(norm(w - Vec3{p[3 * i], p[3 * i + 1], p[3 * i + 2]}) < 1e-4);
          auto proj = project({p[3 * i], p[3 * i + 1], p[3 * i + 2]}, cam.intrinsics, cam.poses[t]);
          CHECK(std::abs(proj->u - x) < 1e-4);
          CHECK(std::abs(proj->v - y) < 1e-4);
          CHECK(std::abs(proj->z - d[i]) < 1e-4 * std::max(1.0, static_cast<double>(d[i])));
        }
    CHECK(fg > 100);
    for (auto e : a.edges.data<std::uint8_t>()) CHECK(e <= 1);
  }
  auto restyled = spec;
  restyled.style_ids = {2, 2, 2};
  auto other = render_clip(restyled, styles);
  for (int v = 0; v < 3; ++v) {
    CHECK(other.views[v].edges.bitwise_equal(clip.views[v].edges));
  }
}

TEST_CASE("random clips: object range, moving camera, shapes") {
  DataConfig cfg;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  for (int i = 0; i < 100; ++i) {
    auto spec = random_clip_spec(cfg, 99, i);
    const int n = static_cast<int>(spec.objects.size()) - 1;  // minus the table
    CHECK(n >= 2);
    CHECK(n <= 4);
    CHECK_NOTHROW(spec.validate());
  }
}

TEST_CASE("generate_dataset: layout, shapes and determinism") {
  DataConfig cfg;
  cfg.clips = 2;
  cfg.frames = 16;
  cfg.height = cfg.width = 64;
  auto a = test::temp_dir("ds_a"), b = test::temp_dir("ds_b");
  auto ma = generate_dataset(cfg, 11, a);
  generate_dataset(cfg, 11, b);
  CHECK(ma["clips"].size() == 2u);
  for (auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    auto rel = std::filesystem::relative(entry.path(), a);
    CHECK(read_file(entry.path()) == read_file(b / rel));
  }
  auto rgb = read_tensor(a / "clip_0000" / "rgb_v0.wvt");
  CHECK(rgb.shape() == Shape({3, 16, 64, 64}));
  CHECK(rgb.dtype() == DType::kUInt8);
  auto clip = load_clip(a / "clip_0001");
  CHECK(clip.num_views() == 3);
  CHECK(clip.cameras[2].poses.size() == 16u);
  CHECK(clip.views[1].points.shape() == Shape({16, 64, 64, 3}));
  CHECK_THROWS_AS(generate_dataset(cfg, 11, "/proc/forbidden_dir"), IoError);
}
