#include "wv/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "wv/tensor_io.hpp"

namespace wv {

using nlohmann::json;

std::optional<double> intersect_ray_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius) {
  if (checked_mode() && std::abs(norm(dir) - 1.0) > 1e-6) throw ContractError("intersect_ray_sphere: direction not unit");
  require(radius > 0.0, "intersect_ray_sphere: radius must be positive");
  const Vec3 oc = origin - center;
  const double b = dot(dir, oc);
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  if (-b - sq > 0.0) return -b - sq;
  if (-b + sq > 0.0) return -b + sq;
  return std::nullopt;
}

std::optional<double> intersect_ray_box(const Vec3& origin, const Vec3& dir, const Vec3& min_corner,
                                        const Vec3& max_corner) {
  for (int a = 0; a < 3; ++a)
    if (!(min_corner[a] < max_corner[a])) throw ContractError("intersect_ray_box: degenerate box");
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < min_corner[a] || origin[a] > max_corner[a]) return std::nullopt;
      continue;
    }
    double t0 = (min_corner[a] - origin[a]) / dir[a];
    double t1 = (max_corner[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far <= 0.0) return std::nullopt;
  return t_near > 0.0 ? t_near : t_far;
}

void ClipSpec::validate() const {
  require(!cameras.empty(), "clip spec: at least one camera");
  require(frames > 0 && frames % 8 == 0, "clip spec: frames must be a positive multiple of 8");
  require(height > 0 && height % 8 == 0 && width > 0 && width % 8 == 0, "clip spec: H, W must be multiples of 8");
  require(std::abs(norm(light) - 1.0) < 1e-6, "clip spec: light direction must be unit");
  require(style_ids.size() == cameras.size(), "clip spec: one style id per view");
  for (const auto& cam : cameras) {
    cam.intrinsics.validate();
    require(cam.intrinsics.width == width && cam.intrinsics.height == height, "clip spec: intrinsics extents");
    require(static_cast<int>(cam.poses.size()) == frames, "clip spec: one pose per frame");
    for (const auto& p : cam.poses) p.validate();
  }
  std::vector<int> ids;
  for (const auto& o : objects) {
    require(o.id > 0, "clip spec: object ids must be positive");
    if (o.kind == SceneObject::Kind::kSphere) require(o.radius > 0, "clip spec: sphere radius");
    else
      for (int a = 0; a < 3; ++a) require(o.min_corner[a] < o.max_corner[a], "clip spec: box corners");
    ids.push_back(o.id);
  }
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), "clip spec: duplicate object id");
  if (cameras.size() >= 3) {
    bool dynamic = false;
    for (const auto& cam : cameras)
      for (const auto& p : cam.poses)
        if (p.rotation != cam.poses[0].rotation || p.translation != cam.poses[0].translation) dynamic = true;
    require(dynamic, "clip spec: with three or more views at least one camera must move");
  }
}

std::vector<Style> make_styles(int count) {
  require(count >= 1, "style vocabulary must be non-empty");
  std::vector<Style> styles(static_cast<std::size_t>(count));
  for (int s = 1; s < count; ++s) {
    RandomStream rng(0x57A1E5ull, static_cast<std::uint64_t>(s));
    // Channel permutation blended with a random mixing matrix.
    int perm[3] = {0, 1, 2};
    for (int i = 2; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    Style& st = styles[static_cast<std::size_t>(s)];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) st.matrix[r * 3 + c] = (perm[r] == c ? 0.7 : 0.0) + rng.uniform(-0.15, 0.3);
    for (int c = 0; c < 3; ++c) st.bias[c] = rng.uniform(-0.1, 0.15);
  }
  return styles;
}

Vec3 apply_style(const Vec3& color, int style_id, const std::vector<Style>& styles) {
  if (style_id < 0 || style_id >= static_cast<int>(styles.size()))
    throw ContractError("style id " + std::to_string(style_id) + " outside vocabulary of " +
                        std::to_string(styles.size()));
  if (style_id == 0) return color;
  const Style& s = styles[static_cast<std::size_t>(style_id)];
  Vec3 out = matvec(s.matrix, color) + s.bias;
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

namespace {

struct Hit {
  double s = std::numeric_limits<double>::infinity();
  int object = -1;  // index into objects
};

struct FrameScene {
  std::vector<SceneObject> objects;  // positions at this frame
};

FrameScene scene_at(const ClipSpec& spec, int frame) {
  FrameScene fs{spec.objects};
  for (auto& o : fs.objects) {
    const Vec3 shift = static_cast<double>(frame) * o.velocity;
    o.center = o.center + shift;
    o.min_corner = o.min_corner + shift;
    o.max_corner = o.max_corner + shift;
  }
  return fs;
}

Hit trace(const FrameScene& fs, const Vec3& origin, const Vec3& dir) {
  Hit best;
  for (std::size_t i = 0; i < fs.objects.size(); ++i) {
    const auto& o = fs.objects[i];
    const auto s = o.kind == SceneObject::Kind::kSphere ? intersect_ray_sphere(origin, dir, o.center, o.radius)
                                                        : intersect_ray_box(origin, dir, o.min_corner, o.max_corner);
    if (s && *s < best.s) {
      best.s = *s;
      best.object = static_cast<int>(i);
    }
  }
  return best;
}

Vec3 surface_normal(const SceneObject& o, const Vec3& p) {
  if (o.kind == SceneObject::Kind::kSphere) return normalized(p - o.center);
  const Vec3 c = 0.5 * (o.min_corner + o.max_corner);
  const Vec3 half = 0.5 * (o.max_corner - o.min_corner);
  int axis = 0;
  double best = -1.0;
  for (int a = 0; a < 3; ++a) {
    const double r = std::abs(p[a] - c[a]) / half[a];
    if (r > best) {
      best = r;
      axis = a;
    }
  }
  Vec3 n = {0, 0, 0};
  n[axis] = p[axis] > c[axis] ? 1.0 : -1.0;
  return n;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Renders one row of one frame of one view into the output buffers.
void render_row(const ClipSpec& spec, const FrameScene& fs, const CameraTrack& cam, int frame, int row,
                const std::vector<Vec3>& styled, std::vector<std::uint8_t>& rgb, std::vector<float>& depth,
                std::vector<float>& points, std::vector<int>& ids) {
  const int H = spec.height, W = spec.width, T = spec.frames;
  const Pose& pose = cam.poses[static_cast<std::size_t>(frame)];
  const Intrinsics& k = cam.intrinsics;
  const Vec3 origin = pose.center();
  const double bg = 0.25 + 0.2 * static_cast<double>(row) / static_cast<double>(H - 1);
  for (int col = 0; col < W; ++col) {
    const Vec3 dc = {(col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0};
    const Vec3 dir = normalized(matTvec(pose.rotation, dc));
    const Hit hit = trace(fs, origin, dir);
    const std::size_t pix = (static_cast<std::size_t>(frame) * H + row) * W + col;
    Vec3 color, point;
    double z;
    int id = 0;
    if (hit.object >= 0) {
      const auto& o = fs.objects[static_cast<std::size_t>(hit.object)];
      point = origin + hit.s * dir;
      z = (matvec(pose.rotation, point) + pose.translation)[2];
      const double lambert = std::max(0.0, dot(surface_normal(o, point), spec.light));
      color = (0.2 + 0.8 * lambert) * styled[static_cast<std::size_t>(hit.object)];
      id = o.id;
    } else {
      point = unproject(col, row, kFarPlane, k, pose);
      z = kDepthSentinel;
      color = {bg, bg, bg};
    }
    for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c) * T * H * W + pix] = to_u8(color[c]);
    depth[pix] = static_cast<float>(z);
    for (int c = 0; c < 3; ++c) points[pix * 3 + c] = static_cast<float>(point[c]);
    ids[pix] = id;
  }
}

bool depth_jump(double a, double b) { return std::abs(a / b - 1.0) > 0.05; }

std::vector<std::uint8_t> edge_map(const std::vector<int>& ids, const std::vector<float>& depth, int T, int H, int W) {
  std::vector<std::uint8_t> edges(ids.size(), 0);
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t p = (static_cast<std::size_t>(t) * H + y) * W + x;
        for (int n = 0; n < 4; ++n) {
          const int yy = y + dy[n], xx = x + dx[n];
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          const std::size_t q = (static_cast<std::size_t>(t) * H + yy) * W + xx;
          if (ids[q] != ids[p] || depth_jump(depth[p], depth[q])) {
            edges[p] = 1;
            break;
          }
        }
      }
  return edges;
}

}  // namespace

ClipBundle render_clip(const ClipSpec& spec, const std::vector<Style>& styles, bool parallel) {
  spec.validate();
  const int T = spec.frames, H = spec.height, W = spec.width;
  const int K = static_cast<int>(spec.cameras.size());
  const std::size_t n = static_cast<std::size_t>(T) * H * W;
  std::vector<FrameScene> scenes;
  for (int t = 0; t < T; ++t) scenes.push_back(scene_at(spec, t));

  ClipBundle out;
  out.cameras = spec.cameras;
  out.style_ids = spec.style_ids;
  out.seed = spec.seed;
  out.frames = T;
  out.height = H;
  out.width = W;
  for (int v = 0; v < K; ++v) {
    std::vector<Vec3> styled;
    for (const auto& o : spec.objects) styled.push_back(apply_style(o.color, spec.style_ids[static_cast<std::size_t>(v)], styles));
    std::vector<std::uint8_t> rgb(3 * n);
    std::vector<float> depth(n), points(3 * n);
    std::vector<int> ids(n);
    const auto& cam = spec.cameras[static_cast<std::size_t>(v)];
#pragma omp parallel for schedule(static) if (parallel)
    for (int job = 0; job < T * H; ++job)
      render_row(spec, scenes[static_cast<std::size_t>(job / H)], cam, job / H, job % H, styled, rgb, depth, points,
                 ids);
    ViewRender view;
    view.edges = Tensor::u8({T, H, W}, edge_map(ids, depth, T, H, W));
    view.rgb = Tensor::u8({3, T, H, W}, std::move(rgb));
    view.depth = Tensor::f32({T, H, W}, std::move(depth));
    view.points = Tensor::f32({T, H, W, 3}, std::move(points));
    out.views.push_back(std::move(view));
  }
  return out;
}

void DataConfig::validate() const {
  if (clips < 1) throw ConfigError("data.clips must be >= 1");
  if (views < 1) throw ConfigError("data.K must be >= 1");
  if (frames < 8 || frames % 8 != 0) throw ConfigError("data.T must be a positive multiple of 8");
  if (height < 8 || height % 8 != 0 || width < 8 || width % 8 != 0)
    throw ConfigError("data.H and data.W must be positive multiples of 8");
  if (styles < 1) throw ConfigError("data.styles must be >= 1");
  if (min_objects < 0 || min_objects > max_objects) throw ConfigError("data object range is empty");
  if (style_policy != "shared" && style_policy != "per_view")
    throw ConfigError("data.style_policy must be shared or per_view");
}

namespace {

Vec3 random_color(RandomStream& rng) {
  // Saturated hue wheel colour.
  const double h = rng.uniform() * 6.0, s = rng.uniform(0.55, 0.9), v = rng.uniform(0.7, 1.0);
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::vector<Pose> camera_track(double azimuth, double elevation, double radius, double spin, int frames) {
  const Vec3 target = {0.0, 0.3, 0.0};
  std::vector<Pose> poses;
  for (int t = 0; t < frames; ++t) {
    const double a = azimuth + spin * t;
    const Vec3 eye = {radius * std::cos(elevation) * std::cos(a), radius * std::sin(elevation),
                      radius * std::cos(elevation) * std::sin(a)};
    poses.push_back(look_at(eye, target, {0, 1, 0}));
  }
  return poses;
}

}  // namespace

ClipSpec random_clip_spec(const DataConfig& cfg, std::uint64_t seed, int index) {
  cfg.validate();
  ClipSpec spec;
  spec.seed = mix64(seed, static_cast<std::uint64_t>(index));
  spec.frames = cfg.frames;
  spec.height = cfg.height;
  spec.width = cfg.width;
  RandomStream rng(spec.seed, 0);
  constexpr double kDeg = std::numbers::pi / 180.0;

  const int count = cfg.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.id = i + 1;
    o.color = random_color(rng);
    const double x = rng.uniform(-1.3, 1.3), z = rng.uniform(-1.3, 1.3);
    if (rng.uniform() < 0.5) {
      o.kind = SceneObject::Kind::kSphere;
      o.radius = rng.uniform(0.35, 0.65);
      o.center = {x, o.radius, z};
    } else {
      o.kind = SceneObject::Kind::kBox;
      const Vec3 half = {rng.uniform(0.25, 0.5), rng.uniform(0.25, 0.55), rng.uniform(0.25, 0.5)};
      o.min_corner = {x - half[0], 0.0, z - half[2]};
      o.max_corner = {x + half[0], 2 * half[1], z + half[2]};
    }
    const double heading = rng.uniform(0.0, 2 * std::numbers::pi), speed = rng.uniform(0.01, 0.035);
    o.velocity = {speed * std::cos(heading), 0.0, speed * std::sin(heading)};
    spec.objects.push_back(o);
  }
  // Static table top under the objects; not counted in the object range.
  SceneObject table;
  table.kind = SceneObject::Kind::kBox;
  table.id = count + 1;
  table.min_corner = {-2.2, -0.3, -2.2};
  table.max_corner = {2.2, 0.0, 2.2};
  table.color = {0.62, 0.52, 0.42};
  spec.objects.push_back(table);

  spec.light = normalized({rng.uniform(-0.6, 0.6), 1.0, rng.uniform(-0.6, 0.6)});

  Intrinsics k;
  k.fx = k.fy = cfg.width;
  k.cx = 0.5 * (cfg.width - 1);
  k.cy = 0.5 * (cfg.height - 1);
  k.width = cfg.width;
  k.height = cfg.height;
  double az = rng.uniform(0.0, 2 * std::numbers::pi);
  for (int v = 0; v < cfg.views; ++v) {
    const double elevation = rng.uniform(20.0, 35.0) * kDeg;
    const double radius = rng.uniform(4.6, 5.4);
    const bool orbit = cfg.views >= 3 && v == cfg.views - 1;
    const double spin = orbit ? (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.5, 3.0) * kDeg : 0.0;
    spec.cameras.push_back({k, camera_track(az, elevation, radius, spin, cfg.frames)});
    az += rng.uniform(60.0, 120.0) * kDeg;
  }

  if (cfg.style_policy == "shared") {
    spec.style_ids.assign(static_cast<std::size_t>(cfg.views), static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.styles))));
  } else {
    for (int v = 0; v < cfg.views; ++v) spec.style_ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.styles))));
  }
  return spec;
}

json cameras_to_json(const std::vector<CameraTrack>& cams) {
  json out = json::array();
  for (const auto& c : cams) {
    json cam;
    cam["intrinsics"] = {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy},        {"cx", c.intrinsics.cx},
                         {"cy", c.intrinsics.cy}, {"width", c.intrinsics.width}, {"height", c.intrinsics.height}};
    json rot = json::array(), trans = json::array();
    for (const auto& p : c.poses) {
      rot.push_back(p.rotation);
      trans.push_back(p.translation);
    }
    cam["rotation"] = rot;
    cam["translation"] = trans;
    out.push_back(cam);
  }
  return out;
}

std::vector<CameraTrack> cameras_from_json(const json& j) {
  std::vector<CameraTrack> out;
  for (const auto& cam : j) {
    CameraTrack c;
    const auto& k = cam.at("intrinsics");
    c.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                    k.at("cy").get<double>(), k.at("width").get<int>(),  k.at("height").get<int>()};
    const auto& rot = cam.at("rotation");
    const auto& trans = cam.at("translation");
    if (rot.size() != trans.size()) throw IoError("camera track: rotation/translation length mismatch");
    for (std::size_t i = 0; i < rot.size(); ++i) {
      Pose p;
      p.rotation = rot[i].get<Mat3>();
      p.translation = trans[i].get<Vec3>();
      c.poses.push_back(p);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::filesystem::path clip_dir(const std::filesystem::path& root, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "clip_%04d", index);
  return root / name;
}

void write_clip(const ClipBundle& clip, const std::filesystem::path& dir, int index) {
  std::filesystem::create_directories(dir);
  json m;
  m["index"] = index;
  m["seed"] = clip.seed;
  m["frames"] = clip.frames;
  m["height"] = clip.height;
  m["width"] = clip.width;
  m["views"] = clip.num_views();
  m["style_ids"] = clip.style_ids;
  m["cameras"] = cameras_to_json(clip.cameras);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  for (int v = 0; v < clip.num_views(); ++v) {
    const auto& view = clip.views[static_cast<std::size_t>(v)];
    const std::string k = std::to_string(v);
    write_tensor(view.rgb, dir / ("rgb_v" + k + ".wvt"));
    write_tensor(view.depth, dir / ("depth_v" + k + ".wvt"));
    write_tensor(view.edges, dir / ("edges_v" + k + ".wvt"));
    write_tensor(view.points, dir / ("points_v" + k + ".wvt"));
  }
}

ClipBundle load_clip(const std::filesystem::path& dir) {
  json m;
  try {
    m = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("bad clip manifest in " + dir.string() + ": " + e.what());
  }
  ClipBundle clip;
  try {
    clip.seed = m.at("seed").get<std::uint64_t>();
    clip.frames = m.at("frames").get<int>();
    clip.height = m.at("height").get<int>();
    clip.width = m.at("width").get<int>();
    clip.style_ids = m.at("style_ids").get<std::vector<int>>();
    clip.cameras = cameras_from_json(m.at("cameras"));
  } catch (const json::exception& e) {
    throw IoError("bad clip manifest in " + dir.string() + ": " + e.what());
  }
  const int views = m.at("views").get<int>();
  for (int v = 0; v < views; ++v) {
    const std::string k = std::to_string(v);
    ViewRender view;
    view.rgb = read_tensor(dir / ("rgb_v" + k + ".wvt"));
    view.depth = read_tensor(dir / ("depth_v" + k + ".wvt"));
    view.edges = read_tensor(dir / ("edges_v" + k + ".wvt"));
    view.points = read_tensor(dir / ("points_v" + k + ".wvt"));
    const Shape vid = {clip.frames, clip.height, clip.width};
    if (view.rgb.shape() != Shape({3, clip.frames, clip.height, clip.width}) || view.depth.shape() != vid ||
        view.edges.shape() != vid || view.points.shape() != Shape({clip.frames, clip.height, clip.width, 3}))
      throw IoError("clip " + dir.string() + ": tensor shapes disagree with manifest");
    clip.views.push_back(std::move(view));
  }
  return clip;
}

json generate_dataset(const DataConfig& cfg, std::uint64_t seed, const std::filesystem::path& root) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());
  const auto styles = make_styles(cfg.styles);
  json clips = json::array();
  for (int i = 0; i < cfg.clips; ++i) {
    const ClipSpec spec = random_clip_spec(cfg, seed, i);
    const ClipBundle clip = render_clip(spec, styles);
    write_clip(clip, clip_dir(root, i), i);
    clips.push_back({{"index", i},
                     {"dir", clip_dir(root, i).filename().string()},
                     {"seed", spec.seed},
                     {"objects", static_cast<int>(spec.objects.size()) - 1},
                     {"style_ids", spec.style_ids}});
  }
  json m;
  m["format"] = "wv-dataset";
  m["version"] = 1;
  m["seed"] = seed;
  m["config"] = {{"clips", cfg.clips},   {"K", cfg.views},        {"T", cfg.frames},
                 {"H", cfg.height},      {"W", cfg.width},        {"styles", cfg.styles},
                 {"min_objects", cfg.min_objects}, {"max_objects", cfg.max_objects}, {"style_policy", cfg.style_policy}};
  m["clips"] = clips;
  write_text(root / "manifest.json", m.dump(2) + "\n");
  return m;
}

}  // namespace wv
