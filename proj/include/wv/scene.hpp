#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wv/geometry.hpp"
#include "wv/tensor.hpp"

namespace wv {

inline constexpr double kDepthSentinel = 1e9;
inline constexpr double kFarPlane = 100.0;

std::optional<double> intersect_ray_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius);
/// Smallest positive boundary crossing of the slab intersection.
std::optional<double> intersect_ray_box(const Vec3& origin, const Vec3& dir, const Vec3& min_corner,
                                        const Vec3& max_corner);

struct SceneObject {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Vec3 center = {0, 0, 0};  // sphere
  double radius = 1.0;
  Vec3 min_corner = {0, 0, 0}, max_corner = {1, 1, 1};  // box
  Vec3 color = {1, 1, 1};
  Vec3 velocity = {0, 0, 0};  // world units per frame
  int id = 1;
};

struct CameraTrack {
  Intrinsics intrinsics;
  std::vector<Pose> poses;  // one per frame
};

struct ClipSpec {
  std::vector<SceneObject> objects;
  std::vector<CameraTrack> cameras;
  int frames = 16, height = 64, width = 64;
  Vec3 light = {0, 1, 0};
  std::vector<int> style_ids;
  std::uint64_t seed = 0;
  void validate() const;
};

struct Style {
  Mat3 matrix = identity3();
  Vec3 bias = {0, 0, 0};
};

/// Deterministic style vocabulary; style 0 is the identity.
std::vector<Style> make_styles(int count);
Vec3 apply_style(const Vec3& color, int style_id, const std::vector<Style>& styles);

struct ViewRender {
  Tensor rgb;     // u8 [3,T,H,W]
  Tensor depth;   // f32 [T,H,W]
  Tensor edges;   // u8 [T,H,W]
  Tensor points;  // f32 [T,H,W,3]
};

struct ClipBundle {
  std::vector<ViewRender> views;
  std::vector<CameraTrack> cameras;
  std::vector<int> style_ids;
  std::uint64_t seed = 0;
  int frames = 0, height = 0, width = 0;
  int num_views() const { return static_cast<int>(views.size()); }
};

/// Renders every view. `parallel` selects the OpenMP path; the serial path is
/// the reference and both produce identical bytes.
ClipBundle render_clip(const ClipSpec& spec, const std::vector<Style>& styles, bool parallel = true);

struct DataConfig {
  int clips = 8;
  int views = 3;
  int frames = 16, height = 64, width = 64;
  int styles = 4;
  int min_objects = 2, max_objects = 4;
  std::string style_policy = "shared";  // shared | per_view
  void validate() const;
};

/// Scene layout for clip `index`, a pure function of (cfg, seed, index).
ClipSpec random_clip_spec(const DataConfig& cfg, std::uint64_t seed, int index);

/// Writes the dataset layout under `root` and returns the root manifest.
nlohmann::json generate_dataset(const DataConfig& cfg, std::uint64_t seed, const std::filesystem::path& root);

void write_clip(const ClipBundle& clip, const std::filesystem::path& dir, int index);
ClipBundle load_clip(const std::filesystem::path& dir);
nlohmann::json cameras_to_json(const std::vector<CameraTrack>& cams);
std::vector<CameraTrack> cameras_from_json(const nlohmann::json& j);
std::filesystem::path clip_dir(const std::filesystem::path& root, int index);

}  // namespace wv
