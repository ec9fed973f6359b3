#include "wv/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>

#include "wv/geometry.hpp"
#include "wv/metrics.hpp"
#include "wv/tensor_io.hpp"

namespace wv {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration

namespace {

struct Field {
  std::string name;
  std::function<void(const json&)> set;
  std::function<json()> get;
};

[[noreturn]] void bad_type(const std::string& key, const char* want) {
  throw ConfigError("config key " + key + " must be " + want);
}

Field field(const std::string& section, const char* name, int& ref) {
  const std::string key = section + "." + name;
  return {name, [&ref, key](const json& v) {
            if (!v.is_number_integer()) bad_type(key, "an integer");
            const auto x = v.get<std::int64_t>();
            if (x < INT32_MIN || x > INT32_MAX) bad_type(key, "a 32-bit integer");
            ref = static_cast<int>(x);
          },
          [&ref] { return json(ref); }};
}

Field field(const std::string& section, const char* name, std::uint64_t& ref) {
  const std::string key = section + "." + name;
  return {name, [&ref, key](const json& v) {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
              bad_type(key, "a non-negative integer");
            ref = v.get<std::uint64_t>();
          },
          [&ref] { return json(ref); }};
}

Field field(const std::string& section, const char* name, double& ref) {
  const std::string key = section + "." + name;
  return {name, [&ref, key](const json& v) {
            if (!v.is_number()) bad_type(key, "a number");
            ref = v.get<double>();
          },
          [&ref] { return json(ref); }};
}

Field field(const std::string& section, const char* name, bool& ref) {
  const std::string key = section + "." + name;
  return {name, [&ref, key](const json& v) {
            if (!v.is_boolean()) bad_type(key, "a boolean");
            ref = v.get<bool>();
          },
          [&ref] { return json(ref); }};
}

Field field(const std::string& section, const char* name, std::string& ref) {
  const std::string key = section + "." + name;
  return {name, [&ref, key](const json& v) {
            if (!v.is_string()) bad_type(key, "a string");
            ref = v.get<std::string>();
          },
          [&ref] { return json(ref); }};
}

std::map<std::string, std::vector<Field>> config_fields(RunConfig& c) {
  std::map<std::string, std::vector<Field>> f;
  auto& d = f["data"];
  d = {field("data", "root", c.data.root), field("data", "clips", c.data.clips), field("data", "K", c.data.K),
       field("data", "T", c.data.T),       field("data", "H", c.data.H),         field("data", "W", c.data.W),
       field("data", "styles", c.data.styles)};
  f["vae"] = {field("vae", "channels", c.vae.channels), field("vae", "lr", c.vae.lr),
              field("vae", "steps", c.vae.steps),       field("vae", "batch", c.vae.batch),
              field("vae", "res_hidden", c.vae.res_hidden), field("vae", "pca_init", c.vae.pca_init),
              field("vae", "seed", c.vae.seed)};
  auto& m = c.model;
  f["model"] = {field("model", "dim", m.dim),
                field("model", "blocks", m.blocks),
                field("model", "heads", m.heads),
                field("model", "mlp_ratio", m.mlp_ratio),
                field("model", "views", m.views),
                field("model", "styles", m.styles),
                field("model", "use_pointcloud", m.use_pointcloud),
                field("model", "use_rays", m.use_rays),
                field("model", "use_crossview", m.use_crossview),
                field("model", "point_hidden", m.point_hidden),
                field("model", "ray_hidden", m.ray_hidden),
                field("model", "moe_heads", m.moe_heads),
                field("model", "point_radius", m.point_radius)};
  auto& t = c.train;
  f["train"] = {field("train", "stage", t.stage),
                field("train", "lr", t.lr),
                field("train", "weight_decay", t.weight_decay),
                field("train", "steps", t.steps),
                field("train", "batch", t.batch),
                field("train", "p_hetero", t.p_hetero),
                field("train", "lambda_wav", t.lambda_wav),
                field("train", "drop_depth_p", t.drop_depth_p),
                field("train", "drop_sketch_p", t.drop_sketch_p),
                field("train", "random_gauge", t.random_gauge),
                field("train", "warmup", t.warmup),
                field("train", "seed", t.seed)};
  f["sample"] = {field("sample", "steps", c.sample.steps), field("sample", "seed", c.sample.seed)};
  return f;
}

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void RunConfig::validate() const {
  if (data.clips < 1 || data.K < 1 || data.styles < 1) throw ConfigError("data.clips, data.K and data.styles must be >= 1");
  for (int e : {data.T, data.H, data.W})
    if (e < 8 || e % 8 != 0) throw ConfigError("data.T, data.H and data.W must be positive multiples of 8");
  vae_config().validate();
  if (!(vae.lr > 0.0) || vae.steps < 0 || vae.batch < 1) throw ConfigError("vae.lr must be > 0, vae.steps >= 0, vae.batch >= 1");
  model_config().validate();
  if (model.views < data.K) throw ConfigError("model.views must be >= data.K");
  if (model.styles < data.styles) throw ConfigError("model.styles must be >= data.styles");
  if (train.stage != "single" && train.stage != "multi" && train.stage != "hetero")
    throw ConfigError("train.stage must be single, multi or hetero, got '" + train.stage + "'");
  if (!(train.lr > 0.0) || train.steps < 0 || train.batch < 1 || train.warmup < 0)
    throw ConfigError("train.lr must be > 0, train.steps >= 0, train.batch >= 1, train.warmup >= 0");
  if (!in_unit(train.p_hetero) || !in_unit(train.drop_depth_p) || !in_unit(train.drop_sketch_p) ||
      train.drop_depth_p + train.drop_sketch_p > 1.0)
    throw ConfigError("train probabilities must lie in [0,1] and drop_depth_p + drop_sketch_p <= 1");
  if (!(train.lambda_wav >= 0.0) || !(train.weight_decay >= 0.0))
    throw ConfigError("train.lambda_wav and train.weight_decay must be >= 0");
  if (sample.steps < 1) throw ConfigError("sample.steps must be >= 1");
}

DataConfig RunConfig::data_config() const {
  DataConfig d;
  d.clips = data.clips;
  d.views = data.K;
  d.frames = data.T;
  d.height = data.H;
  d.width = data.W;
  d.styles = data.styles;
  return d;
}

VaeConfig RunConfig::vae_config() const {
  VaeConfig v;
  v.channels = vae.channels;
  v.res_hidden = vae.res_hidden;
  return v;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.latent_channels = vae.channels;
  m.latent_t = data.T / 8;
  m.latent_h = data.H / 8;
  m.latent_w = data.W / 8;
  return m;
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  auto fields = config_fields(cfg);
  for (const auto& [section, body] : j.items()) {
    auto it = fields.find(section);
    if (it == fields.end()) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      auto f = std::find_if(it->second.begin(), it->second.end(), [&](const Field& x) { return x.name == key; });
      if (f == it->second.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
      f->set(value);
    }
  }
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  json j = json::object();
  for (const auto& [section, list] : config_fields(copy))
    for (const auto& f : list) j[section][f.name] = f.get();
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'W', 'V', 'C', 'K'};

DType dtype_from_name(const std::string& name, const std::string& origin) {
  for (DType d : {DType::kFloat32, DType::kFloat64, DType::kUInt8})
    if (name == dtype_name(d)) return d;
  throw IoError(origin + ": unknown tensor dtype '" + name + "'");
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const json& meta, const std::map<std::string, Tensor>& tensors) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");
  json header = meta.is_object() ? meta : json::object();
  header["format_version"] = kCheckpointVersion;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name},
                     {"dtype", dtype_name(t.dtype())},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"byte_length", t.byte_size()}});
    offset += t.byte_size();
  }
  header["tensors"] = table;
  const std::string h = header.dump();
  std::vector<std::byte> out(4 + 8 + h.size() + offset);
  std::memcpy(out.data(), kCheckpointMagic, 4);
  const std::uint64_t hl = h.size();
  std::memcpy(out.data() + 4, &hl, 8);
  std::memcpy(out.data() + 12, h.data(), h.size());
  std::byte* payload = out.data() + 12 + h.size();
  for (const auto& [name, t] : tensors) {
    std::memcpy(payload, t.raw(), t.byte_size());
    payload += t.byte_size();
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::byte>& bytes, const std::string& origin) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw IoError(origin + ": not a WVCK checkpoint");
  std::uint64_t hl = 0;
  std::memcpy(&hl, bytes.data() + 4, 8);
  if (hl > bytes.size() - 12) throw IoError(origin + ": truncated checkpoint header");
  Checkpoint ck;
  try {
    ck.header = json::parse(std::string(reinterpret_cast<const char*>(bytes.data() + 12), hl));
  } catch (const json::exception& e) {
    throw IoError(origin + ": malformed checkpoint header: " + e.what());
  }
  const std::uint64_t payload_size = bytes.size() - 12 - hl;
  const std::byte* payload = bytes.data() + 12 + hl;
  try {
    if (ck.header.at("format_version").get<int>() != kCheckpointVersion)
      throw IoError(origin + ": unsupported checkpoint format_version");
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& e : ck.header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const DType dtype = dtype_from_name(e.at("dtype").get<std::string>(), origin);
      const Shape shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto len = e.at("byte_length").get<std::uint64_t>();
      for (auto d : shape)
        if (d <= 0) throw IoError(origin + ": non-positive extent in tensor " + name);
      if (len != static_cast<std::uint64_t>(numel(shape)) * dtype_size(dtype))
        throw IoError(origin + ": byte_length of " + name + " disagrees with its shape");
      if (off > payload_size || len > payload_size - off) throw IoError(origin + ": tensor " + name + " out of bounds");
      ranges.emplace_back(off, len);
      Tensor t(dtype, shape);
      std::memcpy(t.raw(), payload + off, len);
      if (!ck.tensors.emplace(name, std::move(t)).second) throw IoError(origin + ": duplicate tensor " + name);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i)
      if (ranges[i - 1].first + ranges[i - 1].second > ranges[i].first)
        throw IoError(origin + ": overlapping tensor payloads");
  } catch (const json::exception& e) {
    throw IoError(origin + ": malformed checkpoint header: " + e.what());
  }
  return ck;
}

void save_checkpoint(const fs::path& path, const json& meta, const std::map<std::string, Tensor>& tensors) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, encode_checkpoint(meta, tensors));
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

std::string sha256_hex(const std::vector<std::byte>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string file_sha256(const fs::path& path) { return sha256_hex(read_file(path)); }

namespace {

const std::string kParamPrefix = "param/";
const std::string kAdamPrefix = "adam/";

std::map<std::string, Tensor> with_prefix(const std::map<std::string, Tensor>& in, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : in) out.emplace(prefix + k, v);
  return out;
}

std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& in, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : in)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

RunConfig checkpoint_config(const Checkpoint& ck, const std::string& kind, const std::string& origin) {
  if (!ck.header.contains("kind") || ck.header["kind"] != kind)
    throw ConfigError(origin + " is not a " + kind + " checkpoint");
  if (!ck.header.contains("config")) throw IoError(origin + ": checkpoint has no config echo");
  return parse_run_config(ck.header["config"]);
}

}  // namespace

Vae load_vae(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  const RunConfig cfg = checkpoint_config(ck, "vae", path.string());
  Vae vae(cfg.vae_config(), cfg.vae.seed);
  try {
    vae.params().load_values(strip_prefix(ck.tensors, kParamPrefix), true);
  } catch (const Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return vae;
}

LoadedModel load_flow_model(const fs::path& path) {
  LoadedModel out;
  out.checkpoint = load_checkpoint(path);
  out.config = checkpoint_config(out.checkpoint, "flow", path.string());
  out.model = std::make_unique<FlowModel>(out.config.model_config(), out.config.train.seed);
  try {
    out.model->params().load_values(strip_prefix(out.checkpoint.tensors, kParamPrefix), true);
  } catch (const Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset access

json read_dataset_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.json";
  if (!fs::exists(p)) throw IoError("dataset manifest not found: " + p.string());
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw IoError("malformed dataset manifest " + p.string() + ": " + e.what());
  }
}

int dataset_clip_count(const fs::path& root) {
  const json m = read_dataset_manifest(root);
  if (!m.contains("clips") || !m["clips"].is_array()) throw IoError("dataset manifest has no clip list");
  return static_cast<int>(m["clips"].size());
}

ClipSample prepare_clip(const ClipBundle& clip, const Vae& vae) {
  const int k = clip.num_views();
  if (static_cast<int>(clip.style_ids.size()) != k || static_cast<int>(clip.cameras.size()) != k)
    throw IoError("clip metadata does not match its view count");
  std::vector<Tensor> pooled;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& v : clip.views) {
    pooled.push_back(pool_pointmap(v.points, v.depth));
    std::vector<std::uint8_t> m;
    for (double d : pool_depth(v.depth).to_f64()) m.push_back(d < kDepthSentinel ? 1 : 0);
    masks.push_back(std::move(m));
  }
  const PooledPoints points = normalize_points(pooled, masks);
  ClipSample out;
  for (int i = 0; i < k; ++i) {
    const auto& v = clip.views[static_cast<std::size_t>(i)];
    const auto& cam = clip.cameras[static_cast<std::size_t>(i)];
    ViewSample s;
    s.x1 = vae_encode(vae, rgb_to_unit(v.rgb));
    const ControlFeatures f = encode_controls(v.edges, v.depth, vae);
    s.f_s = f.sketch;
    s.f_d = f.depth;
    s.points = points.views[static_cast<std::size_t>(i)];
    s.rays = make_ray_grid(cam.intrinsics, cam.poses, clip.frames);
    s.style = clip.style_ids[static_cast<std::size_t>(i)];
    out.push_back(std::move(s));
  }
  return out;
}

Modality parse_modality(const std::string& name) {
  if (name == "both") return Modality::kBoth;
  if (name == "sketch") return Modality::kSketch;
  if (name == "depth") return Modality::kDepth;
  throw ConfigError("modality must be both, sketch or depth, got '" + name + "'");
}

std::vector<SampleView> sampling_views(const ClipSample& clip, Modality modality) {
  std::vector<SampleView> out;
  for (const auto& v : clip) {
    SampleView s;
    s.f_s = v.f_s;
    s.f_d = v.f_d;
    s.present_s = modality != Modality::kDepth;
    s.present_d = modality != Modality::kSketch;
    s.points = v.points;
    s.rays = v.rays;
    s.style = v.style;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

int stage_rank(const std::string& stage) {
  if (stage == "single") return 0;
  if (stage == "multi") return 1;
  if (stage == "hetero") return 2;
  throw ConfigError("unknown stage '" + stage + "'");
}

double scheduled_lr(const TrainSection& t, std::int64_t step) {
  const std::int64_t warm = std::min<std::int64_t>(t.warmup, t.steps);
  if (step < warm) return t.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = static_cast<double>(std::max<std::int64_t>(t.steps - warm, 1));
  const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
  return t.lr * (0.1 + 0.45 * (1.0 + std::cos(progress * 3.14159265358979323846)));
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot append to " + path.string());
  f << line << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.wvck", static_cast<long long>(step));
  return buf;
}

}  // namespace

int checkpoint_every(int steps) { return std::max(steps / 10, 50); }

TrainOutcome train_flow(const RunConfig& cfg, const std::vector<ClipSample>& clips, const fs::path& out,
                        const std::optional<fs::path>& resume) {
  cfg.validate();
  if (clips.empty()) throw ConfigError("train: no training clips");
  const TrainSection& t = cfg.train;
  FlowModel model(cfg.model_config(), t.seed);
  AdamW opt({t.lr, 0.9, 0.999, 1e-8, t.weight_decay});
  std::int64_t start = 0;

  if (resume) {
    const Checkpoint ck = load_checkpoint(*resume);
    const RunConfig prev = checkpoint_config(ck, "flow", resume->string());
    const json a = run_config_to_json(prev), b = run_config_to_json(cfg);
    if (a["model"] != b["model"] || a["vae"]["channels"] != b["vae"]["channels"] || a["data"]["T"] != b["data"]["T"] ||
        a["data"]["H"] != b["data"]["H"] || a["data"]["W"] != b["data"]["W"])
      throw ConfigError("checkpoint " + resume->string() + " has an incompatible model configuration");
    const std::string prev_stage = ck.header.at("stage").get<std::string>();
    model.params().load_values(strip_prefix(ck.tensors, kParamPrefix), true);
    if (prev_stage == t.stage) {
      start = ck.header.at("step").get<std::int64_t>();
      opt.load_state(strip_prefix(ck.tensors, kAdamPrefix), ck.header.at("adam_steps").get<std::int64_t>());
    } else if (stage_rank(t.stage) != stage_rank(prev_stage) + 1) {
      throw ConfigError("stage " + t.stage + " cannot start from a " + prev_stage + "-stage checkpoint");
    }
  }

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const fs::path log = out / "train_log.ndjson";
  if (start == 0) write_text(log, "");

  // Single-view stage trains on every view as its own one-view clip.
  std::vector<ClipSample> items;
  if (t.stage == "single") {
    for (const auto& c : clips)
      for (const auto& v : c) items.push_back({v});
  } else {
    items = clips;
  }
  FlowTrainConfig fc;
  fc.lambda_wav = t.lambda_wav;
  fc.p_hetero = t.stage == "hetero" ? t.p_hetero : 0.0;
  fc.drop_depth_p = t.drop_depth_p;
  fc.drop_sketch_p = t.drop_sketch_p;
  fc.random_gauge = t.random_gauge;

  TrainOutcome result;
  result.final_step = start;
  const int every = checkpoint_every(t.steps);
  const json config_echo = run_config_to_json(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t s = start; s < t.steps; ++s) {
    const double lr = scheduled_lr(t, s);
    opt.set_lr(lr);
    RandomStream pick(mix64(t.seed, static_cast<std::uint64_t>(s)), 0xBA7C4);
    std::vector<const ClipSample*> batch;
    for (int b = 0; b < t.batch; ++b) batch.push_back(&items[pick.below(items.size())]);
    const LossReport r = train_step(model, opt, batch, fc, t.seed, s);
    result.losses.push_back(r);
    append_line(log, json{{"step", s + 1},
                          {"flow_loss", r.flow},
                          {"wavelet_loss", r.wavelet},
                          {"total", r.total},
                          {"lr", lr},
                          {"seconds", seconds_since(t0)},
                          {"stage", t.stage},
                          {"grad_norm", r.grad_norm},
                          {"heterogeneous", r.heterogeneous}}
                         .dump());
    result.final_step = s + 1;
    if ((s + 1) % every == 0 || s + 1 == t.steps) {
      std::map<std::string, Tensor> tensors = with_prefix(model.params().to_tensors(), kParamPrefix);
      for (auto& [k, v] : with_prefix(opt.state_tensors(), kAdamPrefix)) tensors.emplace(k, std::move(v));
      const std::string name = checkpoint_name(s + 1);
      save_checkpoint(out / name,
                      {{"kind", "flow"}, {"step", s + 1}, {"stage", t.stage}, {"adam_steps", opt.steps()}, {"config", config_echo}},
                      tensors);
      write_text(out / "latest.json", json{{"checkpoint", name}, {"step", s + 1}, {"stage", t.stage}}.dump(2) + "\n");
      result.last_checkpoint = out / name;
    }
  }
  if (result.last_checkpoint.empty() && t.steps == start && resume) result.last_checkpoint = *resume;
  return result;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

json input_entry(const fs::path& p) { return {{"path", p.string()}, {"sha256", file_sha256(p)}}; }

void write_provenance(const fs::path& path, const std::string& command, const json& args, const json& config,
                      const json& seeds, const json& inputs, const std::vector<fs::path>& outputs) {
  json outs = json::object();
  for (const auto& o : outputs) outs[o.filename().string()] = file_sha256(o);
  json p = {{"command", command}, {"args", args},     {"config", config},
            {"seeds", seeds},     {"inputs", inputs}, {"outputs", outs}};
  write_text(path, p.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<ClipBundle> load_clips(const fs::path& data, int limit) {
  const int available = dataset_clip_count(data);
  const int n = std::min(limit, available);
  if (n < 1) throw ConfigError("dataset " + data.string() + " has no clips");
  std::vector<ClipBundle> out;
  for (int i = 0; i < n; ++i) out.push_back(load_clip(clip_dir(data, i)));
  return out;
}

ClipBundle load_clip_checked(const fs::path& data, int clip) {
  if (clip < 0) throw ConfigError("clip index must be >= 0");
  const fs::path dir = clip_dir(data, clip);
  if (!fs::exists(dir / "manifest.json")) throw IoError("clip " + std::to_string(clip) + " not found under " + data.string());
  return load_clip(dir);
}

std::string view_file(const char* stem, int view) { return std::string(stem) + "_v" + std::to_string(view) + ".wvt"; }

void check_clip_matches(const ClipBundle& clip, const RunConfig& cfg) {
  if (clip.frames != cfg.data.T || clip.height != cfg.data.H || clip.width != cfg.data.W)
    throw ConfigError("dataset clip extents differ from the configured data.T/H/W");
  if (clip.num_views() > cfg.model.views) throw ConfigError("dataset clip has more views than model.views");
}

void check_vae_matches(const Vae& vae, const RunConfig& cfg) {
  if (vae.config().channels != cfg.vae.channels)
    throw ConfigError("VAE checkpoint has " + std::to_string(vae.config().channels) + " latent channels, config expects " +
                      std::to_string(cfg.vae.channels));
}

}  // namespace

void cmd_gen_data(const fs::path& config, const fs::path& out, std::uint64_t seed) {
  const RunConfig cfg = load_run_config(config);
  generate_dataset(cfg.data_config(), seed, out);
  write_provenance(out / "provenance.json", "gen-data", {{"config", config.string()}, {"out", out.string()}},
                   run_config_to_json(cfg), {{"seed", seed}}, {{"config", input_entry(config)}}, {out / "manifest.json"});
}

void cmd_train_vae(const fs::path& config, const fs::path& data, const fs::path& out) {
  const RunConfig cfg = load_run_config(config);
  std::vector<Tensor> videos;
  for (const auto& clip : load_clips(data, cfg.data.clips)) {
    check_clip_matches(clip, cfg);
    for (const auto& v : clip.views) videos.push_back(rgb_to_unit(v.rgb));
  }
  ensure_dir(out);
  const fs::path log = out / "train_log.ndjson";
  write_text(log, "");
  Vae vae(cfg.vae_config(), cfg.vae.seed);
  VaeTrainConfig tc;
  tc.lr = cfg.vae.lr;
  tc.steps = cfg.vae.steps;
  tc.batch = cfg.vae.batch;
  tc.pca_init = cfg.vae.pca_init;
  RandomStream stream(cfg.vae.seed, 0x7A1);
  const auto t0 = std::chrono::steady_clock::now();
  train_vae(vae, videos, tc, stream, [&](const VaeStepLog& s) {
    append_line(log, json{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"seconds", seconds_since(t0)}}.dump());
  });
  const json echo = run_config_to_json(cfg);
  save_checkpoint(out / "vae.wvck", {{"kind", "vae"}, {"step", cfg.vae.steps}, {"stage", "vae"}, {"config", echo}},
                  with_prefix(vae.params().to_tensors(), kParamPrefix));
  write_provenance(out / "provenance.json", "train-vae",
                   {{"config", config.string()}, {"data", data.string()}, {"out", out.string()}}, echo,
                   {{"vae.seed", cfg.vae.seed}},
                   {{"config", input_entry(config)}, {"data_manifest", input_entry(data / "manifest.json")}},
                   {out / "vae.wvck", log});
}

TrainOutcome cmd_train(const fs::path& config, const fs::path& data, const fs::path& vae_path, const fs::path& out,
                       const std::optional<fs::path>& resume, const std::optional<std::string>& stage) {
  RunConfig cfg = load_run_config(config);
  if (stage) {
    cfg.train.stage = *stage;
    cfg.validate();
  }
  const Vae vae = load_vae(vae_path);
  check_vae_matches(vae, cfg);
  std::vector<ClipSample> clips;
  for (const auto& clip : load_clips(data, cfg.data.clips)) {
    check_clip_matches(clip, cfg);
    clips.push_back(prepare_clip(clip, vae));
  }
  const TrainOutcome r = train_flow(cfg, clips, out, resume);
  json inputs = {{"config", input_entry(config)},
                 {"vae", input_entry(vae_path)},
                 {"data_manifest", input_entry(data / "manifest.json")}};
  if (resume) inputs["resume"] = input_entry(*resume);
  std::vector<fs::path> outputs = {out / "train_log.ndjson"};
  if (!r.last_checkpoint.empty() && r.last_checkpoint.parent_path() == out) outputs.push_back(r.last_checkpoint);
  write_provenance(out / "provenance.json", "train",
                   {{"config", config.string()},
                    {"data", data.string()},
                    {"vae", vae_path.string()},
                    {"out", out.string()},
                    {"resume", resume ? resume->string() : ""},
                    {"stage", cfg.train.stage}},
                   run_config_to_json(cfg), {{"train.seed", cfg.train.seed}}, inputs, outputs);
  return r;
}

namespace {

struct SamplingContext {
  LoadedModel model;
  Vae vae;
  ClipSample clip;
  int steps;
  std::uint64_t seed;       // as requested
  std::uint64_t clip_seed;  // noise seed, mixed with the clip index
};

SamplingContext sampling_context(const fs::path& ckpt, const fs::path& vae_path, const fs::path& data, int clip,
                                 const SampleOptions& opt) {
  LoadedModel lm = load_flow_model(ckpt);
  Vae vae = load_vae(vae_path);
  check_vae_matches(vae, lm.config);
  const ClipBundle bundle = load_clip_checked(data, clip);
  check_clip_matches(bundle, lm.config);
  ClipSample prepared = prepare_clip(bundle, vae);
  const int steps = opt.steps.value_or(lm.config.sample.steps);
  if (steps < 1) throw ConfigError("sampling steps must be >= 1");
  const std::uint64_t seed = opt.seed.value_or(lm.config.sample.seed);
  return {std::move(lm), std::move(vae), std::move(prepared), steps, seed,
          mix64(seed, static_cast<std::uint64_t>(clip))};
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kBoth: return "both";
    case Modality::kSketch: return "sketch";
    case Modality::kDepth: return "depth";
  }
  return "?";
}

}  // namespace

void cmd_sample(const fs::path& ckpt, const fs::path& vae_path, const fs::path& data, int clip, const fs::path& out,
                const SampleOptions& opt) {
  SamplingContext ctx = sampling_context(ckpt, vae_path, data, clip, opt);
  const auto latents = euler_sample(*ctx.model.model, sampling_views(ctx.clip, opt.modality), ctx.steps, ctx.clip_seed);
  ensure_dir(out);
  std::vector<fs::path> outputs;
  for (std::size_t k = 0; k < latents.size(); ++k) {
    const int v = static_cast<int>(k);
    write_tensor(unit_to_rgb(vae_decode(ctx.vae, latents[k])), out / view_file("rgb", v));
    write_tensor(latents[k], out / view_file("latent", v));
    outputs.push_back(out / view_file("rgb", v));
    outputs.push_back(out / view_file("latent", v));
  }
  write_provenance(out / "provenance.json", "sample",
                   {{"ckpt", ckpt.string()},
                    {"vae", vae_path.string()},
                    {"data", data.string()},
                    {"clip", clip},
                    {"steps", ctx.steps},
                    {"modality", modality_name(opt.modality)},
                    {"out", out.string()}},
                   run_config_to_json(ctx.model.config), {{"seed", ctx.seed}, {"noise_seed", ctx.clip_seed}},
                   {{"ckpt", input_entry(ckpt)},
                    {"vae", input_entry(vae_path)},
                    {"clip_manifest", input_entry(clip_dir(data, clip) / "manifest.json")}},
                   outputs);
}

void cmd_extend(const fs::path& ckpt, const fs::path& vae_path, const fs::path& data, int clip,
                const std::vector<int>& given, int target, const fs::path& out, const std::optional<fs::path>& given_from,
                const SampleOptions& opt) {
  SamplingContext ctx = sampling_context(ckpt, vae_path, data, clip, opt);
  const int k = static_cast<int>(ctx.clip.size());
  if (given.empty()) throw ConfigError("extend: --given must list at least one view");
  std::set<int> given_set(given.begin(), given.end());
  if (given_set.size() != given.size()) throw ConfigError("extend: --given lists a view twice");
  for (int v : given_set)
    if (v < 0 || v >= k) throw ConfigError("extend: given view " + std::to_string(v) + " outside [0," + std::to_string(k) + ")");
  if (target < 0 || target >= k) throw ConfigError("extend: target view outside [0," + std::to_string(k) + ")");
  if (given_set.count(target) != 0) throw ConfigError("extend: target view is also given");

  const auto all = sampling_views(ctx.clip, opt.modality);
  std::vector<int> order(given_set.begin(), given_set.end());
  order.push_back(target);
  std::sort(order.begin(), order.end());
  std::vector<SampleView> views;
  int target_pos = 0;
  std::map<int, std::vector<std::byte>> given_rgb;
  json inputs = {{"ckpt", input_entry(ckpt)},
                 {"vae", input_entry(vae_path)},
                 {"clip_manifest", input_entry(clip_dir(data, clip) / "manifest.json")}};
  for (int v : order) {
    SampleView sv = all[static_cast<std::size_t>(v)];
    if (v == target) {
      target_pos = static_cast<int>(views.size());
    } else if (given_from) {
      const fs::path lat = *given_from / view_file("latent", v), rgb = *given_from / view_file("rgb", v);
      sv.clean = read_tensor(lat);
      given_rgb[v] = read_file(rgb);
      inputs["given_latent_v" + std::to_string(v)] = input_entry(lat);
      inputs["given_rgb_v" + std::to_string(v)] = input_entry(rgb);
    } else {
      sv.clean = ctx.clip[static_cast<std::size_t>(v)].x1;
      const fs::path rgb = clip_dir(data, clip) / view_file("rgb", v);
      given_rgb[v] = read_file(rgb);
      inputs["given_rgb_v" + std::to_string(v)] = input_entry(rgb);
    }
    views.push_back(std::move(sv));
  }
  const Tensor generated = autoregressive_extend(*ctx.model.model, views, target_pos, ctx.steps, ctx.clip_seed);

  ensure_dir(out);
  std::vector<fs::path> outputs;
  for (const auto& [v, bytes] : given_rgb) {
    write_file(out / view_file("rgb", v), bytes);
    write_tensor(*views[static_cast<std::size_t>(std::find(order.begin(), order.end(), v) - order.begin())].clean,
                 out / view_file("latent", v));
    outputs.push_back(out / view_file("rgb", v));
    outputs.push_back(out / view_file("latent", v));
  }
  write_tensor(unit_to_rgb(vae_decode(ctx.vae, generated)), out / view_file("rgb", target));
  write_tensor(generated, out / view_file("latent", target));
  outputs.push_back(out / view_file("rgb", target));
  outputs.push_back(out / view_file("latent", target));
  write_provenance(out / "provenance.json", "extend",
                   {{"ckpt", ckpt.string()},
                    {"vae", vae_path.string()},
                    {"data", data.string()},
                    {"clip", clip},
                    {"given", given},
                    {"target", target},
                    {"given_from", given_from ? given_from->string() : ""},
                    {"steps", ctx.steps},
                    {"modality", modality_name(opt.modality)},
                    {"out", out.string()}},
                   run_config_to_json(ctx.model.config), {{"seed", ctx.seed}, {"noise_seed", ctx.clip_seed}}, inputs,
                   outputs);
}

namespace {

int clip_index_of(const fs::path& dir) {
  const std::string name = dir.filename().string();
  if (name.rfind("clip_", 0) != 0) return -1;
  try {
    return std::stoi(name.substr(5));
  } catch (const std::exception&) {
    return -1;
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

json cmd_eval(const fs::path& pred, const fs::path& data, const std::vector<std::string>& metrics, const fs::path& out) {
  std::set<std::string> want;
  for (const auto& m : metrics) {
    if (m != "psnr" && m != "edge_f1" && m != "xvc" && m != "si_rmse")
      throw ConfigError("unknown metric '" + m + "' (expected psnr, edge_f1, xvc, si_rmse)");
    want.insert(m);
  }
  if (want.empty()) throw ConfigError("eval: no metrics requested");
  if (!fs::is_directory(pred)) throw IoError("prediction directory not found: " + pred.string());

  std::vector<std::pair<int, fs::path>> dirs;
  if (clip_index_of(pred) >= 0 && fs::exists(pred / view_file("rgb", 0))) {
    dirs.emplace_back(clip_index_of(pred), pred);
  } else {
    for (const auto& e : fs::directory_iterator(pred))
      if (e.is_directory() && clip_index_of(e.path()) >= 0) dirs.emplace_back(clip_index_of(e.path()), e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no clip_<index> prediction directories under " + pred.string());

  json clips = json::array();
  std::vector<double> all_psnr, all_f1, all_f1_sketch, all_xvc, all_si;
  int views_total = 0;
  for (const auto& [index, dir] : dirs) {
    const ClipBundle oracle = load_clip_checked(data, index);
    std::vector<int> present;
    std::vector<Tensor> videos, depths;
    std::vector<CameraTrack> cams;
    std::vector<double> psnrs, f1s, f1s_sketch, sis;
    for (int v = 0; v < oracle.num_views(); ++v) {
      const fs::path f = dir / view_file("rgb", v);
      if (!fs::exists(f)) continue;
      const Tensor rgb = read_tensor(f);
      const auto& o = oracle.views[static_cast<std::size_t>(v)];
      if (rgb.shape() != o.rgb.shape())
        throw ConfigError("prediction " + f.string() + " has shape " + shape_str(rgb.shape()) + ", oracle " +
                          shape_str(o.rgb.shape()));
      present.push_back(v);
      const Tensor unit = rgb_to_unit(rgb);
      if (want.count("psnr")) psnrs.push_back(psnr(rgb, o.rgb));
      if (want.count("edge_f1")) {
        const Tensor edges = sobel_edges(unit);
        f1s.push_back(edge_f1(edges, sobel_edges(rgb_to_unit(o.rgb))));
        f1s_sketch.push_back(edge_f1(edges, o.edges));
      }
      if (want.count("si_rmse")) {
        const fs::path df = dir / view_file("depth", v);
        if (!fs::exists(df)) throw ConfigError("si_rmse needs predicted depth " + df.string());
        std::vector<std::uint8_t> mask;
        for (double d : o.depth.to_f64()) mask.push_back(d < kDepthSentinel ? 1 : 0);
        sis.push_back(si_rmse(read_tensor(df), o.depth, mask));
      }
      videos.push_back(unit);
      depths.push_back(o.depth);
      cams.push_back(oracle.cameras[static_cast<std::size_t>(v)]);
    }
    if (present.empty()) throw IoError("no rgb_v<k>.wvt predictions in " + dir.string());
    views_total += static_cast<int>(present.size());
    json c = {{"clip", index}, {"views", present}};
    if (want.count("psnr")) {
      c["psnr_db"] = mean(psnrs);
      all_psnr.push_back(mean(psnrs));
    }
    if (want.count("edge_f1")) {
      c["edge_f1"] = mean(f1s);
      c["edge_f1_sketch"] = mean(f1s_sketch);
      all_f1.push_back(mean(f1s));
      all_f1_sketch.push_back(mean(f1s_sketch));
    }
    if (want.count("si_rmse")) {
      c["si_rmse"] = mean(sis);
      all_si.push_back(mean(sis));
    }
    if (want.count("xvc") && present.size() >= 2) {
      try {
        c["xvc"] = xvc(videos, depths, cams);
        all_xvc.push_back(c["xvc"].get<double>());
      } catch (const NumericError&) {
        c["xvc"] = nullptr;  // no co-visible pixels between the present views
      }
    }
    clips.push_back(c);
  }
  json agg = json::object();
  if (want.count("psnr")) agg["psnr_db"] = mean(all_psnr);
  if (want.count("edge_f1")) {
    agg["edge_f1"] = mean(all_f1);
    agg["edge_f1_sketch"] = mean(all_f1_sketch);
  }
  if (want.count("si_rmse")) agg["si_rmse"] = mean(all_si);
  if (want.count("xvc")) agg["xvc"] = all_xvc.empty() ? json(nullptr) : json(mean(all_xvc));
  json report = {{"clips", clips},
                 {"aggregate", agg},
                 {"counts", {{"clips", clips.size()}, {"views", views_total}, {"xvc_clips", all_xvc.size()}}}};
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  write_text(out, report.dump(2) + "\n");
  fs::path prov = out;
  prov.replace_extension(".provenance.json");
  write_provenance(prov, "eval", {{"pred", pred.string()}, {"data", data.string()}, {"metrics", metrics}, {"out", out.string()}},
                   nullptr, json::object(), {{"data_manifest", input_entry(data / "manifest.json")}}, {out});
  return report;
}

}  // namespace wv
