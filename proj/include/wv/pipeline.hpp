#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wv/backbone.hpp"
#include "wv/flow.hpp"
#include "wv/latents.hpp"
#include "wv/scene.hpp"

namespace wv {

// ---------------------------------------------------------------------------
// Run configuration

struct DataSection {
  std::string root = "data";
  int clips = 8;
  int K = 3;
  int T = 16, H = 64, W = 64;
  int styles = 4;
};

struct VaeSection {
  int channels = 8;
  double lr = 1e-4;
  int steps = 2000;
  int batch = 4;
  int res_hidden = 32;
  bool pca_init = true;
  std::uint64_t seed = 0;
};

struct TrainSection {
  std::string stage = "single";  // single | multi | hetero
  double lr = 1e-4;
  double weight_decay = 0.01;
  int steps = 1000;
  int batch = 1;
  double p_hetero = 0.5;
  double lambda_wav = 0.1;
  double drop_depth_p = 0.1;
  double drop_sketch_p = 0.1;
  bool random_gauge = true;
  int warmup = 50;  // linear warmup steps, then cosine decay to 10% of lr
  std::uint64_t seed = 0;
};

struct SampleSection {
  int steps = 30;
  std::uint64_t seed = 0;
};

/// Latent channels and extents of `model` are derived from the data and vae sections.
struct RunConfig {
  DataSection data;
  VaeSection vae;
  ModelConfig model;
  TrainSection train;
  SampleSection sample;

  void validate() const;
  DataConfig data_config() const;
  VaeConfig vae_config() const;
  ModelConfig model_config() const;
};

/// Merges `j` over the defaults. Unknown sections or keys and wrong value types raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
/// Effective configuration with every field present.
nlohmann::json run_config_to_json(const RunConfig& cfg);
/// Missing file -> IoError; malformed or invalid content -> ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// WVCK checkpoints: "WVCK", u64 LE header length, JSON header, raw payloads.

struct Checkpoint {
  nlohmann::json header;  // includes format_version and the tensor table
  std::map<std::string, Tensor> tensors;
};

inline constexpr int kCheckpointVersion = 1;

/// `meta` fields are copied into the header next to format_version and tensors.
std::vector<std::byte> encode_checkpoint(const nlohmann::json& meta, const std::map<std::string, Tensor>& tensors);
Checkpoint decode_checkpoint(const std::vector<std::byte>& bytes, const std::string& origin = "<memory>");
/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::map<std::string, Tensor>& tensors);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(const std::vector<std::byte>& bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Vae with the configuration echoed in a VAE checkpoint.
Vae load_vae(const std::filesystem::path& path);
struct LoadedModel {
  std::unique_ptr<FlowModel> model;
  RunConfig config;  // configuration echoed in the checkpoint
  Checkpoint checkpoint;
};
/// FlowModel with the configuration echoed in a flow checkpoint.
LoadedModel load_flow_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset access

nlohmann::json read_dataset_manifest(const std::filesystem::path& root);
int dataset_clip_count(const std::filesystem::path& root);

/// Latents, controls and geometry of every view of a clip.
ClipSample prepare_clip(const ClipBundle& clip, const Vae& vae);

enum class Modality { kBoth, kSketch, kDepth };
Modality parse_modality(const std::string& name);
std::vector<SampleView> sampling_views(const ClipSample& clip, Modality modality);

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
  std::int64_t final_step = 0;
  std::filesystem::path last_checkpoint;
  std::vector<LossReport> losses;  // steps run by this invocation
};

/// Stage-aware flow training loop; see cmd_train.
TrainOutcome train_flow(const RunConfig& cfg, const std::vector<ClipSample>& clips, const std::filesystem::path& out,
                        const std::optional<std::filesystem::path>& resume);

/// Checkpoint cadence: every max(steps / 10, 50) steps plus the final step.
int checkpoint_every(int steps);

// ---------------------------------------------------------------------------
// Commands. Each writes provenance.json next to its artifacts.

void cmd_gen_data(const std::filesystem::path& config, const std::filesystem::path& out, std::uint64_t seed);

/// Trains on every clip of the dataset; writes out/vae.wvck and out/train_log.ndjson.
void cmd_train_vae(const std::filesystem::path& config, const std::filesystem::path& data,
                   const std::filesystem::path& out);

/// Writes out/ckpt_<step>.wvck, out/latest.json and out/train_log.ndjson.
/// `resume` from a checkpoint of the same stage continues its step counter and
/// optimizer state; from the preceding stage (single -> multi -> hetero) it
/// loads the weights and starts the new stage at step 0.
TrainOutcome cmd_train(const std::filesystem::path& config, const std::filesystem::path& data,
                       const std::filesystem::path& vae, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& resume,
                       const std::optional<std::string>& stage = std::nullopt);

struct SampleOptions {
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  Modality modality = Modality::kBoth;
};

/// Writes out/rgb_v<k>.wvt (uint8) and out/latent_v<k>.wvt for every view.
void cmd_sample(const std::filesystem::path& ckpt, const std::filesystem::path& vae, const std::filesystem::path& data,
                int clip, const std::filesystem::path& out, const SampleOptions& opt = {});

/// Generates view `target` conditioned on the `given` views. Given latents come
/// from `given_from` (a sample or extend output) when set, else from encoding the
/// dataset views. Given views are copied byte-for-byte into `out`.
void cmd_extend(const std::filesystem::path& ckpt, const std::filesystem::path& vae, const std::filesystem::path& data,
                int clip, const std::vector<int>& given, int target, const std::filesystem::path& out,
                const std::optional<std::filesystem::path>& given_from = std::nullopt, const SampleOptions& opt = {});

/// `pred` holds clip_<index> directories (or is one). Metrics: psnr, edge_f1, xvc, si_rmse.
/// edge_f1 compares Sobel edges of the prediction with Sobel edges of the oracle
/// render; edge_f1_sketch (reported alongside) compares them with the
/// conditioning sketch.
nlohmann::json cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& data,
                        const std::vector<std::string>& metrics, const std::filesystem::path& out);

}  // namespace wv
