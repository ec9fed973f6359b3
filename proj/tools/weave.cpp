// weave: data generation, training, sampling, extension and evaluation.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "wv/errors.hpp"
#include "wv/pipeline.hpp"

namespace {

std::vector<int> parse_view_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw wv::ConfigError("invalid view index '" + item + "' in '" + text + "'");
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weave: multi-view controllable video generation"};
  app.require_subcommand(1);

  std::string config, out, data, vae, ckpt, resume, stage, given, given_from, pred, metrics = "psnr,edge_f1,xvc",
                                                                              modality = "both";
  std::uint64_t seed = 0;
  int clip = 0, target = 0, steps = 0;

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic multi-view dataset");
  gen->add_option("--config", config, "Run config JSON")->required();
  gen->add_option("--out", out, "Dataset root")->required();
  gen->add_option("--seed", seed, "Scene seed");

  auto* tvae = app.add_subcommand("train-vae", "Train the video autoencoder");
  tvae->add_option("--config", config)->required();
  tvae->add_option("--data", data)->required();
  tvae->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train", "Train the flow model for one stage");
  train->add_option("--config", config)->required();
  train->add_option("--data", data)->required();
  train->add_option("--vae", vae)->required();
  train->add_option("--out", out)->required();
  train->add_option("--resume", resume, "Checkpoint of the same or preceding stage");
  train->add_option("--stage", stage, "Override train.stage (single|multi|hetero)");

  auto add_sampling = [&](CLI::App* cmd) {
    cmd->add_option("--ckpt", ckpt)->required();
    cmd->add_option("--vae", vae)->required();
    cmd->add_option("--data", data)->required();
    cmd->add_option("--clip", clip)->required();
    cmd->add_option("--out", out)->required();
    cmd->add_option("--steps", steps, "Euler steps (default: sample.steps)");
    cmd->add_option("--seed", seed, "Sampling seed (default: sample.seed)");
    cmd->add_option("--modality", modality, "Control modalities: both|sketch|depth");
  };
  auto* sample = app.add_subcommand("sample", "Generate every view of a clip");
  add_sampling(sample);
  auto* extend = app.add_subcommand("extend", "Generate one view conditioned on given views");
  add_sampling(extend);
  extend->add_option("--given", given, "Comma-separated given views")->required();
  extend->add_option("--target", target, "View to generate")->required();
  extend->add_option("--given-from", given_from, "Directory holding rgb_v<k>/latent_v<k> of the given views");

  auto* eval = app.add_subcommand("eval", "Score predictions against the dataset");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--metrics", metrics, "Comma-separated: psnr,edge_f1,xvc,si_rmse");
  eval->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "weave: " << e.what() << "\n";
    return static_cast<int>(wv::ExitCode::kConfig);
  }

  try {
    wv::SampleOptions opt;
    opt.modality = wv::parse_modality(modality);
    if (sample->parsed() || extend->parsed()) {
      if (sample->count("--steps") + extend->count("--steps") > 0) opt.steps = steps;
      if (sample->count("--seed") + extend->count("--seed") > 0) opt.seed = seed;
    }
    if (gen->parsed()) {
      wv::cmd_gen_data(config, out, seed);
    } else if (tvae->parsed()) {
      wv::cmd_train_vae(config, data, out);
    } else if (train->parsed()) {
      const auto r = wv::cmd_train(config, data, vae, out, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume),
                                   stage.empty() ? std::nullopt : std::optional<std::string>(stage));
      std::cout << "trained to step " << r.final_step << ": " << r.last_checkpoint.string() << "\n";
    } else if (sample->parsed()) {
      wv::cmd_sample(ckpt, vae, data, clip, out, opt);
    } else if (extend->parsed()) {
      wv::cmd_extend(ckpt, vae, data, clip, parse_view_list(given), target, out,
                     given_from.empty() ? std::nullopt : std::optional<std::filesystem::path>(given_from), opt);
    } else if (eval->parsed()) {
      const auto report = wv::cmd_eval(pred, data, split(metrics), out);
      std::cout << report["aggregate"].dump() << "\n";
    }
  } catch (const wv::Error& e) {
    std::cerr << "weave: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "weave: " << e.what() << "\n";
    return static_cast<int>(wv::ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "weave: internal error: " << e.what() << "\n";
    return static_cast<int>(wv::ExitCode::kUsage);
  }
  return 0;
}
