#include "shades/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "shades/checkpoint.hpp"
#include "shades/error.hpp"
#include "shades/evaluation.hpp"
#include "shades/image_io.hpp"
#include "shades/inference.hpp"
#include "shades/runtime.hpp"
#include "shades/selftest.hpp"
#include "shades/settings.hpp"
#include "shades/trainer.hpp"

namespace fs = std::filesystem;

namespace shades {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '\r', ' ');
  return text;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=" << one_line(message) << std::endl;
}

Settings load_settings(const std::optional<fs::path>& config_path) {
  return config_path ? Settings::load(*config_path) : Settings{};
}

RunManifest make_manifest(const std::string& subcommand, const KeyValueFile& config, const std::vector<fs::path>& inputs) {
  return {subcommand, config, content_hash(inputs), RunManifest::now_utc()};
}

struct PreprocessArgs {
  fs::path data;
  std::optional<fs::path> camera;
  std::optional<fs::path> config;
};

int run_preprocess(const PreprocessArgs& a) {
  const auto settings = load_settings(a.config);
  std::optional<CameraModel> camera;
  if (a.camera) camera = CameraModel::load(*a.camera);
  FrameLoader loader(settings.ingest, camera);
  const int computed = precompute_priors(a.data, loader, settings.specular);
  std::cout << "computed " << computed << " priors\n";
  return kExitOk;
}

struct TrainArgs {
  fs::path data;
  fs::path camera;
  std::optional<fs::path> config;
  fs::path out;
};

int run_train(const TrainArgs& a) {
  const auto settings = load_settings(a.config);
  const auto camera = CameraModel::load(a.camera);
  DiskDataset dataset(a.data, settings.ingest, camera, settings.specular);
  fs::create_directories(a.out);
  const auto resolved = settings.to_key_values();
  write_text_atomic(a.out / "config.resolved.txt", resolved.to_string());
  std::vector<fs::path> inputs{a.data, a.camera};
  if (a.config) inputs.push_back(*a.config);
  make_manifest("train", resolved, inputs).write(a.out / "manifest.json");

  auto result = train_loop(dataset, settings.network, settings.train, a.out);
  if (!result.records.empty()) {
    std::cout << "steps " << result.records.size() << " first_total " << result.records.front().total
              << " last_total " << result.records.back().total << "\n";
  }
  if (result.final_checkpoint) std::cout << "checkpoint " << result.final_checkpoint->string() << "\n";
  return kExitOk;
}

struct InferArgs {
  fs::path checkpoint;
  fs::path input;
  fs::path out;
  bool pose_pairs = false;
  std::optional<fs::path> camera;
  std::optional<fs::path> config;
};

int run_infer(const InferArgs& a) {
  const auto settings = load_settings(a.config);
  auto loaded = load_checkpoint(a.checkpoint);
  const auto& nets = *loaded.networks;
  IngestConfig ingest = settings.ingest;
  ingest.out_size = nets.config.image_size;
  std::optional<CameraModel> camera;
  if (a.camera) camera = CameraModel::load(*a.camera);
  FrameLoader loader(ingest, camera);

  const auto files = list_image_files(a.input);
  if (files.empty()) throw Error(ErrorKind::InvalidInput, "no images in " + a.input.string());
  fs::create_directories(a.out);
  std::optional<Frame> next = loader.load(files[0], "input", 0);
  for (std::size_t i = 0; i < files.size(); ++i) {
    Frame frame = *next;
    next.reset();
    if (i + 1 < files.size()) next = loader.load(files[i + 1], "input", static_cast<int>(i + 1));
    auto result = infer(nets, frame, a.pose_pairs ? next : std::nullopt, settings.inference);
    write_inference_outputs(a.out, files[i].stem().string(), frame, result, nets.config.s_max);
  }

  KeyValueFile config = settings.to_key_values();
  config.set("checkpoint_step", std::to_string(loaded.info.step));
  std::vector<fs::path> inputs{a.checkpoint, a.input};
  if (a.camera) inputs.push_back(*a.camera);
  if (a.config) inputs.push_back(*a.config);
  make_manifest("infer", config, inputs).write(a.out / "manifest.json");
  std::cout << "inferred " << files.size() << " frames\n";
  return kExitOk;
}

struct EvalArgs {
  fs::path pred;
  std::optional<fs::path> gt;
  std::optional<fs::path> masks;
  fs::path out;
  std::optional<fs::path> config;
};

int run_eval(const EvalArgs& a) {
  const auto settings = load_settings(a.config);
  const auto report = evaluate_directory(a.pred, a.gt, a.masks, settings.ssm);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_text_atomic(a.out, report.to_csv());

  KeyValueFile config;
  settings.ssm.write(config);
  std::vector<fs::path> inputs{a.pred};
  if (a.gt) inputs.push_back(*a.gt);
  if (a.masks) inputs.push_back(*a.masks);
  if (a.config) inputs.push_back(*a.config);
  auto manifest_path = a.out;
  manifest_path.replace_extension(".manifest.json");
  make_manifest("eval", config, inputs).write(manifest_path);
  std::cout << "evaluated " << report.images.size() << " images\n";
  return kExitOk;
}

int run_panels(const fs::path& results, const fs::path& out) {
  const int written = export_panels(results, out);
  make_manifest("panels", KeyValueFile{}, {results}).write(out / "manifest.json");
  std::cout << "wrote " << written << " panels\n";
  return kExitOk;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Self-supervised monocular depth with a non-Lambertian image decomposition.", "shades"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Compute inpainted frames and highlight masks next to each sequence");
  pre_cmd->add_option("--data", pre.data, "Sequence directory, or a directory of sequences")->required();
  pre_cmd->add_option("--camera", pre.camera, "Camera intrinsics (key=value); enables undistortion");
  pre_cmd->add_option("--config", pre.config, "Settings file (key=value)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train depth, pose and decomposition networks");
  train_cmd->add_option("--data", train.data, "Sequence directory, or a directory of sequences")->required();
  train_cmd->add_option("--camera", train.camera, "Camera intrinsics of the raw frames (key=value)")->required();
  train_cmd->add_option("--config", train.config, "Settings file (key=value)");
  train_cmd->add_option("--out", train.out, "Output directory")->required();

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Predict depth, albedo, shading and highlight masks");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--input", inf.input, "Directory of frames")->required();
  infer_cmd->add_option("--out", inf.out, "Output directory")->required();
  infer_cmd->add_flag("--pose-pairs", inf.pose_pairs, "Estimate the pose from each frame to the next");
  infer_cmd->add_option("--camera", inf.camera, "Camera intrinsics (key=value); enables undistortion");
  infer_cmd->add_option("--config", inf.config, "Settings file (key=value)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Depth error metrics and the specularity surrounding metric");
  eval_cmd->add_option("--pred", ev.pred, "Directory written by infer, or of depth PNGs with JSON sidecars")->required();
  eval_cmd->add_option("--gt", ev.gt, "Ground-truth 16-bit depth PNGs (+ scale.json)");
  eval_cmd->add_option("--spec-masks", ev.masks, "Highlight masks used for the surrounding metric");
  eval_cmd->add_option("--out", ev.out, "CSV report path")->default_val("report.csv");
  eval_cmd->add_option("--config", ev.config, "Settings file (key=value)");

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the built-in fixture checks");

  fs::path panel_results;
  fs::path panel_out;
  auto* panels_cmd = app.add_subcommand("panels", "Export input/albedo/shading/depth/mask panels");
  panels_cmd->add_option("--results", panel_results, "Directory written by infer")->required();
  panels_cmd->add_option("--out", panel_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("Usage", e.what());
    return kExitUsage;
  }
  if (eval_cmd->parsed() && !ev.gt && !ev.masks) {
    report_error("Usage", "eval needs --gt and/or --spec-masks");
    return kExitUsage;
  }

  try {
    apply_execution_mode();
    if (pre_cmd->parsed()) return run_preprocess(pre);
    if (train_cmd->parsed()) return run_train(train);
    if (infer_cmd->parsed()) return run_infer(inf);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (panels_cmd->parsed()) return run_panels(panel_results, panel_out);
    if (selftest_cmd->parsed()) {
      const int failures = run_selftest(std::cout);
      if (failures == 0) return kExitOk;
      report_error("SelfTest", std::to_string(failures) + " checks failed");
      return kExitRuntime;
    }
  } catch (const Error& e) {
    report_error(std::string(to_string(e.kind())), e.message());
    return kExitRuntime;
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace shades
