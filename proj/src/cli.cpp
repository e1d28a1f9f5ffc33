#include "scaleseg/cli.hpp"

#include <algorithm>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scaleseg/config.hpp"
#include "scaleseg/data.hpp"
#include "scaleseg/errors.hpp"
#include "scaleseg/eval.hpp"
#include "scaleseg/trainer.hpp"

namespace scaleseg {

namespace {

using nlohmann::json;

json loss_json(const IterationLog& entry) {
  json j;
  j["iter"] = entry.iter;
  j["lr"] = entry.lr;
  j["loss"] = entry.report.total;
  j["merged_loss"] = entry.report.merged_loss;
  if (entry.report.extra_supervision) {
    j["scale_losses"] = entry.report.per_scale_losses;
  }
  return j;
}

json eval_json(const EvalReport& report) {
  json per_class = json::array();
  for (const auto& iou : report.per_class_iou) {
    per_class.push_back(iou ? json(*iou) : json(nullptr));
  }
  return json{{"per_class_iou", per_class},
              {"mean_iou", report.mean_iou},
              {"pixels", report.pixels}};
}

void check_resume_compatible(const Checkpoint& ck, const TrainConfig& config,
                             int num_classes) {
  if (ck.params.scales != config.scales) {
    throw ValidationError("resume: checkpoint scales differ from config scales");
  }
  if (ck.config.merge_mode != config.merge_mode) {
    throw ValidationError("resume: checkpoint merge_mode differs from config");
  }
  if (ck.params.num_classes != num_classes) {
    throw ValidationError("resume: checkpoint has " +
                          std::to_string(ck.params.num_classes) +
                          " classes, config has " + std::to_string(num_classes));
  }
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& resume_path, std::ostream& out) {
  const RunConfig run = parse_config_file(config_path);
  std::vector<Sample> data;
  if (run.data_dir) {
    data = load_dataset_dir(*run.data_dir);
  } else {
    data = synth_generate(run.synth).train;
  }
  const int num_classes = run.synth.num_classes;
  NetworkParams params;
  OptimizerState state;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    check_resume_compatible(ck, run.train, num_classes);
    params = std::move(ck.params);
    state = std::move(ck.state);
  } else {
    params = init_params_for(run.train, num_classes);
    state = OptimizerState::zeros_like(params);
  }
  const TrainResult result =
      train_loop(std::move(params), std::move(state), data, run.train,
                 [&out](const IterationLog& e) { out << loss_json(e).dump() << '\n'; });
  save_checkpoint(out_path, result.params, result.state, run.train);
  out << json{{"checkpoint", out_path}, {"iterations", result.state.iteration}}.dump()
      << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const std::vector<Sample> samples = load_dataset_dir(data_dir);
  const ConfusionMatrix m = evaluate(ck.params, samples, ck.config.merge_mode);
  out << eval_json(mean_iou(m)).dump() << '\n';
  return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path,
              const std::string& out_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Tensor4 image = read_ppm(image_path);
  const LabelMap labels = predict(ck.params, image, ck.config.merge_mode);
  write_label_pgm(out_path, labels);
  out << json{{"prediction", out_path}, {"height", labels.h()}, {"width", labels.w()}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& out_dir, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Tensor4 image = read_ppm(image_path);
  const ForwardResult fwd =
      network_forward(ck.params, center_image(image), ck.config.merge_mode);
  const auto paths = export_attention_maps(fwd.weights(), ck.params.scales,
                                           image.h(), image.w(), out_dir);
  json files = json::array();
  for (const auto& p : paths) files.push_back(p.string());
  out << json{{"mode", merge_mode_name(ck.config.merge_mode)}, {"files", files}}.dump()
      << '\n';
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& mode_name,
                  std::ostream& out) {
  const MergeMode mode = parse_merge_mode(mode_name);
  const GradCheckInstance inst = make_grad_check_instance(seed, mode);
  TrainConfig config;
  config.scales = inst.params.scales;
  config.merge_mode = mode;
  config.extra_supervision = true;
  const Sample* batch[] = {&inst.sample};
  constexpr double kTolerance = 1e-4;
  const GradCheckReport r = grad_check(inst.params, batch, config, kTolerance);
  out << json{{"seed", seed},
              {"mode", merge_mode_name(mode)},
              {"max_rel_error", r.max_rel_error},
              {"worst", r.worst},
              {"checked", r.checked},
              {"tolerance", r.tolerance},
              {"passed", r.passed}}
             .dump()
      << '\n';
  return r.passed ? kExitOk : kExitValidation;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              std::ostream& out) {
  const RunConfig run = parse_config_file(config_path);
  const Dataset d = synth_generate(run.synth);
  const std::filesystem::path root(out_dir);
  write_dataset_dir(root / "train", d.train);
  write_dataset_dir(root / "val", d.val);
  out << json{{"train", d.train.size()},
              {"val", d.val.size()},
              {"out", root.string()}}
             .dump()
      << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Multi-scale segmentation with attention over scales"};
  app.require_subcommand(1);

  std::string config_path, out_path, resume_path, ckpt_path, data_dir, image_path,
      out_dir, mode_name = "attention";
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a network and write a checkpoint");
  train->add_option("--config", config_path, "key = value config file")->required();
  train->add_option("--out", out_path, "Checkpoint to write")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "Mean IOU of a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();

  auto* infer = app.add_subcommand("infer", "Write the predicted label map");
  infer->add_option("--ckpt", ckpt_path)->required();
  infer->add_option("--image", image_path, "Binary PPM image")->required();
  infer->add_option("--out", out_path, "PGM label map to write")->required();

  auto* vis = app.add_subcommand("visualize", "Export per-scale weight maps");
  vis->add_option("--ckpt", ckpt_path)->required();
  vis->add_option("--image", image_path, "Binary PPM image")->required();
  vis->add_option("--out-dir", out_dir)->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc->add_option("--seed", seed)->required();
  gc->add_option("--mode", mode_name, "attention, average or max");

  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset to disk");
  synth->add_option("--config", config_path)->required();
  synth->add_option("--out", out_dir)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (*train) return cmd_train(config_path, out_path, resume_path, out);
    if (*eval) return cmd_eval(ckpt_path, data_dir, out);
    if (*infer) return cmd_infer(ckpt_path, image_path, out_path, out);
    if (*vis) return cmd_visualize(ckpt_path, image_path, out_dir, out);
    if (*gc) return cmd_gradcheck(seed, mode_name, out);
    if (*synth) return cmd_synth(config_path, out_dir, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace scaleseg
