// Command-line harness: synthesize data, train, evaluate stream ensembles,
// audit gradients, and export topology heatmaps.
//
// Exit codes: 0 success, 1 validation error, 2 numeric failure, 3 audit failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skelgcn/checkpoint.hpp"
#include "skelgcn/data.hpp"
#include "skelgcn/error.hpp"
#include "skelgcn/trainer.hpp"

namespace {

using namespace skelgcn;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitAudit = 3;

struct ConfigCliArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir, data, test, stream;
};

void add_config_options(CLI::App* cmd, ConfigCliArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key=value config file");
  cmd->add_option("-s,--set", args.overrides, "override, e.g. --set loss.lambda=0.3")
      ->take_all();
  cmd->add_option("-o,--out", args.out_dir, "output directory");
  cmd->add_option("--data", args.data, "training dataset (.skel)");
  cmd->add_option("--test", args.test, "held-out dataset (.skel)");
  cmd->add_option("--stream", args.stream, "modality: joint|bone|joint-motion|bone-motion");
}

RunConfig resolve_config(const ConfigCliArgs& args) {
  RunConfig config;
  if (!args.config_path.empty()) config = load_run_config(args.config_path);
  for (const std::string& entry : args.overrides) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + entry + "'");
    }
    apply_override(config, entry.substr(0, eq), entry.substr(eq + 1));
  }
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (!args.data.empty()) config.data_path = args.data;
  if (!args.test.empty()) config.test_path = args.test;
  if (!args.stream.empty()) config.stream = args.stream;
  return config;
}

int run_synth(const SynthConfig& synth, const std::string& out, const std::string& csv_dir) {
  const Dataset dataset = synth_generate(synth);
  save_dataset(out, dataset);
  std::cout << "wrote " << dataset.size() << " sequences (" << synth.classes << " classes, N="
            << synth.joints << ", T=" << synth.frames << ") to " << out << "\n";
  if (!csv_dir.empty()) {
    std::filesystem::create_directories(csv_dir);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      export_csv(dataset.sequences[i],
                 (std::filesystem::path(csv_dir) / ("seq" + std::to_string(i) + ".csv")).string());
    }
    std::cout << "wrote per-sequence CSVs to " << csv_dir << "\n";
  }
  return kExitOk;
}

int run_train(const RunConfig& config) {
  const TrainResult result = train(config);
  const MetricsRecord& last = result.history.back();
  std::cout << "trained " << config.epochs << " epochs; final train acc "
            << last.train_acc << ", test acc " << last.test_acc << "\n";
  std::cout << "best test acc " << result.best_test_acc << " at epoch " << result.best_epoch
            << "\n";
  std::cout << "checkpoints: " << result.best_checkpoint << ", " << result.final_checkpoint
            << "\n";
  std::cout << "metrics: " << result.metrics_path << "\n";
  return kExitOk;
}

int run_eval(const std::string& data_path, const std::vector<std::string>& checkpoints,
             const std::vector<std::string>& streams) {
  if (!streams.empty() && streams.size() != checkpoints.size()) {
    throw ConfigError("got " + std::to_string(streams.size()) + " streams for " +
                      std::to_string(checkpoints.size()) + " checkpoints");
  }
  const Dataset dataset = load_dataset(data_path);
  std::vector<std::vector<std::vector<double>>> all_scores;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    Checkpoint checkpoint = load_checkpoint(checkpoints[i]);
    if (!streams.empty()) checkpoint.stream = streams[i];
    all_scores.push_back(stream_scores(checkpoint, dataset));
    std::cout << "stream " << i << " (" << checkpoint.stream << "): top-1 "
              << top_k_accuracy(all_scores.back(), dataset, 1) << "\n";
  }
  const auto fused = fuse_scores(all_scores);
  const int topk = std::min(5, dataset.num_classes);
  std::cout << "fused: top-1 " << top_k_accuracy(fused, dataset, 1) << ", top-" << topk << " "
            << top_k_accuracy(fused, dataset, topk) << "\n";
  return kExitOk;
}

int run_gradcheck(const RunConfig& config, double tolerance) {
  const AuditReport report = gradcheck(config);
  std::printf("%-28s %10s %8s %12s\n", "group", "checked", "skipped", "max rel err");
  for (const AuditGroup& group : report.groups) {
    std::printf("%-28s %10lld %8lld %12.3e\n", group.name.c_str(),
                static_cast<long long>(group.checked),
                static_cast<long long>(group.skipped_kinks), group.max_rel_err);
  }
  std::printf("overall max rel err %.3e over %lld entries (tolerance %.1e)\n",
              report.max_rel_err, static_cast<long long>(report.total_checked), tolerance);
  if (report.max_rel_err > tolerance) {
    std::cout << "gradient audit FAILED\n";
    return kExitAudit;
  }
  std::cout << "gradient audit passed\n";
  return kExitOk;
}

int run_viz(const std::string& checkpoint, const std::string& data_path, int index,
            const std::string& out_dir) {
  const Dataset dataset = load_dataset(data_path);
  if (index < 0 || static_cast<std::size_t>(index) >= dataset.size()) {
    throw ConfigError("sequence index " + std::to_string(index) + " outside dataset of " +
                      std::to_string(dataset.size()));
  }
  const TopologyExport exported =
      export_topology(checkpoint, dataset.sequences[static_cast<std::size_t>(index)], out_dir);
  std::cout << "wrote " << exported.csv_path << ", " << exported.pgm_path << ", "
            << exported.memory_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototype-memory graph convolution trainer"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic skeleton dataset");
  SynthConfig synth;
  std::string synth_out, synth_csv_dir;
  synth_cmd->add_option("-o,--out", synth_out, "output .skel path")->required();
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--classes", synth.classes, "number of classes");
  synth_cmd->add_option("--per-class", synth.per_class, "sequences per class");
  synth_cmd->add_option("--joints", synth.joints, "joint count");
  synth_cmd->add_option("--frames", synth.frames, "frame count");
  synth_cmd->add_option("--similarity", synth.similarity, "inter-class similarity in [0,1]");
  synth_cmd->add_option("--subjects", synth.subjects, "distinct subject ids");
  synth_cmd->add_option("--noise", synth.noise, "coordinate noise level");
  synth_cmd->add_option("--csv-dir", synth_csv_dir, "also write one CSV per sequence");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigCliArgs train_args;
  add_config_options(train_cmd, train_args);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints with score fusion");
  std::string eval_data;
  std::vector<std::string> eval_checkpoints, eval_streams;
  eval_cmd->add_option("--data", eval_data, "dataset (.skel)")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoints, "checkpoint file(s)")
      ->required()
      ->take_all();
  eval_cmd->add_option("--streams", eval_streams, "modality per checkpoint")->take_all();

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  ConfigCliArgs gradcheck_args;
  double tolerance = 1e-4;
  add_config_options(gradcheck_cmd, gradcheck_args);
  gradcheck_cmd->add_option("--tolerance", tolerance, "max relative error allowed");

  // viz
  auto* viz_cmd = app.add_subcommand("viz", "export a topology heatmap");
  std::string viz_checkpoint, viz_data, viz_out;
  int viz_index = 0;
  viz_cmd->add_option("--checkpoint", viz_checkpoint, "checkpoint file")->required();
  viz_cmd->add_option("--data", viz_data, "dataset (.skel)")->required();
  viz_cmd->add_option("--index", viz_index, "sequence index");
  viz_cmd->add_option("-o,--out", viz_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, synth_out, synth_csv_dir);
    if (train_cmd->parsed()) return run_train(resolve_config(train_args));
    if (eval_cmd->parsed()) return run_eval(eval_data, eval_checkpoints, eval_streams);
    if (gradcheck_cmd->parsed()) return run_gradcheck(resolve_config(gradcheck_args), tolerance);
    if (viz_cmd->parsed()) return run_viz(viz_checkpoint, viz_data, viz_index, viz_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
