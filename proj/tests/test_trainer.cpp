#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "skelgcn/error.hpp"
#include "skelgcn/trainer.hpp"

using namespace skelgcn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_config(const std::string& out_dir) {
  RunConfig config;
  config.synth.seed = 77;
  config.synth.classes = 2;
  config.synth.per_class = 8;
  config.synth.joints = 4;
  config.synth.frames = 6;
  config.synth.similarity = 0.2;
  config.backbone.widths = {6, 8};
  config.backbone.heads = 2;
  config.backbone.prototypes = 4;
  config.backbone.temporal_kernel = 3;
  config.backbone.embed_dim = 6;
  config.epochs = 4;
  config.batch_size = 4;
  config.seed = 5;
  config.out_dir = out_dir;
  return config;
}

}  // namespace

TEST_CASE("training writes config echo, metrics, timing, and checkpoints") {
  const fs::path dir = fresh_dir("skelgcn_train_smoke");
  const RunConfig config = small_config(dir.string());
  const TrainResult result = train(config);

  CHECK(result.history.size() == 4);
  CHECK(fs::exists(dir / "config.txt"));
  CHECK(fs::exists(dir / "metrics.jsonl"));
  CHECK(fs::exists(dir / "timing.jsonl"));
  CHECK(fs::exists(result.best_checkpoint));
  CHECK(fs::exists(result.final_checkpoint));

  int lines = 0;
  std::ifstream is(result.metrics_path);
  std::string line;
  while (std::getline(is, line)) {
    CHECK(line.find("\"epoch\":" + std::to_string(lines)) != std::string::npos);
    CHECK(line.find("wall") == std::string::npos);  // timing lives in the sidecar
    ++lines;
  }
  CHECK(lines == 4);
  CHECK(result.best_epoch >= 0);
  CHECK(result.best_test_acc >= 0.0);
}

TEST_CASE("lambda zero reduces bit-identically to cross-entropy-only training") {
  const fs::path dir_a = fresh_dir("skelgcn_lambda0");
  const fs::path dir_b = fresh_dir("skelgcn_ceonly");

  RunConfig a = small_config(dir_a.string());
  a.lambda = 0.0;
  a.csc_enabled = true;
  RunConfig b = small_config(dir_b.string());
  b.lambda = 0.3;
  b.csc_enabled = false;

  const TrainResult ra = train(a);
  const TrainResult rb = train(b);
  CHECK(slurp(ra.metrics_path) == slurp(rb.metrics_path));
  CHECK(slurp(ra.final_checkpoint) == slurp(rb.final_checkpoint));
}

TEST_CASE("same config and seed reproduce identical artifacts") {
  const fs::path dir_a = fresh_dir("skelgcn_repro_a");
  const fs::path dir_b = fresh_dir("skelgcn_repro_b");
  RunConfig a = small_config(dir_a.string());
  RunConfig b = small_config(dir_b.string());
  const TrainResult ra = train(a);
  const TrainResult rb = train(b);
  CHECK(slurp(ra.metrics_path) == slurp(rb.metrics_path));
  CHECK(slurp(ra.best_checkpoint) == slurp(rb.best_checkpoint));
  CHECK(slurp(ra.final_checkpoint) == slurp(rb.final_checkpoint));
}

TEST_CASE("score fusion of identical streams reproduces the stream") {
  const fs::path dir = fresh_dir("skelgcn_fusion");
  const RunConfig config = small_config(dir.string());
  const TrainResult result = train(config);

  SynthConfig test_synth = config.synth;
  test_synth.seed = config.synth.seed;  // same families, reuse the corpus
  const Dataset dataset = synth_generate(test_synth);

  const EvalResult one = evaluate({result.final_checkpoint}, dataset);
  const EvalResult two =
      evaluate({result.final_checkpoint, result.final_checkpoint}, dataset);
  const EvalResult three = evaluate(
      {result.final_checkpoint, result.final_checkpoint, result.final_checkpoint}, dataset);
  CHECK(two.fused_top1 == one.fused_top1);
  CHECK(three.fused_top1 == one.fused_top1);
  CHECK(one.fused_topk >= one.fused_top1);
  CHECK(one.topk == 2);  // min(5, classes)
  for (double acc : two.per_stream_top1) CHECK(acc == one.fused_top1);
}

TEST_CASE("fusion arithmetic on crafted score tables") {
  Dataset dataset;
  dataset.joints = 2;
  dataset.frames = 1;
  dataset.num_classes = 3;
  for (int label : {0, 1, 2}) {
    SkeletonSequence seq;
    seq.joints = 2;
    seq.frames = 1;
    seq.channels = 3;
    seq.coords.assign(6, 0.0f);
    seq.label = label;
    dataset.sequences.push_back(seq);
  }

  // one stream is confidently correct, the other is uniform
  std::vector<std::vector<double>> hot(3), flat(3);
  for (int i = 0; i < 3; ++i) {
    hot[static_cast<std::size_t>(i)].assign(3, 0.0);
    hot[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
    flat[static_cast<std::size_t>(i)].assign(3, 1.0 / 3.0);
  }
  const auto fused = fuse_scores({hot, flat});
  CHECK(top_k_accuracy(fused, dataset, 1) == 1.0);
  CHECK(top_k_accuracy(flat, dataset, 3) == 1.0);  // top-c always contains the label
  CHECK(top_k_accuracy(fused, dataset, 1) <= top_k_accuracy(fused, dataset, 2));
}

TEST_CASE("config files round-trip and reject unknown keys") {
  const fs::path dir = fresh_dir("skelgcn_config");
  RunConfig config = small_config((dir / "run").string());
  config.lambda = 0.45;
  config.decay_exclude = {"bias", "a0"};
  config.stream = "bone-motion";
  config.backbone.widths = {4, 8, 8};
  const std::string path = (dir / "config.txt").string();
  write_run_config(config, path);

  const RunConfig loaded = load_run_config(path);
  CHECK(loaded.lambda == config.lambda);
  CHECK(loaded.decay_exclude == config.decay_exclude);
  CHECK(loaded.stream == config.stream);
  CHECK(loaded.backbone.widths == config.backbone.widths);
  CHECK(loaded.synth.per_class == config.synth.per_class);
  CHECK(loaded.seed == config.seed);

  RunConfig other;
  CHECK_THROWS_AS(apply_override(other, "nonsense.key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(other, "loss.lambda", "abc"), ConfigError);
}

TEST_CASE("diverging training aborts with a numeric diagnostic") {
  const fs::path dir = fresh_dir("skelgcn_diverge");
  RunConfig config = small_config(dir.string());
  config.base_lr = 1e9;
  config.epochs = 30;
  CHECK_THROWS_AS(train(config), NumericError);
}

TEST_CASE("gradcheck passes on a small full configuration") {
  RunConfig config = small_config("");  // gradcheck does not write anything
  config.batch_size = 2;
  // audit at tau=1: central differences with eps=1e-3 carry O(eps^2 * f''')
  // truncation error, and tau=0.125 makes f''' large enough to swamp the
  // comparison; the gradient rules themselves do not depend on tau
  config.tau = 1.0;
  const AuditReport report = gradcheck(config);
  CHECK(report.max_rel_err <= 1e-4);
  CHECK(report.groups.size() > 10);  // every parameter group shows up
  bool has_projection = false;
  for (const AuditGroup& group : report.groups) {
    has_projection = has_projection || group.name == "projection.weight";
  }
  CHECK(has_projection);
}

TEST_CASE("topology export writes exact csv values and a pgm heatmap") {
  const fs::path dir = fresh_dir("skelgcn_viz");

  SUBCASE("identity fixture has a unit diagonal in the csv") {
    Tensor eye = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.data()[static_cast<std::size_t>(i * 4 + i)] = 1.0;
    const std::string csv = (dir / "eye.csv").string();
    write_matrix_csv(eye, csv);
    std::ifstream is(csv);
    std::string line;
    int row = 0;
    while (std::getline(is, line)) {
      std::istringstream fields(line);
      std::string field;
      int col = 0;
      while (std::getline(fields, field, ',')) {
        CHECK(std::stod(field) == (row == col ? 1.0 : 0.0));
        ++col;
      }
      CHECK(col == 4);
      ++row;
    }
    CHECK(row == 4);

    const std::string pgm = (dir / "eye.pgm").string();
    write_matrix_pgm(eye, pgm);
    std::ifstream ps(pgm);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    ps >> magic >> w >> h >> maxval;
    CHECK(magic == "P2");
    CHECK(w == 4);
    CHECK(h == 4);
    CHECK(maxval == 255);
    // diagonal saturates, off-diagonal is black
    for (int i = 0; i < 16; ++i) {
      int level = -1;
      ps >> level;
      CHECK(level == (i % 5 == 0 ? 255 : 0));
    }
  }

  SUBCASE("exported csv equals the channel mean of the final topology") {
    const RunConfig config = small_config((dir / "run").string());
    const TrainResult result = train(config);
    const Dataset dataset = synth_generate(config.synth);
    const TopologyExport exported =
        export_topology(result.final_checkpoint, dataset.sequences[0], (dir / "viz").string());
    REQUIRE(fs::exists(exported.csv_path));
    REQUIRE(fs::exists(exported.pgm_path));
    REQUIRE(fs::exists(exported.memory_path));

    std::ifstream is(exported.csv_path);
    std::string line;
    int row = 0;
    while (std::getline(is, line)) {
      std::istringstream fields(line);
      std::string field;
      int col = 0;
      while (std::getline(fields, field, ',')) {
        CHECK(std::stod(field) == exported.matrix.at({row, col}));
        ++col;
      }
      ++row;
    }
    CHECK(row == config.synth.joints);

    // w_memory dump has prototype-count rows
    std::ifstream ms(exported.memory_path);
    int memory_rows = 0;
    while (std::getline(ms, line)) ++memory_rows;
    CHECK(memory_rows == config.backbone.prototypes);
  }
}

TEST_CASE("evaluate validates class counts") {
  const fs::path dir = fresh_dir("skelgcn_eval_err");
  const RunConfig config = small_config(dir.string());
  const TrainResult result = train(config);

  SynthConfig other = config.synth;
  other.classes = 5;
  const Dataset wrong = synth_generate(other);
  CHECK_THROWS_AS(evaluate({result.final_checkpoint}, wrong), ConfigError);
  CHECK_THROWS_AS(evaluate({}, wrong), ConfigError);
}
