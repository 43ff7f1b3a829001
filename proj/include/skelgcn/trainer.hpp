#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skelgcn/checkpoint.hpp"
#include "skelgcn/data.hpp"
#include "skelgcn/losses.hpp"
#include "skelgcn/model.hpp"
#include "skelgcn/optim.hpp"
#include "skelgcn/tensor.hpp"

namespace skelgcn {

// Everything a run needs; (RunConfig, seed) reproduces a run bit-for-bit.
struct RunConfig {
  // data: explicit files, or the synthesizer plus a split
  std::string data_path;  // empty -> synthesize
  std::string test_path;  // optional pre-split test set
  SynthConfig synth;
  double split_ratio = 2.0 / 3.0;
  bool split_by_subject = false;

  BackboneConfig backbone;  // joints/frames/channels/classes are filled from the data

  double lambda = 0.3;
  double tau = 0.125;
  double alpha = 0.9;
  bool normalize_embeddings = true;
  bool csc_enabled = true;

  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::string> decay_exclude;

  int epochs = 150;
  int batch_size = 64;
  std::uint64_t seed = 1;
  std::string stream = "joint";
  std::string out_dir;

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
// Echo of every resolved value, written into the output directory.
void write_run_config(const RunConfig& config, const std::string& path);

struct MetricsRecord {
  int epoch = 0;
  double ce = 0.0;
  double csc = 0.0;
  double total = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;  // recorded in the timing sidecar, not the metrics file
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  int best_epoch = -1;
  double best_test_acc = 0.0;
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string metrics_path;
};

TrainResult train(const RunConfig& config);

// Softmax class scores of one checkpoint over a dataset, one row per sample.
std::vector<std::vector<double>> stream_scores(const Checkpoint& checkpoint,
                                               const Dataset& dataset);
// Uniform score-level fusion across streams.
std::vector<std::vector<double>> fuse_scores(
    const std::vector<std::vector<std::vector<double>>>& streams);
double top_k_accuracy(const std::vector<std::vector<double>>& scores, const Dataset& dataset,
                      int k);

struct EvalResult {
  std::vector<double> per_stream_top1;
  double fused_top1 = 0.0;
  double fused_topk = 0.0;
  int topk = 5;
};
EvalResult evaluate(const std::vector<std::string>& checkpoint_paths, const Dataset& dataset);

// Full-model finite-difference audit on one small batch from the run's data.
AuditReport gradcheck(const RunConfig& config);

// Channel mean of the final layer's effective topology for one sequence,
// written as raw CSV, a min-max scaled PGM heatmap, and the raw prototype
// matrix of the final layer.
struct TopologyExport {
  Tensor matrix;  // N x N channel mean
  std::string csv_path, pgm_path, memory_path;
};
TopologyExport export_topology(const std::string& checkpoint_path, const SkeletonSequence& seq,
                               const std::string& out_dir);

void write_matrix_csv(const Tensor& matrix, const std::string& path);
void write_matrix_pgm(const Tensor& matrix, const std::string& path);

}  // namespace skelgcn
