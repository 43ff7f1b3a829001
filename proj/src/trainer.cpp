#include "skelgcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "skelgcn/error.hpp"
#include "skelgcn/rng.hpp"

namespace skelgcn {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + value + "'");
}

int parse_int(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string token;
  std::istringstream is(value);
  while (std::getline(is, token, ',')) {
    if (!token.empty()) out.push_back(token);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct PreparedData {
  Dataset train;
  Dataset test;
  std::vector<Tensor> train_inputs, test_inputs;
  std::vector<int> train_labels, test_labels;
};

std::vector<Tensor> view_inputs(const Dataset& dataset, ModalityKind kind,
                                const SkeletonGraph& graph) {
  std::vector<Tensor> inputs;
  inputs.reserve(dataset.size());
  for (const SkeletonSequence& seq : dataset.sequences) {
    inputs.push_back(to_modality(seq, kind, graph).data.to_tensor());
  }
  return inputs;
}

PreparedData prepare_data(const RunConfig& config) {
  PreparedData data;
  if (!config.data_path.empty() && !config.test_path.empty()) {
    data.train = load_dataset(config.data_path);
    data.test = load_dataset(config.test_path);
    if (data.train.joints != data.test.joints || data.train.channels != data.test.channels ||
        data.train.num_classes != data.test.num_classes) {
      throw ConfigError("train and test datasets disagree on shape or class count");
    }
  } else {
    Dataset full = config.data_path.empty() ? synth_generate(config.synth)
                                            : load_dataset(config.data_path);
    auto [train, test] = split(full, config.split_ratio, config.split_by_subject,
                               derive_seed(config.seed, "split"));
    data.train = std::move(train);
    data.test = std::move(test);
  }
  if (data.train.sequences.empty() || data.test.sequences.empty()) {
    throw ConfigError("empty train or test split");
  }
  const SkeletonGraph graph = SkeletonGraph::chain_pair(data.train.joints);
  const ModalityKind kind = parse_modality(config.stream);
  data.train_inputs = view_inputs(data.train, kind, graph);
  data.test_inputs = view_inputs(data.test, kind, graph);
  for (const SkeletonSequence& seq : data.train.sequences) data.train_labels.push_back(seq.label);
  for (const SkeletonSequence& seq : data.test.sequences) data.test_labels.push_back(seq.label);
  return data;
}

double accuracy(const Model& model, const std::vector<Tensor>& inputs,
                const std::vector<int>& labels) {
  int correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Model::Forward out = model.forward(inputs[i]);
    int best = 0;
    for (int k = 1; k < out.logits.extent(1); ++k) {
      if (out.logits.at({0, k}) > out.logits.at({0, best})) best = k;
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

Checkpoint snapshot(const RunConfig& config, const Model& model, const ProjectionHead& head,
                    const ClassBank& bank, const SgdOptimizer& sgd) {
  Checkpoint checkpoint;
  checkpoint.config = model.config();
  checkpoint.stream = config.stream;
  for (const Tensor& p : model.parameters()) checkpoint.tensors.emplace_back(p.name(), p);
  for (const Tensor& p : head.parameters()) checkpoint.tensors.emplace_back(p.name(), p);
  checkpoint.tensors.emplace_back("bank.rows", bank.rows);
  for (auto& [name, tensor] : sgd.velocities()) checkpoint.tensors.emplace_back(name, tensor);
  return checkpoint;
}

std::vector<std::pair<std::string, Tensor>> model_tensors(const Checkpoint& checkpoint) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& entry : checkpoint.tensors) {
    const std::string& name = entry.first;
    if (name.rfind("velocity.", 0) == 0 || name.rfind("bank.", 0) == 0 ||
        name.rfind("projection.", 0) == 0) {
      continue;
    }
    out.push_back(entry);
  }
  return out;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, 0);
  model.load_parameters(model_tensors(checkpoint));
  return model;
}

int effective_topk(int classes) { return std::min(5, classes); }

}  // namespace

void RunConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("config: loss.lambda must be nonnegative");
  if (tau <= 0.0) throw ConfigError("config: loss.tau must be positive");
  if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("config: loss.alpha must lie in [0,1)");
  if (base_lr <= 0.0) throw ConfigError("config: optim.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("config: optim.momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("config: optim.weight_decay must be nonnegative");
  if (epochs < 1) throw ConfigError("config: train.epochs must be positive");
  if (batch_size < 1) throw ConfigError("config: train.batch must be positive");
  if (split_ratio <= 0.0 || split_ratio >= 1.0) {
    throw ConfigError("config: split.ratio must lie in (0,1)");
  }
  parse_modality(stream);
  if (!test_path.empty() && data_path.empty()) {
    throw ConfigError("config: test set given without a training set");
  }
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "data") config.data_path = value;
  else if (key == "test") config.test_path = value;
  else if (key == "synth.seed") config.synth.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "synth.classes") config.synth.classes = parse_int(value, key);
  else if (key == "synth.per_class") config.synth.per_class = parse_int(value, key);
  else if (key == "synth.joints") config.synth.joints = parse_int(value, key);
  else if (key == "synth.frames") config.synth.frames = parse_int(value, key);
  else if (key == "synth.similarity") config.synth.similarity = parse_double(value, key);
  else if (key == "synth.subjects") config.synth.subjects = parse_int(value, key);
  else if (key == "synth.noise") config.synth.noise = parse_double(value, key);
  else if (key == "split.ratio") config.split_ratio = parse_double(value, key);
  else if (key == "split.by_subject") config.split_by_subject = parse_bool(value, key);
  else if (key == "model.widths") {
    config.backbone.widths.clear();
    for (const std::string& w : split_list(value)) {
      config.backbone.widths.push_back(parse_int(w, key));
    }
  } else if (key == "model.heads") config.backbone.heads = parse_int(value, key);
  else if (key == "model.prototypes") config.backbone.prototypes = parse_int(value, key);
  else if (key == "model.temporal_kernel") config.backbone.temporal_kernel = parse_int(value, key);
  else if (key == "model.embed_dim") config.backbone.embed_dim = parse_int(value, key);
  else if (key == "model.use_prototypes") config.backbone.use_prototypes = parse_bool(value, key);
  else if (key == "model.share_prototypes") config.backbone.share_prototypes = parse_bool(value, key);
  else if (key == "loss.lambda") config.lambda = parse_double(value, key);
  else if (key == "loss.tau") config.tau = parse_double(value, key);
  else if (key == "loss.alpha") config.alpha = parse_double(value, key);
  else if (key == "loss.normalize") config.normalize_embeddings = parse_bool(value, key);
  else if (key == "loss.csc_enabled") config.csc_enabled = parse_bool(value, key);
  else if (key == "optim.lr") config.base_lr = parse_double(value, key);
  else if (key == "optim.momentum") config.momentum = parse_double(value, key);
  else if (key == "optim.weight_decay") config.weight_decay = parse_double(value, key);
  else if (key == "optim.decay_exclude") config.decay_exclude = split_list(value);
  else if (key == "train.epochs") config.epochs = parse_int(value, key);
  else if (key == "train.batch") config.batch_size = parse_int(value, key);
  else if (key == "train.seed") config.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "stream") config.stream = value;
  else if (key == "out") config.out_dir = value;
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  RunConfig config;
  std::string line;
  int line_number = 0;
  while (std::getline(is, line)) {
    ++line_number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_number) + " is not key=value");
    }
    apply_override(config, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return config;
}

void write_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "data = " << config.data_path << "\n";
  os << "test = " << config.test_path << "\n";
  os << "synth.seed = " << config.synth.seed << "\n";
  os << "synth.classes = " << config.synth.classes << "\n";
  os << "synth.per_class = " << config.synth.per_class << "\n";
  os << "synth.joints = " << config.synth.joints << "\n";
  os << "synth.frames = " << config.synth.frames << "\n";
  os << "synth.similarity = " << config.synth.similarity << "\n";
  os << "synth.subjects = " << config.synth.subjects << "\n";
  os << "synth.noise = " << config.synth.noise << "\n";
  os << "split.ratio = " << config.split_ratio << "\n";
  os << "split.by_subject = " << (config.split_by_subject ? "true" : "false") << "\n";
  os << "model.widths = ";
  for (std::size_t i = 0; i < config.backbone.widths.size(); ++i) {
    if (i) os << ',';
    os << config.backbone.widths[i];
  }
  os << "\n";
  os << "model.heads = " << config.backbone.heads << "\n";
  os << "model.prototypes = " << config.backbone.prototypes << "\n";
  os << "model.temporal_kernel = " << config.backbone.temporal_kernel << "\n";
  os << "model.embed_dim = " << config.backbone.embed_dim << "\n";
  os << "model.use_prototypes = " << (config.backbone.use_prototypes ? "true" : "false") << "\n";
  os << "model.share_prototypes = " << (config.backbone.share_prototypes ? "true" : "false")
     << "\n";
  os << "loss.lambda = " << config.lambda << "\n";
  os << "loss.tau = " << config.tau << "\n";
  os << "loss.alpha = " << config.alpha << "\n";
  os << "loss.normalize = " << (config.normalize_embeddings ? "true" : "false") << "\n";
  os << "loss.csc_enabled = " << (config.csc_enabled ? "true" : "false") << "\n";
  os << "optim.lr = " << config.base_lr << "\n";
  os << "optim.momentum = " << config.momentum << "\n";
  os << "optim.weight_decay = " << config.weight_decay << "\n";
  os << "optim.decay_exclude = ";
  for (std::size_t i = 0; i < config.decay_exclude.size(); ++i) {
    if (i) os << ',';
    os << config.decay_exclude[i];
  }
  os << "\n";
  os << "train.epochs = " << config.epochs << "\n";
  os << "train.batch = " << config.batch_size << "\n";
  os << "train.seed = " << config.seed << "\n";
  os << "stream = " << config.stream << "\n";
  os << "out = " << config.out_dir << "\n";
}

TrainResult train(const RunConfig& run_config) {
  RunConfig config = run_config;
  config.validate();
  if (config.out_dir.empty()) throw ConfigError("train: output directory not set");
  fs::create_directories(config.out_dir);

  PreparedData data = prepare_data(config);
  config.backbone.joints = data.train.joints;
  config.backbone.frames = data.train.frames;
  config.backbone.in_channels = data.train.channels;
  config.backbone.num_classes = data.train.num_classes;
  config.backbone.validate();
  write_run_config(config, (fs::path(config.out_dir) / "config.txt").string());

  const bool csc_active = config.csc_enabled && config.lambda > 0.0;
  Model model(config.backbone, config.seed);
  auto head_rng = make_rng(derive_seed(config.seed, "projection"));
  ProjectionHead head =
      ProjectionHead::init(config.backbone.joints * config.backbone.joints,
                           config.backbone.embed_dim, head_rng, config.normalize_embeddings);
  auto bank_rng = make_rng(derive_seed(config.seed, "bank"));
  ClassBank bank = ClassBank::init(config.backbone.num_classes, config.backbone.embed_dim,
                                   config.alpha, bank_rng);

  std::vector<Tensor> trainable = model.parameters();
  if (csc_active) {
    for (const Tensor& p : head.parameters()) trainable.push_back(p);
  }
  SgdOptimizer sgd(trainable, config.momentum, config.weight_decay, config.decay_exclude);

  auto shuffle_rng = make_rng(derive_seed(config.seed, "shuffle"));

  const std::string metrics_path = (fs::path(config.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics_file(metrics_path);
  std::ofstream timing_file((fs::path(config.out_dir) / "timing.jsonl").string());
  if (!metrics_file || !timing_file) {
    throw IoError("cannot open metrics files under '" + config.out_dir + "'");
  }

  TrainResult result;
  result.metrics_path = metrics_path;
  result.best_checkpoint = (fs::path(config.out_dir) / "best.ckpt").string();
  result.final_checkpoint = (fs::path(config.out_dir) / "final.ckpt").string();

  const std::size_t n_train = data.train_inputs.size();
  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, config.epochs, config.base_lr);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ce_sum = 0.0, csc_sum = 0.0, total_sum = 0.0;
    for (std::size_t begin = 0; begin < n_train; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n_train, begin + static_cast<std::size_t>(config.batch_size));
      const int batch = static_cast<int>(end - begin);

      for (const Tensor& p : trainable) p.impl()->grad.clear();
      Tape tape;
      Tensor ce, csc_mean, loss;
      std::vector<Tensor> features;
      std::vector<int> labels;
      {
        Tape::Scope scope(tape);
        std::vector<Tensor> logit_rows;
        for (std::size_t i = begin; i < end; ++i) {
          const std::size_t sample = order[i];
          const Model::Forward out = model.forward(data.train_inputs[sample]);
          logit_rows.push_back(out.logits);
          labels.push_back(data.train_labels[sample]);
          if (csc_active) features.push_back(project(out.reconstruction, head));
        }
        ce = ops::cross_entropy(ops::concat_rows(logit_rows), labels);
        if (!std::isfinite(ce.item())) {
          throw NumericError("cross-entropy term is non-finite at epoch " +
                             std::to_string(epoch));
        }
        if (csc_active) {
          Tensor acc;
          for (std::size_t i = 0; i < features.size(); ++i) {
            const Tensor term = csc_loss(features[i], labels[i], bank, config.tau,
                                         config.normalize_embeddings);
            acc = i == 0 ? term : ops::add(acc, term);
          }
          csc_mean = ops::scale(acc, 1.0 / batch);
          if (!std::isfinite(csc_mean.item())) {
            throw NumericError("contrastive term is non-finite at epoch " +
                               std::to_string(epoch));
          }
          loss = total_loss(ce, csc_mean, config.lambda);
        } else {
          loss = ce;
        }
        tape.backward(loss);
      }
      if (csc_active) bank_update(bank, features, labels);
      sgd.step(lr);

      ce_sum += ce.item() * batch;
      csc_sum += (csc_active ? csc_mean.item() : 0.0) * batch;
      total_sum += loss.item() * batch;
    }

    MetricsRecord record;
    record.epoch = epoch;
    record.ce = ce_sum / static_cast<double>(n_train);
    record.csc = csc_sum / static_cast<double>(n_train);
    record.total = total_sum / static_cast<double>(n_train);
    record.train_acc = accuracy(model, data.train_inputs, data.train_labels);
    record.test_acc = accuracy(model, data.test_inputs, data.test_labels);
    record.lr = lr;
    record.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();

    ordered_json line{{"epoch", record.epoch},     {"ce", record.ce},
                      {"csc", record.csc},         {"total", record.total},
                      {"train_acc", record.train_acc}, {"test_acc", record.test_acc},
                      {"lr", record.lr}};
    metrics_file << line.dump() << "\n";
    timing_file << ordered_json{{"epoch", record.epoch}, {"wall_ms", record.wall_ms}}.dump()
                << "\n";
    result.history.push_back(record);

    if (record.test_acc > result.best_test_acc || result.best_epoch < 0) {
      result.best_test_acc = record.test_acc;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, snapshot(config, model, head, bank, sgd));
    }
  }
  save_checkpoint(result.final_checkpoint, snapshot(config, model, head, bank, sgd));
  return result;
}

std::vector<std::vector<double>> stream_scores(const Checkpoint& checkpoint,
                                               const Dataset& dataset) {
  if (checkpoint.config.num_classes != dataset.num_classes) {
    throw ConfigError("checkpoint trained for " + std::to_string(checkpoint.config.num_classes) +
                      " classes, dataset has " + std::to_string(dataset.num_classes));
  }
  const Model model = model_from_checkpoint(checkpoint);
  const SkeletonGraph graph = SkeletonGraph::chain_pair(dataset.joints);
  const ModalityKind kind = parse_modality(checkpoint.stream);
  std::vector<std::vector<double>> scores;
  scores.reserve(dataset.size());
  for (const SkeletonSequence& seq : dataset.sequences) {
    const Tensor input = to_modality(seq, kind, graph).data.to_tensor();
    const Tensor probs = ops::softmax_rows(model.forward(input).logits);
    scores.emplace_back(probs.data().begin(), probs.data().end());
  }
  return scores;
}

std::vector<std::vector<double>> fuse_scores(
    const std::vector<std::vector<std::vector<double>>>& streams) {
  if (streams.empty()) throw ConfigError("fuse_scores: no streams");
  const std::size_t samples = streams.front().size();
  for (const auto& s : streams) {
    if (s.size() != samples) throw ConfigError("fuse_scores: streams disagree on sample count");
  }
  std::vector<std::vector<double>> fused(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t classes = streams.front()[i].size();
    fused[i].assign(classes, 0.0);
    for (const auto& s : streams) {
      if (s[i].size() != classes) throw ConfigError("fuse_scores: streams disagree on classes");
      for (std::size_t k = 0; k < classes; ++k) fused[i][k] += s[i][k];
    }
    for (double& v : fused[i]) v /= static_cast<double>(streams.size());
  }
  return fused;
}

double top_k_accuracy(const std::vector<std::vector<double>>& scores, const Dataset& dataset,
                      int k) {
  if (scores.size() != dataset.size()) {
    throw ConfigError("top_k_accuracy: score rows do not match dataset size");
  }
  int hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::vector<int> idx(scores[i].size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = static_cast<int>(j);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (scores[i][static_cast<std::size_t>(a)] != scores[i][static_cast<std::size_t>(b)]) {
        return scores[i][static_cast<std::size_t>(a)] > scores[i][static_cast<std::size_t>(b)];
      }
      return a < b;
    });
    const int label = dataset.sequences[i].label;
    for (int j = 0; j < k && j < static_cast<int>(idx.size()); ++j) {
      if (idx[static_cast<std::size_t>(j)] == label) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

EvalResult evaluate(const std::vector<std::string>& checkpoint_paths, const Dataset& dataset) {
  if (checkpoint_paths.empty()) throw ConfigError("evaluate: no checkpoints given");
  std::vector<std::vector<std::vector<double>>> streams;
  EvalResult result;
  for (const std::string& path : checkpoint_paths) {
    streams.push_back(stream_scores(load_checkpoint(path), dataset));
    result.per_stream_top1.push_back(top_k_accuracy(streams.back(), dataset, 1));
  }
  const auto fused = fuse_scores(streams);
  result.topk = effective_topk(dataset.num_classes);
  result.fused_top1 = top_k_accuracy(fused, dataset, 1);
  result.fused_topk = top_k_accuracy(fused, dataset, result.topk);
  return result;
}

AuditReport gradcheck(const RunConfig& run_config) {
  RunConfig config = run_config;
  config.validate();
  PreparedData data = prepare_data(config);
  config.backbone.joints = data.train.joints;
  config.backbone.frames = data.train.frames;
  config.backbone.in_channels = data.train.channels;
  config.backbone.num_classes = data.train.num_classes;
  config.backbone.validate();

  const bool csc_active = config.csc_enabled && config.lambda > 0.0;
  Model model(config.backbone, config.seed);
  auto head_rng = make_rng(derive_seed(config.seed, "projection"));
  ProjectionHead head =
      ProjectionHead::init(config.backbone.joints * config.backbone.joints,
                           config.backbone.embed_dim, head_rng, config.normalize_embeddings);
  auto bank_rng = make_rng(derive_seed(config.seed, "bank"));
  ClassBank bank = ClassBank::init(config.backbone.num_classes, config.backbone.embed_dim,
                                   config.alpha, bank_rng);

  const int batch = std::min<int>(config.batch_size, static_cast<int>(data.train_inputs.size()));
  std::vector<Tensor> inputs(data.train_inputs.begin(), data.train_inputs.begin() + batch);
  std::vector<int> labels(data.train_labels.begin(), data.train_labels.begin() + batch);

  auto loss_fn = [&]() {
    std::vector<Tensor> logit_rows;
    Tensor csc_acc;
    for (int i = 0; i < batch; ++i) {
      const Model::Forward out = model.forward(inputs[static_cast<std::size_t>(i)]);
      logit_rows.push_back(out.logits);
      if (csc_active) {
        const Tensor feature = project(out.reconstruction, head);
        const Tensor term = csc_loss(feature, labels[static_cast<std::size_t>(i)], bank,
                                     config.tau, config.normalize_embeddings);
        csc_acc = i == 0 ? term : ops::add(csc_acc, term);
      }
    }
    const Tensor ce = ops::cross_entropy(ops::concat_rows(logit_rows), labels);
    if (!csc_active) return ce;
    return total_loss(ce, ops::scale(csc_acc, 1.0 / batch), config.lambda);
  };

  std::vector<Tensor> params = model.parameters();
  if (csc_active) {
    for (const Tensor& p : head.parameters()) params.push_back(p);
  }
  return grad_audit(params, loss_fn);
}

void write_matrix_csv(const Tensor& matrix, const std::string& path) {
  if (matrix.rank() != 2) throw ShapeError("write_matrix_csv: expected a matrix");
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << std::setprecision(17);
  for (int i = 0; i < matrix.extent(0); ++i) {
    for (int j = 0; j < matrix.extent(1); ++j) {
      if (j) os << ',';
      os << matrix.at({i, j});
    }
    os << "\n";
  }
}

void write_matrix_pgm(const Tensor& matrix, const std::string& path) {
  if (matrix.rank() != 2) throw ShapeError("write_matrix_pgm: expected a matrix");
  double lo = matrix.data()[0], hi = matrix.data()[0];
  for (double v : matrix.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P2\n" << matrix.extent(1) << " " << matrix.extent(0) << "\n255\n";
  for (int i = 0; i < matrix.extent(0); ++i) {
    for (int j = 0; j < matrix.extent(1); ++j) {
      const double v = matrix.at({i, j});
      const int level = span > 0.0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
      if (j) os << ' ';
      os << level;
    }
    os << "\n";
  }
}

TopologyExport export_topology(const std::string& checkpoint_path, const SkeletonSequence& seq,
                               const std::string& out_dir) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const Model model = model_from_checkpoint(checkpoint);
  fs::create_directories(out_dir);

  const SkeletonGraph graph = SkeletonGraph::chain_pair(seq.joints);
  const ModalityKind kind = parse_modality(checkpoint.stream);
  const Tensor input = to_modality(seq, kind, graph).data.to_tensor();
  const std::vector<Tensor> topologies = model.effective_topologies(input);
  const Tensor final_topology = topologies.back();

  TopologyExport exported;
  exported.matrix = ops::mean_over_axis(final_topology, 2);
  exported.csv_path = (fs::path(out_dir) / "topology.csv").string();
  exported.pgm_path = (fs::path(out_dir) / "topology.pgm").string();
  exported.memory_path = (fs::path(out_dir) / "w_memory.csv").string();
  write_matrix_csv(exported.matrix, exported.csv_path);
  write_matrix_pgm(exported.matrix, exported.pgm_path);

  const std::string memory_name =
      checkpoint.config.share_prototypes
          ? "prn.shared.w_memory"
          : "layer" + std::to_string(checkpoint.config.layers() - 1) + ".prn.w_memory";
  const Tensor* memory = checkpoint.find(memory_name);
  if (memory == nullptr) throw IoError("checkpoint is missing '" + memory_name + "'");
  write_matrix_csv(*memory, exported.memory_path);
  return exported;
}

}  // namespace skelgcn
