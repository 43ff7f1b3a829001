#include "skelgcn/losses.hpp"

#include <cmath>

#include "skelgcn/error.hpp"

namespace skelgcn {

ProjectionHead ProjectionHead::init(int input_rows, int embed_dim, std::mt19937_64& rng,
                                    bool normalize) {
  if (input_rows < 1 || embed_dim < 1) {
    throw ConfigError("projection head dimensions must be positive");
  }
  ProjectionHead head;
  head.weight = Tensor::randn({input_rows, embed_dim}, rng,
                              1.0 / std::sqrt(static_cast<double>(input_rows)), true)
                    .set_name("projection.weight");
  head.bias = Tensor::zeros({embed_dim}, true).set_name("projection.bias");
  head.normalize = normalize;
  return head;
}

Tensor project(const Tensor& reconstruction, const ProjectionHead& head) {
  if (reconstruction.rank() != 2 || reconstruction.extent(0) != head.weight.extent(0)) {
    throw ShapeError("project: input " + shape_str(reconstruction.shape()) +
                     " does not match head rows " + std::to_string(head.weight.extent(0)));
  }
  const Tensor pooled = ops::reshape(ops::mean_over_axis(reconstruction, 1),
                                     {1, head.weight.extent(0)});
  const Tensor embedded = ops::add(ops::matmul(pooled, head.weight),
                                   ops::reshape(head.bias, {1, head.weight.extent(1)}));
  return head.normalize ? ops::l2_normalize(embedded) : embedded;
}

ClassBank ClassBank::init(int classes, int embed_dim, double momentum, std::mt19937_64& rng) {
  if (classes < 2) throw ConfigError("class bank needs at least 2 classes");
  if (embed_dim < 1) throw ConfigError("class bank embedding width must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("class bank momentum must lie in [0,1)");
  }
  ClassBank bank;
  bank.momentum = momentum;
  bank.rows = Tensor::randn({classes, embed_dim}, rng, 1.0);
  for (int k = 0; k < classes; ++k) {
    double norm = 0.0;
    for (int d = 0; d < embed_dim; ++d) {
      const double v = bank.rows.at({k, d});
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < embed_dim; ++d) {
      bank.rows.data()[static_cast<std::size_t>(k * embed_dim + d)] /= norm;
    }
  }
  return bank;
}

void bank_update(ClassBank& bank, const std::vector<Tensor>& features,
                 const std::vector<int>& labels) {
  if (features.empty()) throw ConfigError("bank_update: empty batch");
  if (features.size() != labels.size()) {
    throw ConfigError("bank_update: feature and label counts differ");
  }
  const int dim = bank.embed_dim();
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(bank.classes()));
  std::vector<int> counts(static_cast<std::size_t>(bank.classes()), 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= bank.classes()) {
      throw ConfigError("bank_update: label " + std::to_string(label) + " out of range");
    }
    if (features[i].size() != dim) {
      throw ShapeError("bank_update: feature " + shape_str(features[i].shape()) +
                       " does not match bank width " + std::to_string(dim));
    }
    if (sums[static_cast<std::size_t>(label)].empty()) {
      sums[static_cast<std::size_t>(label)].assign(static_cast<std::size_t>(dim), 0.0);
    }
    const auto values = features[i].data();
    for (int d = 0; d < dim; ++d) sums[static_cast<std::size_t>(label)][static_cast<std::size_t>(d)] += values[static_cast<std::size_t>(d)];
    ++counts[static_cast<std::size_t>(label)];
  }
  const double alpha = bank.momentum;
  for (int k = 0; k < bank.classes(); ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) continue;
    for (int d = 0; d < dim; ++d) {
      const double mean = sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] /
                          counts[static_cast<std::size_t>(k)];
      double& row = bank.rows.data()[static_cast<std::size_t>(k * dim + d)];
      row = alpha * row + (1.0 - alpha) * mean;
    }
  }
  for (double v : bank.rows.data()) {
    if (!std::isfinite(v)) throw NumericError("bank_update: non-finite bank row");
  }
}

Tensor csc_loss(const Tensor& feature, int label, const ClassBank& bank, double tau,
                bool normalize_anchors) {
  if (tau <= 0.0) throw ConfigError("csc_loss: temperature must be positive");
  if (label < 0 || label >= bank.classes()) {
    throw ConfigError("csc_loss: label " + std::to_string(label) + " out of range");
  }
  if (feature.size() != bank.embed_dim()) {
    throw ShapeError("csc_loss: feature " + shape_str(feature.shape()) +
                     " does not match bank width " + std::to_string(bank.embed_dim()));
  }
  // snapshot of the anchors; a fresh constant per call keeps the bank off the tape
  Tensor anchors = bank.rows.detached();
  if (normalize_anchors) {
    const int dim = bank.embed_dim();
    for (int k = 0; k < bank.classes(); ++k) {
      double norm = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double v = anchors.at({k, d});
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm > 1e-12) {
        for (int d = 0; d < dim; ++d) {
          anchors.data()[static_cast<std::size_t>(k * dim + d)] /= norm;
        }
      }
    }
  }
  const Tensor row = ops::reshape(feature, {1, bank.embed_dim()});
  const Tensor scores = ops::scale(ops::matmul(row, ops::transpose(anchors)), 1.0 / tau);
  return ops::cross_entropy(scores, {label});
}

Tensor total_loss(const Tensor& cross_entropy_term, const Tensor& contrastive_term,
                  double lambda) {
  if (lambda < 0.0) throw ConfigError("total_loss: lambda must be nonnegative");
  return ops::add(cross_entropy_term, ops::scale(contrastive_term, lambda));
}

}  // namespace skelgcn
