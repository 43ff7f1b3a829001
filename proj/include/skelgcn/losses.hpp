#pragma once

#include <random>
#include <vector>

#include "skelgcn/tensor.hpp"

namespace skelgcn {

// Projects a final-layer reconstruction Z (N^2 x C) into the contrastive
// embedding space: channel-mean to N^2, linear map to d, then optional L2
// normalization of the embedding.
struct ProjectionHead {
  Tensor weight;  // N^2 x d
  Tensor bias;    // d
  bool normalize = true;

  static ProjectionHead init(int input_rows, int embed_dim, std::mt19937_64& rng,
                             bool normalize = true);
  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

Tensor project(const Tensor& reconstruction, const ProjectionHead& head);  // 1 x d

// Momentum-averaged per-class contrastive anchors. Rows are plain statistics:
// they never enter the tape and receive no gradient.
struct ClassBank {
  Tensor rows;  // c x d
  double momentum = 0.9;

  static ClassBank init(int classes, int embed_dim, double momentum, std::mt19937_64& rng);
  int classes() const { return rows.extent(0); }
  int embed_dim() const { return rows.extent(1); }
};

// m_k <- momentum * m_k + (1 - momentum) * mean of class-k features in the
// batch; classes absent from the batch are untouched. Features are read as
// values only.
void bank_update(ClassBank& bank, const std::vector<Tensor>& features,
                 const std::vector<int>& labels);

// -log( exp(f.m_k / tau) / sum_l exp(f.m_l / tau) ). Gradients flow into the
// feature only. With normalize_anchors the bank rows are unit-normalized
// before the dot products (mirroring the normalized embedding path).
Tensor csc_loss(const Tensor& feature, int label, const ClassBank& bank, double tau,
                bool normalize_anchors = true);

Tensor total_loss(const Tensor& cross_entropy_term, const Tensor& contrastive_term,
                  double lambda);

}  // namespace skelgcn
