#pragma once

#include <random>
#include <string>
#include <vector>

#include "skelgcn/tensor.hpp"

namespace skelgcn {

enum class Activation { kTanh, kRelu };

Tensor apply_activation(const Tensor& x, Activation activation);

// Multi-head query/key projections that turn layer features into
// input-conditioned topology terms. Each head owns C x C' matrices with
// C' = floor(C / heads).
struct MteParams {
  std::vector<Tensor> w_query;
  std::vector<Tensor> w_key;
  Activation intra_activation = Activation::kTanh;
  Activation inter_activation = Activation::kTanh;

  static MteParams init(int channels, int heads, std::mt19937_64& rng,
                        const std::string& name_prefix);

  int heads() const { return static_cast<int>(w_query.size()); }
  int channels() const { return w_query.front().extent(0); }
  int head_dim() const { return w_query.front().extent(1); }
  std::vector<Tensor> parameters() const;
};

struct ProjectedHeads {
  std::vector<Tensor> query;  // per head, N x C'
  std::vector<Tensor> key;
};

// Mean-pools the frame axis, then projects per head:
// Q[h] = meanOverT(H) * W_query[h], K[h] = meanOverT(H) * W_key[h].
ProjectedHeads project_and_pool(const Tensor& features, const MteParams& params);

// Pairwise inner products of one head's projections, activated and broadcast
// across that head's channel slice.
Tensor intra_topology_head(const Tensor& head_query, const Tensor& head_key,
                           Activation activation);

// Activated pairwise differences: out[i,j,:] = act(Q[i,:] - K[j,:]).
Tensor inter_topology_head(const Tensor& head_query, const Tensor& head_key,
                           Activation activation);

// Concatenates per-head slices along the channel axis, zero-padding any
// channels the heads do not cover.
Tensor compose_terms(const std::vector<Tensor>& head_slices, int total_channels);

struct TopologyTerms {
  Tensor intra;  // N x N x C
  Tensor inter;  // N x N x C
};

TopologyTerms motion_topology(const Tensor& features, const MteParams& params);

}  // namespace skelgcn
