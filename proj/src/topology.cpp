#include "skelgcn/topology.hpp"

#include <cmath>

#include "skelgcn/error.hpp"

namespace skelgcn {

Tensor apply_activation(const Tensor& x, Activation activation) {
  switch (activation) {
    case Activation::kTanh: return ops::tanh(x);
    case Activation::kRelu: return ops::relu(x);
  }
  throw ConfigError("unknown activation");
}

MteParams MteParams::init(int channels, int heads, std::mt19937_64& rng,
                          const std::string& name_prefix) {
  if (heads < 1) throw ConfigError("mte: head count must be positive");
  const int head_dim = channels / heads;
  if (head_dim < 1) {
    throw ConfigError("mte: " + std::to_string(channels) + " channels cannot feed " +
                      std::to_string(heads) + " heads with positive width");
  }
  MteParams params;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(channels));
  for (int h = 0; h < heads; ++h) {
    params.w_query.push_back(Tensor::randn({channels, head_dim}, rng, stddev, true)
                                 .set_name(name_prefix + ".wq" + std::to_string(h)));
    params.w_key.push_back(Tensor::randn({channels, head_dim}, rng, stddev, true)
                               .set_name(name_prefix + ".wk" + std::to_string(h)));
  }
  return params;
}

std::vector<Tensor> MteParams::parameters() const {
  std::vector<Tensor> out;
  for (int h = 0; h < heads(); ++h) {
    out.push_back(w_query[static_cast<std::size_t>(h)]);
    out.push_back(w_key[static_cast<std::size_t>(h)]);
  }
  return out;
}

ProjectedHeads project_and_pool(const Tensor& features, const MteParams& params) {
  if (features.rank() != 3) {
    throw ShapeError("project_and_pool: features must be NxTxC, got " +
                     shape_str(features.shape()));
  }
  if (features.extent(2) != params.channels()) {
    throw ShapeError("project_and_pool: features carry " + std::to_string(features.extent(2)) +
                     " channels but projections expect " + std::to_string(params.channels()));
  }
  const Tensor pooled = ops::mean_over_axis(features, 1);  // N x C
  ProjectedHeads heads;
  for (int h = 0; h < params.heads(); ++h) {
    heads.query.push_back(ops::matmul(pooled, params.w_query[static_cast<std::size_t>(h)]));
    heads.key.push_back(ops::matmul(pooled, params.w_key[static_cast<std::size_t>(h)]));
  }
  return heads;
}

Tensor intra_topology_head(const Tensor& head_query, const Tensor& head_key,
                           Activation activation) {
  if (head_query.shape() != head_key.shape()) {
    throw ShapeError("intra_topology: query " + shape_str(head_query.shape()) +
                     " and key " + shape_str(head_key.shape()) + " differ");
  }
  const int head_dim = head_query.extent(1);
  const Tensor scores = ops::matmul(head_query, ops::transpose(head_key));  // N x N
  return ops::repeat_axis(apply_activation(scores, activation), 2, head_dim);
}

Tensor inter_topology_head(const Tensor& head_query, const Tensor& head_key,
                           Activation activation) {
  if (head_query.shape() != head_key.shape()) {
    throw ShapeError("inter_topology: query " + shape_str(head_query.shape()) +
                     " and key " + shape_str(head_key.shape()) + " differ");
  }
  const int joints = head_query.extent(0);
  const Tensor lifted_query = ops::repeat_axis(head_query, 1, joints);  // [i,j,c] = Q[i,c]
  const Tensor lifted_key = ops::repeat_axis(head_key, 0, joints);      // [i,j,c] = K[j,c]
  return apply_activation(ops::sub(lifted_query, lifted_key), activation);
}

Tensor compose_terms(const std::vector<Tensor>& head_slices, int total_channels) {
  return ops::concat_channels(head_slices, total_channels);
}

TopologyTerms motion_topology(const Tensor& features, const MteParams& params) {
  const ProjectedHeads heads = project_and_pool(features, params);
  std::vector<Tensor> intra_slices, inter_slices;
  for (int h = 0; h < params.heads(); ++h) {
    intra_slices.push_back(intra_topology_head(heads.query[static_cast<std::size_t>(h)],
                                               heads.key[static_cast<std::size_t>(h)],
                                               params.intra_activation));
    inter_slices.push_back(inter_topology_head(heads.query[static_cast<std::size_t>(h)],
                                               heads.key[static_cast<std::size_t>(h)],
                                               params.inter_activation));
  }
  const int channels = params.channels();
  return TopologyTerms{compose_terms(intra_slices, channels),
                       compose_terms(inter_slices, channels)};
}

}  // namespace skelgcn
