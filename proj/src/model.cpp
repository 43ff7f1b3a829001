#include "skelgcn/model.hpp"

#include <cmath>
#include <set>

#include "skelgcn/error.hpp"
#include "skelgcn/rng.hpp"

namespace skelgcn {

void BackboneConfig::validate() const {
  if (joints < 2) throw ConfigError("backbone: need at least 2 joints");
  if (frames < 1) throw ConfigError("backbone: need at least 1 frame");
  if (in_channels < 1) throw ConfigError("backbone: input channels must be positive");
  if (widths.empty()) throw ConfigError("backbone: need at least one layer");
  for (int w : widths) {
    if (w < 1) throw ConfigError("backbone: layer widths must be positive");
    if (w / heads < 1) {
      throw ConfigError("backbone: width " + std::to_string(w) + " cannot feed " +
                        std::to_string(heads) + " heads");
    }
  }
  if (heads < 1) throw ConfigError("backbone: head count must be positive");
  if (prototypes < 1) throw ConfigError("backbone: prototype count must be positive");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
    throw ConfigError("backbone: temporal kernel must be odd and positive");
  }
  if (num_classes < 2) throw ConfigError("backbone: need at least 2 classes");
  if (embed_dim < 1) throw ConfigError("backbone: embedding width must be positive");
  if (share_prototypes) {
    for (int w : widths) {
      if (w != widths.front()) {
        throw ConfigError("backbone: shared prototypes require equal layer widths");
      }
    }
  }
}

Tensor temporal_block(const Tensor& features, const Tensor& kernel, const Tensor& bias) {
  return ops::add(ops::depthwise_conv_time(features, kernel, bias), features);
}

LayerOutput layer_forward(const Tensor& input, const LayerParams& params, bool use_prototypes) {
  const int joints = input.extent(0), frames = input.extent(1);
  const int out_channels = params.w.extent(1);

  // feature projection first, so every topology term lives in the layer width
  const Tensor flat_in = ops::reshape(input, {joints * frames, params.w.extent(0)});
  const Tensor projected =
      ops::reshape(ops::matmul(flat_in, params.w), {joints, frames, out_channels});

  const TopologyTerms terms = motion_topology(projected, params.mte);
  const Tensor summed = ops::add(ops::add(params.base_topology, terms.intra), terms.inter);

  LayerOutput out;
  if (use_prototypes) {
    const Refinement refinement = refine_topology(summed, params.memory);
    out.adjacency = refinement.refined;
    out.reconstruction = refinement.reconstruction;
  } else {
    out.adjacency = summed;
    out.reconstruction = flatten_topology(summed);
  }

  const Tensor activated = ops::relu(ops::channelwise_graph_apply(out.adjacency, projected));
  out.features = temporal_block(activated, params.temporal_weight, params.temporal_bias);
  return out;
}

Model::Model(BackboneConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  auto rng = make_rng(derive_seed(seed, "model"));

  PrototypeMemory shared;
  if (config_.share_prototypes) {
    shared = PrototypeMemory::init(config_.prototypes, config_.widths.front(), rng, "prn.shared");
  }

  int in_width = config_.in_channels;
  for (int l = 0; l < config_.layers(); ++l) {
    const int width = config_.widths[static_cast<std::size_t>(l)];
    const std::string prefix = "layer" + std::to_string(l);
    LayerParams layer;
    layer.w = Tensor::randn({in_width, width}, rng, 1.0 / std::sqrt(static_cast<double>(in_width)),
                            true)
                  .set_name(prefix + ".w");
    layer.base_topology =
        Tensor::randn({config_.joints, config_.joints, width}, rng, 0.5, true)
            .set_name(prefix + ".a0");
    layer.mte = MteParams::init(width, config_.heads, rng, prefix + ".mte");
    layer.memory = config_.share_prototypes
                       ? shared
                       : PrototypeMemory::init(config_.prototypes, width, rng, prefix + ".prn");
    layer.temporal_weight =
        Tensor::randn({width, config_.temporal_kernel}, rng,
                      1.0 / std::sqrt(static_cast<double>(config_.temporal_kernel)), true)
            .set_name(prefix + ".temporal.weight");
    layer.temporal_bias = Tensor::zeros({width}, true).set_name(prefix + ".temporal.bias");
    layers_.push_back(std::move(layer));
    in_width = width;
  }

  classifier_weight_ =
      Tensor::randn({in_width, config_.num_classes}, rng,
                    1.0 / std::sqrt(static_cast<double>(in_width)), true)
          .set_name("classifier.weight");
  classifier_bias_ = Tensor::zeros({config_.num_classes}, true).set_name("classifier.bias");
}

Model::Forward Model::run(const Tensor& input, std::vector<Tensor>* topologies) const {
  if (input.rank() != 3 || input.extent(0) != config_.joints ||
      input.extent(2) != config_.in_channels) {
    throw ShapeError("model: input " + shape_str(input.shape()) + " does not match " +
                     std::to_string(config_.joints) + " joints with " +
                     std::to_string(config_.in_channels) + " channels");
  }
  Tensor h = input;
  Tensor reconstruction;
  for (const LayerParams& layer : layers_) {
    LayerOutput out = layer_forward(h, layer, config_.use_prototypes);
    h = out.features;
    reconstruction = out.reconstruction;
    if (topologies) topologies->push_back(out.adjacency);
  }
  const int width = config_.widths.back();
  const Tensor pooled =
      ops::reshape(ops::mean_over_axis(ops::mean_over_axis(h, 1), 0), {1, width});
  const Tensor logits = ops::add(ops::matmul(pooled, classifier_weight_),
                                 ops::reshape(classifier_bias_, {1, config_.num_classes}));
  return Forward{logits, reconstruction};
}

Model::Forward Model::forward(const Tensor& input) const { return run(input, nullptr); }

std::vector<Tensor> Model::effective_topologies(const Tensor& input) const {
  std::vector<Tensor> topologies;
  run(input, &topologies);
  return topologies;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  std::set<const detail::TensorImpl*> seen;
  auto push = [&](const Tensor& t) {
    if (seen.insert(t.impl().get()).second) out.push_back(t);
  };
  for (const LayerParams& layer : layers_) {
    push(layer.w);
    push(layer.base_topology);
    for (const Tensor& t : layer.mte.parameters()) push(t);
    for (const Tensor& t : layer.memory.parameters()) push(t);
    push(layer.temporal_weight);
    push(layer.temporal_bias);
  }
  push(classifier_weight_);
  push(classifier_bias_);
  return out;
}

std::vector<Tensor> Model::trainable_parameters() const {
  if (config_.use_prototypes) return parameters();
  std::vector<Tensor> out;
  for (const Tensor& t : parameters()) {
    if (t.name().find(".prn.") != std::string::npos ||
        t.name().rfind("prn.shared", 0) == 0) {
      continue;
    }
    out.push_back(t);
  }
  return out;
}

void Model::zero_grad() const {
  for (const Tensor& t : parameters()) t.impl()->grad.clear();
}

void Model::load_parameters(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> params = parameters();
  for (const auto& [name, value] : named) {
    bool found = false;
    for (Tensor& p : params) {
      if (p.name() != name) continue;
      if (p.shape() != value.shape()) {
        throw ConfigError("checkpoint parameter '" + name + "' has shape " +
                          shape_str(value.shape()) + ", model expects " + shape_str(p.shape()));
      }
      std::copy(value.data().begin(), value.data().end(), p.data().begin());
      found = true;
      break;
    }
    if (!found) throw ConfigError("checkpoint parameter '" + name + "' not present in model");
  }
}

}  // namespace skelgcn
