#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skelgcn/prototype.hpp"
#include "skelgcn/tensor.hpp"
#include "skelgcn/topology.hpp"

namespace skelgcn {

struct BackboneConfig {
  int joints = 5;
  int frames = 16;
  int in_channels = 3;
  std::vector<int> widths{16, 32, 32, 64};
  int heads = 2;
  int prototypes = 8;
  int temporal_kernel = 9;
  int num_classes = 3;
  int embed_dim = 16;            // contrastive embedding width d
  bool use_prototypes = true;    // reconstruction in the topology path
  bool share_prototypes = false; // one memory across layers (equal widths only)

  int layers() const { return static_cast<int>(widths.size()); }
  void validate() const;
};

struct LayerParams {
  Tensor w;               // feature projection, C_{l-1} x C_l
  Tensor base_topology;   // class-shared learnable topology, N x N x C_l
  MteParams mte;
  PrototypeMemory memory;
  Tensor temporal_weight;  // C_l x k
  Tensor temporal_bias;    // C_l
};

// Depthwise temporal convolution plus identity residual (widths never change
// inside the block, so the shortcut is always the identity).
Tensor temporal_block(const Tensor& features, const Tensor& kernel, const Tensor& bias);

struct LayerOutput {
  Tensor features;        // N x T x C_l
  Tensor adjacency;       // effective topology used by the contraction
  Tensor reconstruction;  // flattened topology fed to the contrastive head
};

LayerOutput layer_forward(const Tensor& input, const LayerParams& params, bool use_prototypes);

class Model {
 public:
  Model(BackboneConfig config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  struct Forward {
    Tensor logits;          // 1 x c
    Tensor reconstruction;  // final layer's N^2 x C_L
  };
  Forward forward(const Tensor& input) const;

  // Effective adjacency of every layer for one input, for topology export.
  std::vector<Tensor> effective_topologies(const Tensor& input) const;

  // Stable-named parameters in construction order, deduplicated when layers
  // share a prototype memory.
  std::vector<Tensor> parameters() const;
  // parameters() minus the prototype memories when the reconstruction path is
  // bypassed (they would never receive gradients).
  std::vector<Tensor> trainable_parameters() const;
  void zero_grad() const;

  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  Tensor classifier_weight() const { return classifier_weight_; }
  Tensor classifier_bias() const { return classifier_bias_; }

  // Replaces parameter values by checkpoint name; throws on unknown names or
  // shape mismatches.
  void load_parameters(const std::vector<std::pair<std::string, Tensor>>& named);

 private:
  Forward run(const Tensor& input, std::vector<Tensor>* topologies) const;

  BackboneConfig config_;
  std::vector<LayerParams> layers_;
  Tensor classifier_weight_;  // C_L x c
  Tensor classifier_bias_;    // c
};

}  // namespace skelgcn
