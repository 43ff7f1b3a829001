#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skelgcn/model.hpp"
#include "skelgcn/tensor.hpp"

namespace skelgcn {

// Versioned binary snapshot: backbone config echo, the modality the run was
// trained on, and named f32 tensors (parameters, contrastive bank rows,
// optimizer velocities) keyed by their stable names.
struct Checkpoint {
  BackboneConfig config;
  std::string stream = "joint";
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace skelgcn
