#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skelgcn/tensor.hpp"

namespace skelgcn {

// SGD in the Nesterov velocity-lookahead form:
//   g <- grad + weight_decay * theta
//   v <- momentum * v + g
//   theta <- theta - lr * (g + momentum * v)
// momentum = 0 reduces it to vanilla gradient descent.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay,
               std::vector<std::string> decay_exclude = {});

  void step(double lr);

  // Velocity buffers under stable "velocity.<param>" names for checkpoints.
  std::vector<std::pair<std::string, Tensor>> velocities() const;
  void load_velocities(const std::vector<std::pair<std::string, Tensor>>& named);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> velocity;
    bool decay;
  };
  std::vector<Slot> slots_;
  double momentum_;
  double weight_decay_;
};

// base_lr * (1 + cos(pi * epoch / total_epochs)) / 2
double cosine_lr(int epoch, int total_epochs, double base_lr);

}  // namespace skelgcn
