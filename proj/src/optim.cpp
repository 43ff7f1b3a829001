#include "skelgcn/optim.hpp"

#include <cmath>
#include <numbers>

#include "skelgcn/error.hpp"

namespace skelgcn {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay,
                           std::vector<std::string> decay_exclude)
    : momentum_(momentum), weight_decay_(weight_decay) {
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("sgd: weight decay must be nonnegative");
  for (Tensor& p : params) {
    if (!p.requires_grad()) {
      throw ConfigError("sgd: parameter '" + p.name() + "' does not require gradients");
    }
    bool decay = true;
    for (const std::string& pattern : decay_exclude) {
      if (!pattern.empty() && p.name().find(pattern) != std::string::npos) decay = false;
    }
    slots_.push_back(Slot{p, std::vector<double>(p.data().size(), 0.0), decay});
  }
}

void SgdOptimizer::step(double lr) {
  for (Slot& slot : slots_) {
    if (!slot.param.has_grad()) {
      throw ConfigError("sgd: missing gradient for parameter '" + slot.param.name() + "'");
    }
    auto theta = slot.param.data();
    const auto grad = slot.param.grad();
    const double wd = slot.decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i] + wd * theta[i];
      slot.velocity[i] = momentum_ * slot.velocity[i] + g;
      theta[i] -= lr * (g + momentum_ * slot.velocity[i]);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> SgdOptimizer::velocities() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Slot& slot : slots_) {
    out.emplace_back("velocity." + slot.param.name(),
                     Tensor::from_data(slot.param.shape(),
                                       std::vector<double>(slot.velocity.begin(),
                                                           slot.velocity.end())));
  }
  return out;
}

void SgdOptimizer::load_velocities(const std::vector<std::pair<std::string, Tensor>>& named) {
  for (const auto& [name, value] : named) {
    bool found = false;
    for (Slot& slot : slots_) {
      if ("velocity." + slot.param.name() != name) continue;
      if (value.shape() != slot.param.shape()) {
        throw ConfigError("velocity '" + name + "' has shape " + shape_str(value.shape()) +
                          ", parameter expects " + shape_str(slot.param.shape()));
      }
      slot.velocity.assign(value.data().begin(), value.data().end());
      found = true;
      break;
    }
    if (!found) throw ConfigError("velocity '" + name + "' matches no optimizer parameter");
  }
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw ConfigError("cosine_lr: total epochs must be positive");
  if (epoch < 0 || epoch > total_epochs) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                      std::to_string(total_epochs) + "]");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / total_epochs));
}

}  // namespace skelgcn
