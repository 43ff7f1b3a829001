#include "skelgcn/prototype.hpp"

#include <cmath>

#include "skelgcn/error.hpp"

namespace skelgcn {

PrototypeMemory PrototypeMemory::init(int prototypes, int channels, std::mt19937_64& rng,
                                      const std::string& name_prefix) {
  if (prototypes < 1) throw ConfigError("prototype memory needs at least one prototype");
  if (channels < 1) throw ConfigError("prototype memory needs at least one channel");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(channels));
  PrototypeMemory memory;
  memory.w_memory = Tensor::randn({prototypes, channels}, rng, stddev, true)
                        .set_name(name_prefix + ".w_memory");
  memory.w_query = Tensor::randn({prototypes, channels}, rng, stddev, true)
                       .set_name(name_prefix + ".w_query");
  return memory;
}

Tensor flatten_topology(const Tensor& adjacency) {
  if (adjacency.rank() != 3 || adjacency.extent(0) != adjacency.extent(1)) {
    throw ShapeError("flatten_topology: expected NxNxC, got " + shape_str(adjacency.shape()));
  }
  const int joints = adjacency.extent(0);
  return ops::reshape(adjacency, {joints * joints, adjacency.extent(2)});
}

Tensor unflatten_topology(const Tensor& flat, int joints) {
  if (flat.rank() != 2 || flat.extent(0) != joints * joints) {
    throw ShapeError("unflatten_topology: expected " + std::to_string(joints * joints) +
                     " rows, got " + shape_str(flat.shape()));
  }
  return ops::reshape(flat, {joints, joints, flat.extent(1)});
}

Tensor address(const Tensor& flat, const PrototypeMemory& memory) {
  if (flat.rank() != 2 || flat.extent(1) != memory.channels()) {
    throw ShapeError("address: input " + shape_str(flat.shape()) + " does not match memory with " +
                     std::to_string(memory.channels()) + " channels");
  }
  return ops::softmax_rows(ops::matmul(flat, ops::transpose(memory.w_query)));
}

Tensor reconstruct(const Tensor& response, const PrototypeMemory& memory) {
  if (response.rank() != 2 || response.extent(1) != memory.prototypes()) {
    throw ShapeError("reconstruct: response " + shape_str(response.shape()) +
                     " does not match " + std::to_string(memory.prototypes()) + " prototypes");
  }
  const int rows = response.extent(0), cols = response.extent(1);
  for (int i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double v = response.at({i, j});
      if (v < 0.0) throw NumericError("reconstruct: negative response weight");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw NumericError("reconstruct: response row " + std::to_string(i) +
                         " sums to " + std::to_string(sum) + ", expected 1");
    }
  }
  return ops::matmul(response, memory.w_memory);
}

Refinement refine_topology(const Tensor& adjacency, const PrototypeMemory& memory) {
  Refinement result;
  result.response = address(flatten_topology(adjacency), memory);
  result.reconstruction = reconstruct(result.response, memory);
  result.refined = unflatten_topology(result.reconstruction, adjacency.extent(0));
  return result;
}

}  // namespace skelgcn
