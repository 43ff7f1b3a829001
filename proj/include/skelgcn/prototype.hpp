#pragma once

#include <random>
#include <string>
#include <vector>

#include "skelgcn/tensor.hpp"

namespace skelgcn {

// Learnable prototype store plus the query projection used to address it.
// Rows of w_memory are the stored joint-relationship patterns.
struct PrototypeMemory {
  Tensor w_memory;  // n_pro x C
  Tensor w_query;   // n_pro x C

  static PrototypeMemory init(int prototypes, int channels, std::mt19937_64& rng,
                              const std::string& name_prefix);

  int prototypes() const { return w_memory.extent(0); }
  int channels() const { return w_memory.extent(1); }
  std::vector<Tensor> parameters() const { return {w_query, w_memory}; }
};

// N x N x C -> N^2 x C with row r = i*N + j for the joint pair (i, j).
Tensor flatten_topology(const Tensor& adjacency);
Tensor unflatten_topology(const Tensor& flat, int joints);

// Softmax response of every flattened topology row against the queries:
// R = softmax_rows(X * w_query^T), shape N^2 x n_pro.
Tensor address(const Tensor& flat, const PrototypeMemory& memory);

// Convex recombination of the stored prototypes: Z = R * w_memory.
Tensor reconstruct(const Tensor& response, const PrototypeMemory& memory);

struct Refinement {
  Tensor refined;         // N x N x C, the reconstructed adjacency
  Tensor reconstruction;  // N^2 x C, fed onward to the contrastive head
  Tensor response;        // N^2 x n_pro
};

Refinement refine_topology(const Tensor& adjacency, const PrototypeMemory& memory);

}  // namespace skelgcn
