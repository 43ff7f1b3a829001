#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "skelgcn/tensor.hpp"

namespace skelgcn {

// Tree over the joints. parents[root] == -1, every other joint points at an
// earlier-validated parent; the constructor rejects cycles and extra roots.
struct SkeletonGraph {
  int joints = 0;
  std::vector<int> parents;

  static SkeletonGraph chain_pair(int joints);  // root with two alternating arms
  void validate() const;
};

// One labeled motion sample: row-major joints x frames x channels, f32 as on disk.
struct SkeletonSequence {
  int joints = 0;
  int frames = 0;
  int channels = 3;
  std::vector<float> coords;
  int label = 0;
  int subject_id = 0;

  Tensor to_tensor() const;
  float& at(int joint, int frame, int channel);
  float at(int joint, int frame, int channel) const;
};

struct Dataset {
  int joints = 0;
  int frames = 0;
  int channels = 3;
  int num_classes = 0;
  std::vector<SkeletonSequence> sequences;

  std::size_t size() const { return sequences.size(); }
};

enum class ModalityKind { kJoint, kBone, kJointMotion, kBoneMotion };

std::string to_string(ModalityKind kind);
ModalityKind parse_modality(const std::string& text);

struct ModalityView {
  ModalityKind kind = ModalityKind::kJoint;
  SkeletonSequence data;
};

ModalityView to_modality(const SkeletonSequence& seq, ModalityKind kind,
                         const SkeletonGraph& graph);

// Binary container: magic 'SKEL', version, N, T, C_in, class count, sequence
// count, then per-sequence records (subject u32, label u32, f32 coords).
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

void export_csv(const SkeletonSequence& seq, const std::string& path);

struct SynthConfig {
  std::uint64_t seed = 1;
  int classes = 3;
  int per_class = 20;
  int joints = 5;
  int frames = 16;
  double similarity = 0.0;  // 0 fully distinct classes, 1 coinciding trajectory families
  int subjects = 10;
  double noise = 0.05;
};

// Deterministic parametric motion families, one per class. `similarity`
// interpolates every class's trajectory parameters toward one shared family,
// so high values leave only small per-joint differences between classes.
Dataset synth_generate(const SynthConfig& config);

// Disjoint, exhaustive split. With by_subject no subject id appears on both
// sides; ratio applies to the subject pool instead of the sequence list.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double ratio, bool by_subject,
                                  std::uint64_t seed);

}  // namespace skelgcn
