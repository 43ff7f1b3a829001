#include "skelgcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "skelgcn/error.hpp"
#include "skelgcn/rng.hpp"

namespace skelgcn {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'K', 'E', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xff),
                                       static_cast<unsigned char>((v >> 8) & 0xff),
                                       static_cast<unsigned char>((v >> 16) & 0xff),
                                       static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

SkeletonGraph SkeletonGraph::chain_pair(int joints) {
  SkeletonGraph g;
  g.joints = joints;
  g.parents.assign(static_cast<std::size_t>(joints), -1);
  for (int j = 1; j < joints; ++j) {
    g.parents[static_cast<std::size_t>(j)] = j <= 2 ? 0 : j - 2;
  }
  g.validate();
  return g;
}

void SkeletonGraph::validate() const {
  if (joints < 2) throw ConfigError("skeleton graph needs at least 2 joints");
  if (static_cast<int>(parents.size()) != joints) {
    throw ConfigError("skeleton graph parent map size mismatch");
  }
  int roots = 0;
  for (int j = 0; j < joints; ++j) {
    const int p = parents[static_cast<std::size_t>(j)];
    if (p == -1) {
      ++roots;
      continue;
    }
    if (p < 0 || p >= joints || p == j) throw ConfigError("skeleton graph has an invalid parent");
  }
  if (roots != 1) throw ConfigError("skeleton graph must have exactly one root");
  // walking up from any joint must terminate at the root
  for (int j = 0; j < joints; ++j) {
    int cursor = j, steps = 0;
    while (parents[static_cast<std::size_t>(cursor)] != -1) {
      cursor = parents[static_cast<std::size_t>(cursor)];
      if (++steps > joints) throw ConfigError("skeleton graph contains a cycle");
    }
  }
}

Tensor SkeletonSequence::to_tensor() const {
  std::vector<double> values(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) values[i] = static_cast<double>(coords[i]);
  return Tensor::from_data({joints, frames, channels}, std::move(values));
}

float& SkeletonSequence::at(int joint, int frame, int channel) {
  return coords[static_cast<std::size_t>((joint * frames + frame) * channels + channel)];
}

float SkeletonSequence::at(int joint, int frame, int channel) const {
  return coords[static_cast<std::size_t>((joint * frames + frame) * channels + channel)];
}

std::string to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::kJoint: return "joint";
    case ModalityKind::kBone: return "bone";
    case ModalityKind::kJointMotion: return "joint-motion";
    case ModalityKind::kBoneMotion: return "bone-motion";
  }
  return "joint";
}

ModalityKind parse_modality(const std::string& text) {
  if (text == "joint") return ModalityKind::kJoint;
  if (text == "bone") return ModalityKind::kBone;
  if (text == "joint-motion") return ModalityKind::kJointMotion;
  if (text == "bone-motion") return ModalityKind::kBoneMotion;
  throw ConfigError("unknown modality kind '" + text + "'");
}

namespace {

SkeletonSequence bone_view(const SkeletonSequence& seq, const SkeletonGraph& graph) {
  SkeletonSequence out = seq;
  for (int j = 0; j < seq.joints; ++j) {
    const int p = graph.parents[static_cast<std::size_t>(j)];
    for (int t = 0; t < seq.frames; ++t) {
      for (int c = 0; c < seq.channels; ++c) {
        out.at(j, t, c) = p == -1 ? 0.0f : seq.at(j, t, c) - seq.at(p, t, c);
      }
    }
  }
  return out;
}

SkeletonSequence motion_view(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  for (int j = 0; j < seq.joints; ++j) {
    for (int t = 0; t < seq.frames; ++t) {
      for (int c = 0; c < seq.channels; ++c) {
        out.at(j, t, c) =
            t + 1 < seq.frames ? seq.at(j, t + 1, c) - seq.at(j, t, c) : 0.0f;
      }
    }
  }
  return out;
}

}  // namespace

ModalityView to_modality(const SkeletonSequence& seq, ModalityKind kind,
                         const SkeletonGraph& graph) {
  if (kind != ModalityKind::kJoint && kind != ModalityKind::kJointMotion) {
    if (graph.joints != seq.joints) {
      throw ConfigError("modality graph has " + std::to_string(graph.joints) +
                        " joints but sequence has " + std::to_string(seq.joints));
    }
  }
  ModalityView view;
  view.kind = kind;
  switch (kind) {
    case ModalityKind::kJoint: view.data = seq; break;
    case ModalityKind::kBone: view.data = bone_view(seq, graph); break;
    case ModalityKind::kJointMotion: view.data = motion_view(seq); break;
    case ModalityKind::kBoneMotion: view.data = motion_view(bone_view(seq, graph)); break;
  }
  return view;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, kFormatVersion);
  write_u32(os, static_cast<std::uint32_t>(dataset.joints));
  write_u32(os, static_cast<std::uint32_t>(dataset.frames));
  write_u32(os, static_cast<std::uint32_t>(dataset.channels));
  write_u32(os, static_cast<std::uint32_t>(dataset.num_classes));
  write_u32(os, static_cast<std::uint32_t>(dataset.sequences.size()));
  for (const SkeletonSequence& seq : dataset.sequences) {
    write_u32(os, static_cast<std::uint32_t>(seq.subject_id));
    write_u32(os, static_cast<std::uint32_t>(seq.label));
    for (float v : seq.coords) write_f32(os, v);
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw IoError("truncated file while reading magic");
  if (magic != kMagic) throw IoError("bad magic in '" + path + "', not a skeleton dataset");
  const std::uint32_t version = read_u32(is, "version");
  if (version != kFormatVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version));
  }
  Dataset dataset;
  dataset.joints = static_cast<int>(read_u32(is, "joint count"));
  dataset.frames = static_cast<int>(read_u32(is, "frame count"));
  dataset.channels = static_cast<int>(read_u32(is, "channel count"));
  dataset.num_classes = static_cast<int>(read_u32(is, "class count"));
  const std::uint32_t count = read_u32(is, "sequence count");
  if (dataset.joints < 2 || dataset.frames < 1 || dataset.channels < 1) {
    throw IoError("invalid dataset header (joints/frames/channels)");
  }
  dataset.sequences.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SkeletonSequence seq;
    seq.joints = dataset.joints;
    seq.frames = dataset.frames;
    seq.channels = dataset.channels;
    seq.subject_id = static_cast<int>(read_u32(is, "subject id"));
    seq.label = static_cast<int>(read_u32(is, "label"));
    if (seq.label < 0 || seq.label >= dataset.num_classes) {
      throw IoError("label " + std::to_string(seq.label) + " out of range [0," +
                    std::to_string(dataset.num_classes) + ") in sequence " + std::to_string(i));
    }
    const std::size_t n =
        static_cast<std::size_t>(dataset.joints) * dataset.frames * dataset.channels;
    seq.coords.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      seq.coords[j] = read_f32(is, "coordinates");
      if (!std::isfinite(seq.coords[j])) {
        throw IoError("non-finite coordinate in sequence " + std::to_string(i));
      }
    }
    dataset.sequences.push_back(std::move(seq));
  }
  return dataset;
}

void export_csv(const SkeletonSequence& seq, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "# joints=" << seq.joints << " frames=" << seq.frames << " channels=" << seq.channels
     << " label=" << seq.label << " subject=" << seq.subject_id << "\n";
  for (int t = 0; t < seq.frames; ++t) {
    for (int j = 0; j < seq.joints; ++j) {
      for (int c = 0; c < seq.channels; ++c) {
        if (j || c) os << ',';
        os << seq.at(j, t, c);
      }
    }
    os << "\n";
  }
}

namespace {

struct JointMotion {
  double amplitude = 0.0;
  double phase = 0.0;
  std::array<double, 3> direction{0.0, 0.0, 0.0};
};

struct MotionFamily {
  double frequency = 1.0;
  std::vector<JointMotion> joints;
};

MotionFamily draw_family(std::mt19937_64& rng, int joints) {
  std::uniform_real_distribution<double> freq(0.8, 2.6);
  std::uniform_real_distribution<double> amp(0.4, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MotionFamily family;
  family.frequency = freq(rng);
  family.joints.resize(static_cast<std::size_t>(joints));
  for (JointMotion& jm : family.joints) {
    jm.amplitude = amp(rng);
    jm.phase = phase(rng);
    double norm = 0.0;
    for (double& d : jm.direction) {
      d = gauss(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (double& d : jm.direction) d = norm > 1e-9 ? d / norm : 1.0;
  }
  return family;
}

MotionFamily blend(const MotionFamily& own, const MotionFamily& shared, double s) {
  MotionFamily out = own;
  out.frequency = (1.0 - s) * own.frequency + s * shared.frequency;
  for (std::size_t j = 0; j < out.joints.size(); ++j) {
    JointMotion& jm = out.joints[j];
    const JointMotion& sh = shared.joints[j];
    jm.amplitude = (1.0 - s) * jm.amplitude + s * sh.amplitude;
    jm.phase = (1.0 - s) * jm.phase + s * sh.phase;
    double norm = 0.0;
    for (int c = 0; c < 3; ++c) {
      jm.direction[static_cast<std::size_t>(c)] =
          (1.0 - s) * jm.direction[static_cast<std::size_t>(c)] +
          s * sh.direction[static_cast<std::size_t>(c)];
      norm += jm.direction[static_cast<std::size_t>(c)] * jm.direction[static_cast<std::size_t>(c)];
    }
    norm = std::sqrt(norm);
    if (norm > 1e-9) {
      for (double& d : jm.direction) d /= norm;
    }
  }
  return out;
}

std::array<double, 3> rest_position(int joint, int joints) {
  if (joint == 0) return {0.0, 0.0, 0.0};
  const double angle = 2.0 * std::numbers::pi * joint / joints;
  return {std::cos(angle), std::sin(angle), 0.15 * joint};
}

}  // namespace

Dataset synth_generate(const SynthConfig& config) {
  if (config.classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (config.per_class < 1) throw ConfigError("synth: per_class must be positive");
  if (config.joints < 2) throw ConfigError("synth: need at least 2 joints");
  if (config.frames < 1) throw ConfigError("synth: need at least 1 frame");
  if (config.similarity < 0.0 || config.similarity > 1.0) {
    throw ConfigError("synth: similarity must lie in [0,1]");
  }
  if (config.subjects < 1) throw ConfigError("synth: subjects must be positive");

  auto shared_rng = make_rng(derive_seed(config.seed, "synth_shared"));
  const MotionFamily shared = draw_family(shared_rng, config.joints);

  std::vector<MotionFamily> families;
  families.reserve(static_cast<std::size_t>(config.classes));
  for (int k = 0; k < config.classes; ++k) {
    auto rng = make_rng(derive_seed(config.seed, "synth_class", static_cast<std::uint64_t>(k)));
    families.push_back(blend(draw_family(rng, config.joints), shared, config.similarity));
  }

  std::vector<double> subject_scale(static_cast<std::size_t>(config.subjects));
  for (int s = 0; s < config.subjects; ++s) {
    auto rng = make_rng(derive_seed(config.seed, "synth_subject", static_cast<std::uint64_t>(s)));
    subject_scale[static_cast<std::size_t>(s)] =
        std::uniform_real_distribution<double>(0.9, 1.1)(rng);
  }

  Dataset dataset;
  dataset.joints = config.joints;
  dataset.frames = config.frames;
  dataset.channels = 3;
  dataset.num_classes = config.classes;
  dataset.sequences.reserve(static_cast<std::size_t>(config.classes) * config.per_class);

  for (int k = 0; k < config.classes; ++k) {
    const MotionFamily& family = families[static_cast<std::size_t>(k)];
    for (int i = 0; i < config.per_class; ++i) {
      const std::uint64_t gid = static_cast<std::uint64_t>(k) * config.per_class + i;
      auto rng = make_rng(derive_seed(config.seed, "synth_sequence", gid));
      std::uniform_real_distribution<double> phase_jitter(-0.1, 0.1);
      std::uniform_real_distribution<double> amp_jitter(0.95, 1.05);
      std::normal_distribution<double> gauss(0.0, 1.0);

      SkeletonSequence seq;
      seq.joints = config.joints;
      seq.frames = config.frames;
      seq.channels = 3;
      seq.label = k;
      seq.subject_id = i % config.subjects;
      seq.coords.resize(static_cast<std::size_t>(config.joints) * config.frames * 3);

      const double scale = subject_scale[static_cast<std::size_t>(seq.subject_id)];
      const double dphase = phase_jitter(rng);
      const double damp = amp_jitter(rng);
      for (int j = 0; j < config.joints; ++j) {
        const JointMotion& jm = family.joints[static_cast<std::size_t>(j)];
        const std::array<double, 3> rest = rest_position(j, config.joints);
        // the root mostly anchors the figure; arm joints carry the action
        const double amp = (j == 0 ? 0.05 : jm.amplitude) * scale * damp;
        for (int t = 0; t < config.frames; ++t) {
          const double wave = std::sin(2.0 * std::numbers::pi * family.frequency * t /
                                           config.frames +
                                       jm.phase + dphase);
          for (int c = 0; c < 3; ++c) {
            const double value = rest[static_cast<std::size_t>(c)] +
                                 amp * wave * jm.direction[static_cast<std::size_t>(c)] +
                                 config.noise * gauss(rng);
            seq.at(j, t, c) = static_cast<float>(value);
          }
        }
      }
      dataset.sequences.push_back(std::move(seq));
    }
  }
  return dataset;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double ratio, bool by_subject,
                                  std::uint64_t seed) {
  if (ratio <= 0.0 || ratio >= 1.0) throw ConfigError("split: ratio must lie in (0,1)");
  Dataset train = dataset, test = dataset;
  train.sequences.clear();
  test.sequences.clear();

  auto rng = make_rng(derive_seed(seed, "split"));
  if (by_subject) {
    std::set<int> subject_set;
    for (const SkeletonSequence& seq : dataset.sequences) subject_set.insert(seq.subject_id);
    if (subject_set.size() < 2) throw ConfigError("split: too few subjects for a subject split");
    std::vector<int> subjects(subject_set.begin(), subject_set.end());
    std::shuffle(subjects.begin(), subjects.end(), rng);
    std::size_t take = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(subjects.size())));
    take = std::clamp<std::size_t>(take, 1, subjects.size() - 1);
    const std::set<int> train_subjects(subjects.begin(), subjects.begin() + take);
    for (const SkeletonSequence& seq : dataset.sequences) {
      (train_subjects.count(seq.subject_id) ? train : test).sequences.push_back(seq);
    }
  } else {
    if (dataset.sequences.size() < 2) throw ConfigError("split: need at least 2 sequences");
    std::vector<std::size_t> order(dataset.sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t take =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(order.size())));
    take = std::clamp<std::size_t>(take, 1, order.size() - 1);
    std::vector<bool> in_train(order.size(), false);
    for (std::size_t i = 0; i < take; ++i) in_train[order[i]] = true;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (in_train[i] ? train : test).sequences.push_back(dataset.sequences[i]);
    }
  }
  return {std::move(train), std::move(test)};
}

}  // namespace skelgcn
