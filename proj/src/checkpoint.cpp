#include "skelgcn/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "skelgcn/error.hpp"

namespace skelgcn {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'K', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

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
    throw IoError(std::string("truncated checkpoint while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const std::uint32_t n = read_u32(is, what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) {
    throw IoError(std::string("truncated checkpoint while reading ") + what);
  }
  return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return &value;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, kVersion);

  const BackboneConfig& c = checkpoint.config;
  write_u32(os, static_cast<std::uint32_t>(c.joints));
  write_u32(os, static_cast<std::uint32_t>(c.frames));
  write_u32(os, static_cast<std::uint32_t>(c.in_channels));
  write_u32(os, static_cast<std::uint32_t>(c.widths.size()));
  for (int w : c.widths) write_u32(os, static_cast<std::uint32_t>(w));
  write_u32(os, static_cast<std::uint32_t>(c.heads));
  write_u32(os, static_cast<std::uint32_t>(c.prototypes));
  write_u32(os, static_cast<std::uint32_t>(c.temporal_kernel));
  write_u32(os, static_cast<std::uint32_t>(c.num_classes));
  write_u32(os, static_cast<std::uint32_t>(c.embed_dim));
  write_u32(os, (c.use_prototypes ? 1u : 0u) | (c.share_prototypes ? 2u : 0u));
  write_string(os, checkpoint.stream);

  write_u32(os, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    write_string(os, name);
    write_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (int d : tensor.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(os, bits);
    }
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) {
    throw IoError("truncated checkpoint while reading magic");
  }
  if (magic != kMagic) throw IoError("bad magic in '" + path + "', not a checkpoint");
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint checkpoint;
  BackboneConfig& c = checkpoint.config;
  c.joints = static_cast<int>(read_u32(is, "joints"));
  c.frames = static_cast<int>(read_u32(is, "frames"));
  c.in_channels = static_cast<int>(read_u32(is, "in_channels"));
  const std::uint32_t layer_count = read_u32(is, "layer count");
  c.widths.clear();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    c.widths.push_back(static_cast<int>(read_u32(is, "width")));
  }
  c.heads = static_cast<int>(read_u32(is, "heads"));
  c.prototypes = static_cast<int>(read_u32(is, "prototypes"));
  c.temporal_kernel = static_cast<int>(read_u32(is, "temporal kernel"));
  c.num_classes = static_cast<int>(read_u32(is, "class count"));
  c.embed_dim = static_cast<int>(read_u32(is, "embedding width"));
  const std::uint32_t flags = read_u32(is, "flags");
  c.use_prototypes = (flags & 1u) != 0;
  c.share_prototypes = (flags & 2u) != 0;
  checkpoint.stream = read_string(is, "stream");

  const std::uint32_t count = read_u32(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(is, "tensor name");
    const std::uint32_t rank = read_u32(is, "tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(read_u32(is, "tensor extent")));
    }
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : values) {
      const std::uint32_t bits = read_u32(is, "tensor data");
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<double>(f);
    }
    checkpoint.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(values)));
  }
  return checkpoint;
}

}  // namespace skelgcn
