#include "less/nn/checkpoint.hpp"

#include <array>
#include <fstream>

#include "less/binary_io.hpp"

namespace less::nn {

namespace {
constexpr std::array<char, 8> kMagic{'L', 'E', 'S', 'S', 'C', 'K', 'P', 'T'};
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic.data(), kMagic.size());
  io::write_pod<std::uint32_t>(os, kCheckpointVersion);
  io::write_string(os, ck.kind);
  io::write_string(os, ck.config);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    io::write_string(os, t.name);
    io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) io::write_pod<std::uint64_t>(os, d);
    for (double v : t.data) {
      if (dtype == DType::kFloat32) {
        io::write_pod<float>(os, static_cast<float>(v));
      } else {
        io::write_pod<double>(os, v);
      }
    }
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
  const auto version = io::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.kind = io::read_string(is);
  ck.config = io::read_string(is);
  const auto count = io::read_pod<std::uint32_t>(is);
  ck.tensors.resize(count);
  for (auto& t : ck.tensors) {
    t.name = io::read_string(is);
    const auto dtype = io::read_pod<std::uint8_t>(is);
    if (dtype != 4 && dtype != 8) throw std::runtime_error("bad dtype in checkpoint");
    const auto ndim = io::read_pod<std::uint32_t>(is);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(io::read_pod<std::uint64_t>(is));
      numel *= t.shape.back();
    }
    t.data.resize(numel);
    for (auto& v : t.data) {
      v = dtype == 4 ? static_cast<double>(io::read_pod<float>(is)) : io::read_pod<double>(is);
    }
  }
  return ck;
}

}  // namespace less::nn
