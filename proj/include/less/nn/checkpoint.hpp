#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "less/nn/tensor.hpp"

namespace less::nn {

/// Named-tensor container.
///
/// On-disk layout (all integers little-endian):
///
///   magic    8 bytes   "LESSCKPT"
///   version  u32       kCheckpointVersion
///   kind     str       model family, e.g. "encoder" or "fusion"
///   config   str       config echo, one `key=value` per line
///   count    u32       number of tensors
///   tensor * count:
///     name   str
///     dtype  u8        4 = float32, 8 = float64
///     ndim   u32
///     dims   u64 * ndim
///     data   row-major values of the given dtype
///
/// where `str` is a u32 byte length followed by UTF-8 bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::string kind;
  std::string config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

enum class DType : std::uint8_t { kFloat32 = 4, kFloat64 = 8 };

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                      DType dtype = DType::kFloat32);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <class T>
Checkpoint make_checkpoint(std::string kind, std::string config, const ParamRefs<T>& params) {
  Checkpoint ck{std::move(kind), std::move(config), {}};
  for (const auto* p : params) {
    NamedTensor t;
    t.name = p->name;
    t.shape = {static_cast<std::uint64_t>(p->value.rows()), static_cast<std::uint64_t>(p->value.cols())};
    t.data.assign(p->value.data(), p->value.data() + p->value.size());
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Copies tensors into `params` by name. Every parameter must be present
/// with a matching shape.
template <class T>
void load_parameters(const Checkpoint& ck, const ParamRefs<T>& params) {
  for (auto* p : params) {
    const NamedTensor* t = ck.find(p->name);
    if (!t) throw ShapeError("checkpoint lacks tensor '" + p->name + "'");
    if (t->shape.size() != 2 || t->shape[0] != static_cast<std::uint64_t>(p->value.rows()) ||
        t->shape[1] != static_cast<std::uint64_t>(p->value.cols())) {
      throw ShapeError("checkpoint tensor '" + p->name + "' has the wrong shape");
    }
    for (Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<T>(t->data[i]);
  }
}

}  // namespace less::nn
