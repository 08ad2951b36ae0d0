#include "less/nn/encoder.hpp"

#include "less/kv.hpp"

namespace less::nn {

namespace {

std::array<Index, 4> to_array4(const std::string& text, const char* key) {
  const auto v = parse_list<Index>(text);
  if (v.size() != 4) throw ConfigError(std::string("encoder spec: '") + key + "' needs 4 entries");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

std::string EncoderSpec::to_string() const {
  KeyValues kv;
  kv["input_px"] = std::to_string(input_px);
  kv["channels"] = join_list(channels);
  kv["kernels"] = join_list(kernels);
  kv["strides"] = join_list(strides);
  kv["pads"] = join_list(pads);
  kv["hidden"] = std::to_string(hidden);
  kv["embed_dim"] = std::to_string(embed_dim);
  return format_kv(kv);
}

EncoderSpec EncoderSpec::from_string(const std::string& text) {
  const KeyValues kv = parse_kv(text);
  EncoderSpec s;
  s.input_px = kv_get<Index>(kv, "input_px");
  s.channels = to_array4(kv.at("channels"), "channels");
  s.kernels = to_array4(kv.at("kernels"), "kernels");
  s.strides = to_array4(kv.at("strides"), "strides");
  s.pads = to_array4(kv.at("pads"), "pads");
  s.hidden = kv_get<Index>(kv, "hidden");
  s.embed_dim = kv_get<Index>(kv, "embed_dim");
  return s;
}

}  // namespace less::nn
