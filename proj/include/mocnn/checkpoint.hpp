#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mocnn/tensor.hpp"

namespace mocnn {

inline constexpr std::string_view kCheckpointMagic = "MOCNN-CKPT v1";

struct NamedTensor {
  std::string name;
  Tensord value;
  bool trainable = true;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Layout:
//   MOCNN-CKPT v1\n
//   tensors <count>\n
//   per tensor: <name> <trainable 0|1> <rank> <dims...>\n followed by
//   rank-product float64 values, little-endian.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace mocnn
