#pragma once

#include <string>
#include <vector>

#include "pcnn/tensor.hpp"

namespace pcnn {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// "PCK1" file: u32 count, then per entry u32 name length, UTF-8 name,
/// u32 rank, u32 dims, float64 payload. All little-endian.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace pcnn
