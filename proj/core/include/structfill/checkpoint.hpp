#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "structfill/tensor.hpp"

namespace sfill {

// A checkpoint directory holds one NPY file per named tensor (parameters and
// optimizer moments alike) plus manifest.json with names, shapes, dtypes,
// the step counter, and free-form extras (config snapshot, rng state).
struct CheckpointData {
  int64_t step = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::map<std::string, std::string> extra;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const std::string& dir, const CheckpointData& ck);
CheckpointData load_checkpoint(const std::string& dir);

// FNV-1a over tensor names and raw values in manifest order, hex-encoded.
std::string checkpoint_digest(const CheckpointData& ck);

std::string file_digest(const std::string& path);

}  // namespace sfill
