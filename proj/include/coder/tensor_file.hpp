#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "coder/common.hpp"

namespace coder {

/// Sectioned binary envelope shared by encoder checkpoints and trainer state:
/// magic (4 bytes) | version u32 LE = 1 | meta_len u32 | meta text
/// ("key = value" lines) | tensor_count u32 | per tensor: name_len u32, name,
/// rows u64, cols u64, rows*cols float64 LE.
struct TensorFile {
  struct Tensor {
    std::string name;
    uint64_t rows = 0;
    uint64_t cols = 0;
    std::vector<double> data;
  };
  std::map<std::string, std::string> meta;
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

void write_tensor_file(const std::string& path, const char magic[4], const TensorFile& file);
TensorFile read_tensor_file(const std::string& path, const char magic[4]);

}  // namespace coder
