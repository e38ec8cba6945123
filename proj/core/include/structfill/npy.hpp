#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sfill {

// Minimal NPY v1.0 container: little-endian f4/f8, C order only.
struct NpyArray {
  std::vector<int64_t> shape;
  std::string descr;  // "<f4" or "<f8"
  std::vector<unsigned char> raw;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  bool is_f32() const { return descr == "<f4"; }
  bool is_f64() const { return descr == "<f8"; }
  const float* f32() const { return reinterpret_cast<const float*>(raw.data()); }
  const double* f64() const { return reinterpret_cast<const double*>(raw.data()); }
  std::vector<double> as_f64() const;
};

void npy_save(const std::string& path, const float* data, const std::vector<int64_t>& shape);
void npy_save(const std::string& path, const double* data, const std::vector<int64_t>& shape);
NpyArray npy_load(const std::string& path);

}  // namespace sfill
