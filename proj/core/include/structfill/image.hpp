#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "structfill/tensor.hpp"

namespace sfill {

// Row-major HWC raster; images hold [0,1] values with 1 or 3 channels,
// gradient maps reuse the container with 6 signed channels.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {
    if (h_ < 1 || w_ < 1 || (c_ != 1 && c_ != 3 && c_ != 6))
      throw std::runtime_error("Image: bad dimensions " + std::to_string(h_) + "x" +
                               std::to_string(w_) + "x" + std::to_string(c_));
  }

  double& at(int y, int x, int ch) {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  double at(int y, int x, int ch) const {
    return data[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  int64_t numel() const { return static_cast<int64_t>(h) * w * c; }
};

Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& img);
void save_jpeg(const std::string& path, const Image& img, int quality = 95);

Image to_gray(const Image& img);
Image to_rgb(const Image& img);

// HWC [0,1] raster <-> (1,c,h,w) tensor
template <class T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t(Shape(1, img.c, img.h, img.w));
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.data()[t.index(0, ch, y, x)] = static_cast<T>(img.at(y, x, ch));
  return t;
}

template <class T>
Image tensor_to_image(const Tensor<T>& t, int sample = 0) {
  const Shape s = t.shape();
  Image img(s.h, s.w, s.c == 1 ? 1 : 3);
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        double v = static_cast<double>(t.data()[t.index(sample, std::min(ch, s.c - 1), y, x)]);
        img.at(y, x, ch) = std::min(1.0, std::max(0.0, v));
      }
  return img;
}

}  // namespace sfill
