#pragma once

#include "structfill/image.hpp"
#include "structfill/rng.hpp"

namespace sfill {

// 1-channel binary plane: 0 = known pixel, 1 = missing.
enum class MaskKind { Regular, Irregular };

struct MaskSpec {
  MaskKind kind = MaskKind::Irregular;
  // regular
  int hole_h = 0, hole_w = 0;  // 0 -> half the image side
  bool centered = true;
  // irregular free-form strokes; lengths/widths are fractions of image side,
  // tuned so the masked-area ratio lands in [0.05, 0.60] for >= 99% of draws
  int strokes_min = 2, strokes_max = 3;
  int vertices_min = 4, vertices_max = 10;
  double seg_len_min = 0.20, seg_len_max = 0.30;
  double width_min = 0.055, width_max = 0.09;
};

Image regular_mask(int h, int w, const MaskSpec& spec, Rng& rng);
Image irregular_mask(int h, int w, const MaskSpec& spec, uint64_t seed);
Image make_mask(int h, int w, const MaskSpec& spec, uint64_t seed);

double mask_ratio(const Image& mask);

// known-pixel keep: plane * (1 - M), mask broadcast over channels
Image apply_mask(const Image& plane, const Image& mask);

// known + pred * M: prediction only fills the hole
Image compose(const Image& known, const Image& pred, const Image& mask);

// persisted as 8-bit grayscale PNG, 255 = missing; loader maps >0 to 1
void save_mask(const std::string& path, const Image& mask);
Image load_mask(const std::string& path);

}  // namespace sfill
