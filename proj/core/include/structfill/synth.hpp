#pragma once

#include <cstdint>
#include <vector>

#include "structfill/image.hpp"

namespace sfill {

// Deterministic desk-scale dataset: random rectangles, circles and stripes
// over linear-gradient backgrounds, quantized to 8-bit so digests are stable.
struct SynthSpec {
  int count = 2000;
  int size = 64;
  int shapes_min = 2;
  int shapes_max = 5;
};

std::vector<Image> synth_dataset(const SynthSpec& spec, uint64_t seed);

// single image, addressable independently of the rest of the set
Image synth_image(const SynthSpec& spec, uint64_t seed, int index);

uint64_t image_digest(const Image& img);
uint64_t image_set_digest(const std::vector<Image>& imgs);

}  // namespace sfill
