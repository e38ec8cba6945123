#include "structfill/synth.hpp"

#include <cmath>

#include "structfill/rng.hpp"

namespace sfill {

namespace {

void fill_gradient_background(Image& img, Rng& rng) {
  double c0[3], c1[3];
  for (int ch = 0; ch < 3; ++ch) {
    c0[ch] = rng.uniform();
    c1[ch] = rng.uniform();
  }
  const double ang = rng.uniform(0.0, 2.0 * M_PI);
  const double dx = std::cos(ang), dy = std::sin(ang);
  const double diag = std::hypot(img.h - 1.0, img.w - 1.0);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double t = (x * dx + y * dy) / diag;  // in [-1, 1]
      t = 0.5 * (t + 1.0);
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = (1 - t) * c0[ch] + t * c1[ch];
    }
}

void pick_contrasting_color(const Image& img, Rng& rng, double out[3]) {
  // demand some luma distance from the background corners so every shape
  // leaves a visible (Canny-detectable) boundary
  const double corners[2] = {
      0.299 * img.at(0, 0, 0) + 0.587 * img.at(0, 0, 1) + 0.114 * img.at(0, 0, 2),
      0.299 * img.at(img.h - 1, img.w - 1, 0) + 0.587 * img.at(img.h - 1, img.w - 1, 1) +
          0.114 * img.at(img.h - 1, img.w - 1, 2)};
  for (int tries = 0; tries < 20; ++tries) {
    for (int ch = 0; ch < 3; ++ch) out[ch] = rng.uniform();
    const double luma = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2];
    if (std::abs(luma - corners[0]) > 0.15 && std::abs(luma - corners[1]) > 0.15) return;
  }
}

void draw_rect(Image& img, Rng& rng) {
  double col[3];
  pick_contrasting_color(img, rng, col);
  const int hh = static_cast<int>(rng.uniform(img.h / 10.0, img.h / 3.0));
  const int hw = static_cast<int>(rng.uniform(img.w / 10.0, img.w / 3.0));
  const int cy = static_cast<int>(rng.uniform_int(0, img.h - 1));
  const int cx = static_cast<int>(rng.uniform_int(0, img.w - 1));
  for (int y = std::max(0, cy - hh); y <= std::min(img.h - 1, cy + hh); ++y)
    for (int x = std::max(0, cx - hw); x <= std::min(img.w - 1, cx + hw); ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
}

void draw_circle(Image& img, Rng& rng) {
  double col[3];
  pick_contrasting_color(img, rng, col);
  const double r = rng.uniform(img.h / 10.0, img.h / 4.0);
  const double cy = rng.uniform(0.0, img.h - 1.0);
  const double cx = rng.uniform(0.0, img.w - 1.0);
  for (int y = std::max(0, static_cast<int>(cy - r)); y <= std::min(img.h - 1, static_cast<int>(cy + r) + 1); ++y)
    for (int x = std::max(0, static_cast<int>(cx - r)); x <= std::min(img.w - 1, static_cast<int>(cx + r) + 1); ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
}

void draw_stripe(Image& img, Rng& rng) {
  double col[3];
  pick_contrasting_color(img, rng, col);
  const double ang = rng.uniform(0.0, M_PI);
  const double nx = -std::sin(ang), ny = std::cos(ang);  // stripe normal
  const double py = rng.uniform(0.0, img.h - 1.0);
  const double px = rng.uniform(0.0, img.w - 1.0);
  const double half = rng.uniform(1.0, img.h / 8.0);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (std::abs((x - px) * nx + (y - py) * ny) <= half)
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
}

}  // namespace

Image synth_image(const SynthSpec& spec, uint64_t seed, int index) {
  Rng rng(mix_seed(seed, static_cast<uint64_t>(index) + 0x9e00));
  Image img(spec.size, spec.size, 3);
  fill_gradient_background(img, rng);
  const int shapes = static_cast<int>(rng.uniform_int(spec.shapes_min, spec.shapes_max));
  for (int s = 0; s < shapes; ++s) {
    switch (rng.uniform_int(0, 2)) {
      case 0: draw_rect(img, rng); break;
      case 1: draw_circle(img, rng); break;
      default: draw_stripe(img, rng); break;
    }
  }
  // 8-bit quantization keeps digests identical across runs and matches what
  // PNG round-trips would produce
  for (double& v : img.data) v = std::round(v * 255.0) / 255.0;
  return img;
}

std::vector<Image> synth_dataset(const SynthSpec& spec, uint64_t seed) {
  std::vector<Image> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) out.push_back(synth_image(spec, seed, i));
  return out;
}

uint64_t image_digest(const Image& img) {
  uint64_t h = fnv1a64(&img.h, sizeof(img.h));
  h = fnv1a64(&img.w, sizeof(img.w), h);
  h = fnv1a64(&img.c, sizeof(img.c), h);
  return fnv1a64(img.data.data(), img.data.size() * sizeof(double), h);
}

uint64_t image_set_digest(const std::vector<Image>& imgs) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& img : imgs) {
    const uint64_t d = image_digest(img);
    h = fnv1a64(&d, sizeof(d), h);
  }
  return h;
}

}  // namespace sfill
