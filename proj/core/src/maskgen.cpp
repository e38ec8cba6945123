#include "structfill/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sfill {

namespace {

void check_mask_shapes(const Image& plane, const Image& mask, const char* op) {
  if (mask.c != 1)
    throw std::runtime_error(std::string(op) + ": mask must be 1-channel");
  if (plane.h != mask.h || plane.w != mask.w)
    throw std::runtime_error(std::string(op) + ": plane " + std::to_string(plane.h) + "x" +
                             std::to_string(plane.w) + " vs mask " + std::to_string(mask.h) +
                             "x" + std::to_string(mask.w));
}

// fill every pixel within `radius` of segment (x0,y0)-(x1,y1)
void stamp_capsule(Image& m, double x0, double y0, double x1, double y1, double radius) {
  const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius)));
  const int yhi = std::min(m.h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius)));
  const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius)));
  const int xhi = std::min(m.w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius)));
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (int y = ylo; y <= yhi; ++y)
    for (int x = xlo; x <= xhi; ++x) {
      double t = len2 > 0.0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
      t = std::min(1.0, std::max(0.0, t));
      const double px = x0 + t * dx, py = y0 + t * dy;
      const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
      if (d2 <= radius * radius) m.at(y, x, 0) = 1.0;
    }
}

}  // namespace

Image regular_mask(int h, int w, const MaskSpec& spec, Rng& rng) {
  int hh = spec.hole_h > 0 ? spec.hole_h : h / 2;
  int hw = spec.hole_w > 0 ? spec.hole_w : w / 2;
  if (hh > h || hw > w)
    throw std::runtime_error("regular_mask: hole " + std::to_string(hh) + "x" +
                             std::to_string(hw) + " exceeds image " + std::to_string(h) +
                             "x" + std::to_string(w));
  int top, left;
  if (spec.centered) {
    top = (h - hh) / 2;
    left = (w - hw) / 2;
  } else {
    top = hh == h ? 0 : static_cast<int>(rng.uniform_int(0, h - hh));
    left = hw == w ? 0 : static_cast<int>(rng.uniform_int(0, w - hw));
  }
  Image m(h, w, 1);
  for (int y = top; y < top + hh; ++y)
    for (int x = left; x < left + hw; ++x) m.at(y, x, 0) = 1.0;
  return m;
}

Image irregular_mask(int h, int w, const MaskSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Image m(h, w, 1);
  const double side = std::min(h, w);
  const int strokes = static_cast<int>(rng.uniform_int(spec.strokes_min, spec.strokes_max));
  for (int s = 0; s < strokes; ++s) {
    const int verts = static_cast<int>(rng.uniform_int(spec.vertices_min, spec.vertices_max));
    const double radius =
        std::max(0.5, rng.uniform(spec.width_min, spec.width_max) * side / 2.0);
    double x = rng.uniform(0.0, w - 1.0);
    double y = rng.uniform(0.0, h - 1.0);
    for (int v = 1; v < verts; ++v) {
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      const double len = rng.uniform(spec.seg_len_min, spec.seg_len_max) * side;
      double nx = std::min(w - 1.0, std::max(0.0, x + len * std::cos(ang)));
      double ny = std::min(h - 1.0, std::max(0.0, y + len * std::sin(ang)));
      stamp_capsule(m, x, y, nx, ny, radius);
      x = nx;
      y = ny;
    }
  }
  return m;
}

Image make_mask(int h, int w, const MaskSpec& spec, uint64_t seed) {
  if (spec.kind == MaskKind::Regular) {
    Rng rng(seed);
    return regular_mask(h, w, spec, rng);
  }
  return irregular_mask(h, w, spec, seed);
}

double mask_ratio(const Image& mask) {
  double s = 0.0;
  for (double v : mask.data) s += v;
  return s / static_cast<double>(mask.numel());
}

Image apply_mask(const Image& plane, const Image& mask) {
  check_mask_shapes(plane, mask, "apply_mask");
  Image out = plane;
  for (int y = 0; y < plane.h; ++y)
    for (int x = 0; x < plane.w; ++x) {
      const double keep = 1.0 - mask.at(y, x, 0);
      for (int ch = 0; ch < plane.c; ++ch) out.at(y, x, ch) = plane.at(y, x, ch) * keep;
    }
  return out;
}

Image compose(const Image& known, const Image& pred, const Image& mask) {
  check_mask_shapes(known, mask, "compose");
  if (known.h != pred.h || known.w != pred.w || known.c != pred.c)
    throw std::runtime_error("compose: known/pred shape mismatch");
  Image out = known;
  for (int y = 0; y < known.h; ++y)
    for (int x = 0; x < known.w; ++x) {
      const double mv = mask.at(y, x, 0);
      if (mv == 0.0) continue;
      for (int ch = 0; ch < known.c; ++ch)
        out.at(y, x, ch) = known.at(y, x, ch) + pred.at(y, x, ch) * mv;
    }
  return out;
}

void save_mask(const std::string& path, const Image& mask) {
  save_png(path, mask);
}

Image load_mask(const std::string& path) {
  Image img = load_image(path);
  if (img.c != 1) img = to_gray(img);
  for (double& v : img.data) v = v > 0.0 ? 1.0 : 0.0;
  return img;
}

}  // namespace sfill
