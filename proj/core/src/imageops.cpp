#include "structfill/imageops.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace sfill {

namespace {

const double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
const double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// 3x3 cross-correlation of one channel with replicate padding; positive and
// negative taps are summed separately so flat regions cancel exactly
void sobel_plane(const Image& img, int ch, const double k[3][3], Image& out, int och) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double pos = 0.0, neg = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double w = k[dy + 1][dx + 1];
          if (w == 0.0) continue;
          const double v =
              img.at(clampi(y + dy, 0, img.h - 1), clampi(x + dx, 0, img.w - 1), ch);
          if (w > 0.0)
            pos += w * v;
          else
            neg += -w * v;
        }
      out.at(y, x, och) = pos - neg;
    }
}

}  // namespace

Image sobel_gradient_map(const Image& img) {
  if (img.c != 3)
    throw std::runtime_error("sobel_gradient_map: expected 3 channels, got " +
                             std::to_string(img.c));
  Image out(img.h, img.w, 6);
  for (int ch = 0; ch < 3; ++ch) {
    sobel_plane(img, ch, kSobelX, out, 2 * ch);
    sobel_plane(img, ch, kSobelY, out, 2 * ch + 1);
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;

  Image tmp(img.h, img.w, img.c), out(img.h, img.w, img.c);
  for (int ch = 0; ch < img.c; ++ch) {
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(y, clampi(x + i, 0, img.w - 1), ch);
        tmp.at(y, x, ch) = acc;
      }
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(clampi(y + i, 0, img.h - 1), x, ch);
        out.at(y, x, ch) = acc;
      }
  }
  return out;
}

Image canny_edges(const Image& img, double sigma, double low, double high) {
  if (!(low > 0.0) || !(low < high))
    throw std::runtime_error("canny_edges: need 0 < low < high, got low=" +
                             std::to_string(low) + " high=" + std::to_string(high));
  const Image gray = img.c == 1 ? img : to_gray(img);
  const Image smooth = gaussian_blur(gray, sigma);

  Image gx(img.h, img.w, 1), gy(img.h, img.w, 1);
  sobel_plane(smooth, 0, kSobelX, gx, 0);
  sobel_plane(smooth, 0, kSobelY, gy, 0);

  Image mag(img.h, img.w, 1);
  double peak = 0.0;
  for (int64_t i = 0; i < mag.numel(); ++i) {
    mag.data[i] = std::hypot(gx.data[i], gy.data[i]);
    peak = std::max(peak, mag.data[i]);
  }
  Image edges(img.h, img.w, 1);
  if (peak <= 0.0) return edges;
  for (double& v : mag.data) v /= peak;

  // non-maximum suppression; strict comparison toward the +coordinate
  // neighbor breaks symmetric-plateau ties so edges come out one pixel wide
  Image thin(img.h, img.w, 1);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double m = mag.at(y, x, 0);
      if (m <= 0.0) continue;
      double ang = std::atan2(gy.at(y, x, 0), gx.at(y, x, 0)) * 180.0 / M_PI;
      if (ang < 0.0) ang += 180.0;
      int dy1, dx1;  // +coordinate neighbor of the quantized direction
      if (ang < 22.5 || ang >= 157.5) { dy1 = 0; dx1 = 1; }
      else if (ang < 67.5)            { dy1 = 1; dx1 = 1; }
      else if (ang < 112.5)           { dy1 = 1; dx1 = 0; }
      else                            { dy1 = 1; dx1 = -1; }
      auto sample = [&](int yy, int xx) {
        return (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) ? 0.0 : mag.at(yy, xx, 0);
      };
      const double n1 = sample(y + dy1, x + dx1);
      const double n2 = sample(y - dy1, x - dx1);
      if (m > n1 && m >= n2) thin.at(y, x, 0) = m;
    }

  // hysteresis: flood from strong pixels across 8-connected weak pixels
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (thin.at(y, x, 0) >= high) {
        edges.at(y, x, 0) = 1.0;
        frontier.emplace_back(y, x);
      }
  while (!frontier.empty()) {
    auto [y, x] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
        if (edges.at(yy, xx, 0) == 0.0 && thin.at(yy, xx, 0) >= low) {
          edges.at(yy, xx, 0) = 1.0;
          frontier.emplace_back(yy, xx);
        }
      }
  }
  return edges;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || !(sigma > 0.0))
    throw std::runtime_error("gaussian_kernel: need size >= 1 and sigma > 0");
  std::vector<double> k(static_cast<size_t>(size) * size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double dy = i - c, dx = j - c;
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      k[static_cast<size_t>(i) * size + j] = v;
      sum += v;
    }
  for (double& v : k) v /= sum;
  return k;
}

Image edge_weight_mask(const Image& edges, const std::vector<double>& kernel, int ksize) {
  if (edges.c != 1) throw std::runtime_error("edge_weight_mask: edge map must be 1-channel");
  if (static_cast<int>(kernel.size()) != ksize * ksize)
    throw std::runtime_error("edge_weight_mask: kernel size mismatch");
  Image out(edges.h, edges.w, 1);
  const int a = ksize / 2;
  for (int y = 0; y < edges.h; ++y)
    for (int x = 0; x < edges.w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < ksize; ++i) {
        const int yy = y + i - a;
        if (yy < 0 || yy >= edges.h) continue;
        for (int j = 0; j < ksize; ++j) {
          const int xx = x + j - a;
          if (xx < 0 || xx >= edges.w) continue;
          acc += kernel[static_cast<size_t>(i) * ksize + j] * edges.at(yy, xx, 0);
        }
      }
      out.at(y, x, 0) = acc;
    }
  return out;
}

Image downscale_nearest(const Image& map, int factor) {
  if (factor < 1) throw std::runtime_error("downscale_nearest: factor must be >= 1");
  if (map.h % factor != 0 || map.w % factor != 0)
    throw std::runtime_error("downscale_nearest: " + std::to_string(map.h) + "x" +
                             std::to_string(map.w) + " not divisible by " +
                             std::to_string(factor));
  Image out(map.h / factor, map.w / factor, map.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < map.c; ++ch)
        out.at(y, x, ch) = map.at(y * factor, x * factor, ch);
  return out;
}

Image resize_bilinear(const Image& img, int th, int tw) {
  if (th == img.h && tw == img.w) return img;
  Image out(th, tw, img.c);
  const double sy = static_cast<double>(img.h) / th;
  const double sx = static_cast<double>(img.w) / tw;
  for (int y = 0; y < th; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < tw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < img.c; ++ch) {
        const double top = (1 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch);
        const double bot = (1 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch);
        out.at(y, x, ch) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Image ingest_image(const std::string& path, int th, int tw) {
  Image img = to_rgb(load_image(path));
  img = resize_bilinear(img, th, tw);
  for (double& v : img.data) v = std::min(1.0, std::max(0.0, v));
  return img;
}

Image visualize_plane(const Image& plane, int channel) {
  if (channel < 0 || channel >= plane.c)
    throw std::runtime_error("visualize_plane: channel out of range");
  Image out(plane.h, plane.w, 1);
  double lo = plane.at(0, 0, channel), hi = lo;
  for (int y = 0; y < plane.h; ++y)
    for (int x = 0; x < plane.w; ++x) {
      const double v = plane.at(y, x, channel);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double span = hi - lo;
  if (span < 1e-12) return out;
  for (int y = 0; y < plane.h; ++y)
    for (int x = 0; x < plane.w; ++x)
      out.at(y, x, 0) = (plane.at(y, x, channel) - lo) / span;
  return out;
}

}  // namespace sfill
