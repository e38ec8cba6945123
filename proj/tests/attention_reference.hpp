#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "structfill/tensor.hpp"

namespace sfill {

// plain-loop reimplementation of the patch attention block, stride 1
inline Tensor<double> reference_attention(const Tensor<double>& x, int k, double gamma) {
  const Shape s = x.shape();
  const int pad = k / 2;
  const int ph = s.h - k + 1, pw = s.w - k + 1, m = ph * pw;
  Tensor<double> out(s);
  for (int in = 0; in < s.n; ++in) {
    // patches and their unit-norm versions
    std::vector<double> patch(static_cast<size_t>(m) * s.c * k * k);
    std::vector<double> filt(patch.size());
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        const int p = py * pw + px;
        double sq = 0.0;
        for (int c = 0; c < s.c; ++c)
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              const double v = x.at(in, c, py + ki, px + kj);
              patch[((static_cast<size_t>(p) * s.c + c) * k + ki) * k + kj] = v;
              sq += v * v;
            }
        const double denom = std::max(std::sqrt(sq), 1e-8);
        for (int j = 0; j < s.c * k * k; ++j)
          filt[static_cast<size_t>(p) * s.c * k * k + j] =
              patch[static_cast<size_t>(p) * s.c * k * k + j] / denom;
      }

    // scores: cross-correlation of x with each normalized patch, zero padding
    std::vector<double> attn(static_cast<size_t>(m) * s.h * s.w);
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        std::vector<double> sc(m, 0.0);
        for (int p = 0; p < m; ++p)
          for (int c = 0; c < s.c; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = y + ki - pad, ix = xx + kj - pad;
                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                sc[p] += filt[((static_cast<size_t>(p) * s.c + c) * k + ki) * k + kj] *
                         x.at(in, c, iy, ix);
              }
        double mx = sc[0];
        for (double v : sc) mx = std::max(mx, v);
        double sum = 0.0;
        for (int p = 0; p < m; ++p) {
          sc[p] = std::exp(sc[p] - mx);
          sum += sc[p];
        }
        for (int p = 0; p < m; ++p)
          attn[(static_cast<size_t>(p) * s.h + y) * s.w + xx] = sc[p] / sum;
      }

    // stamp attention-weighted raw patches back, then divide by overlap count
    std::vector<double> recon(static_cast<size_t>(s.c) * s.h * s.w, 0.0);
    std::vector<double> count(static_cast<size_t>(s.h) * s.w, 0.0);
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        for (int ki = 0; ki < k; ++ki)
          for (int kj = 0; kj < k; ++kj) {
            const int oy = y + ki - pad, ox = xx + kj - pad;
            if (oy < 0 || oy >= s.h || ox < 0 || ox >= s.w) continue;
            count[static_cast<size_t>(oy) * s.w + ox] += 1.0;
            for (int p = 0; p < m; ++p) {
              const double a = attn[(static_cast<size_t>(p) * s.h + y) * s.w + xx];
              for (int c = 0; c < s.c; ++c)
                recon[(static_cast<size_t>(c) * s.h + oy) * s.w + ox] +=
                    a * patch[((static_cast<size_t>(p) * s.c + c) * k + ki) * k + kj];
            }
          }
      }
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          out.at(in, c, y, xx) =
              x.at(in, c, y, xx) + gamma * recon[(static_cast<size_t>(c) * s.h + y) * s.w + xx] /
                                       count[static_cast<size_t>(y) * s.w + xx];
  }
  return out;
}

}  // namespace sfill
