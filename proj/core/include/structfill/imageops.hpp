#pragma once

#include <vector>

#include "structfill/image.hpp"

namespace sfill {

// 6-channel Sobel gradient map, channel order (R_x, R_y, G_x, G_y, B_x, B_y),
// replicate-padded borders.
Image sobel_gradient_map(const Image& img);

// Classic Canny: gray -> Gaussian(sigma) -> Sobel magnitude/direction ->
// 4-bin non-maximum suppression -> hysteresis (strong >= high seeds, weak >=
// low kept iff 8-connected to strong). Thresholds apply to max-normalized
// magnitude.
Image canny_edges(const Image& img, double sigma = 1.0, double low = 0.1,
                  double high = 0.2);

// size x size sampled Gaussian normalized to sum 1; even sizes use a
// half-integer-centered grid so the kernel stays symmetric.
std::vector<double> gaussian_kernel(int size, double sigma);

// M_E = g * E with zero padding; anchor at (size/2, size/2).
Image edge_weight_mask(const Image& edges, const std::vector<double>& kernel, int ksize);

Image downscale_nearest(const Image& map, int factor);

// Gaussian smoothing with replicate padding (odd kernel, size 2*ceil(3*sigma)+1).
Image gaussian_blur(const Image& img, double sigma);

// decode + force RGB + bilinear resize to (th, tw), clamped to [0,1]
Image ingest_image(const std::string& path, int th, int tw);

Image resize_bilinear(const Image& img, int th, int tw);

// affine map of arbitrary-range plane values onto [0,1] for PNG export
Image visualize_plane(const Image& plane, int channel);

}  // namespace sfill
