#pragma once

#include <string>
#include <vector>

#include "structfill/features.hpp"
#include "structfill/image.hpp"

namespace sfill {

struct ImageMetrics {
  std::string name;
  double l1_percent = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double uqi = 0.0;
  double vif = 0.0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics means;  // name = "mean"
  bool fid_available = false;
  double fid = 0.0;
  std::string fid_note;
};

double l1_percent(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);        // capped at 99 dB
double ssim(const Image& a, const Image& b);        // grayscale, 11x11 sigma 1.5
double uqi(const Image& a, const Image& b);         // 8x8 sliding window
double vif_p(const Image& ref, const Image& dist);  // pixel domain, 4 scales

// Frechet distance between Gaussian fits of two descriptor sets; needs
// at least d+1 samples per set.
double fid_from_features(const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b);

MetricsReport evaluate_set(const std::vector<std::pair<Image, Image>>& pairs,
                           const FeatureExtractor<float>& fx,
                           const std::vector<std::string>* names = nullptr);

std::string report_to_json(const MetricsReport& r);
std::string report_to_table(const MetricsReport& r);

}  // namespace sfill
