#include "structfill/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "structfill/imageops.hpp"

namespace sfill {

namespace {

void check_same(const Image& a, const Image& b, const char* op) {
  if (a.h != b.h || a.w != b.w || a.c != b.c)
    throw std::runtime_error(std::string(op) + ": shape mismatch " + std::to_string(a.h) +
                             "x" + std::to_string(a.w) + "x" + std::to_string(a.c) + " vs " +
                             std::to_string(b.h) + "x" + std::to_string(b.w) + "x" +
                             std::to_string(b.c));
}

Image as_gray(const Image& img) { return img.c == 1 ? img : to_gray(img); }

// valid-mode correlation with a square kernel
Image filter_valid(const Image& img, const std::vector<double>& k, int n) {
  Image out(img.h - n + 1, img.w - n + 1, 1);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          acc += k[static_cast<size_t>(i) * n + j] * img.at(y + i, x + j, 0);
      out.at(y, x, 0) = acc;
    }
  return out;
}

Image decimate2(const Image& img) {
  Image out((img.h + 1) / 2, (img.w + 1) / 2, 1);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x, 0) = img.at(2 * y, 2 * x, 0);
  return out;
}

}  // namespace

double l1_percent(const Image& a, const Image& b) {
  check_same(a, b, "l1_percent");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a.data[i] - b.data[i]);
  return 100.0 * acc / static_cast<double>(a.numel());
}

double psnr(const Image& a, const Image& b) {
  check_same(a, b, "psnr");
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b, "ssim");
  const Image x = as_gray(a), y = as_gray(b);
  const int n = 11;
  if (x.h < n || x.w < n)
    throw std::runtime_error("ssim: image " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                             " smaller than the 11x11 window");
  const std::vector<double> win = gaussian_kernel(n, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1.0
  double total = 0.0;
  int64_t count = 0;
  for (int oy = 0; oy + n <= x.h; ++oy)
    for (int ox = 0; ox + n <= x.w; ++ox) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double wv = win[static_cast<size_t>(i) * n + j];
          const double av = x.at(oy + i, ox + j, 0), bv = y.at(oy + i, ox + j, 0);
          mx += wv * av;
          my += wv * bv;
          xx += wv * av * av;
          yy += wv * bv * bv;
          xy += wv * av * bv;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
      const double val = ((2 * mx * my + c1) * (2 * cov + c2)) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += val;
      ++count;
    }
  return total / static_cast<double>(count);
}

double uqi(const Image& a, const Image& b) {
  check_same(a, b, "uqi");
  const Image x = as_gray(a), y = as_gray(b);
  const int n = 8;
  if (x.h < n || x.w < n)
    throw std::runtime_error("uqi: image " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                             " smaller than the 8x8 window");
  const double inv = 1.0 / (n * n);
  double total = 0.0;
  int64_t count = 0;
  for (int oy = 0; oy + n <= x.h; ++oy)
    for (int ox = 0; ox + n <= x.w; ++ox) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double av = x.at(oy + i, ox + j, 0), bv = y.at(oy + i, ox + j, 0);
          mx += av;
          my += bv;
          xx += av * av;
          yy += bv * bv;
          xy += av * bv;
        }
      mx *= inv;
      my *= inv;
      const double vx = xx * inv - mx * mx, vy = yy * inv - my * my;
      const double cov = xy * inv - mx * my;
      const double denom = (vx + vy) * (mx * mx + my * my);
      if (std::abs(denom) < 1e-12) continue;  // degenerate window: skipped
      total += 4.0 * cov * mx * my / denom;
      ++count;
    }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double vif_p(const Image& ref, const Image& dist) {
  check_same(ref, dist, "vif_p");
  Image r = as_gray(ref), d = as_gray(dist);
  const double sigma_nsq = 2.0, eps = 1e-10;
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (4 - scale + 1)) + 1;  // 17, 9, 5, 3
    const std::vector<double> win = gaussian_kernel(n, n / 5.0);
    if (scale > 1) {
      if (r.h < n || r.w < n)
        throw std::runtime_error("vif_p: image too small for 4 scales (stage " +
                                 std::to_string(scale) + " needs " + std::to_string(n) + ")");
      r = decimate2(filter_valid(r, win, n));
      d = decimate2(filter_valid(d, win, n));
    }
    if (r.h < n || r.w < n)
      throw std::runtime_error("vif_p: image too small for 4 scales (stage " +
                               std::to_string(scale) + " needs " + std::to_string(n) + ")");
    const Image mu1 = filter_valid(r, win, n), mu2 = filter_valid(d, win, n);
    Image r2 = r, d2 = d, rd = r;
    for (int64_t i = 0; i < r.numel(); ++i) {
      r2.data[i] = r.data[i] * r.data[i];
      d2.data[i] = d.data[i] * d.data[i];
      rd.data[i] = r.data[i] * d.data[i];
    }
    const Image s11 = filter_valid(r2, win, n), s22 = filter_valid(d2, win, n),
                s12 = filter_valid(rd, win, n);
    for (int64_t i = 0; i < mu1.numel(); ++i) {
      double sigma1 = std::max(0.0, s11.data[i] - mu1.data[i] * mu1.data[i]);
      double sigma2 = std::max(0.0, s22.data[i] - mu2.data[i] * mu2.data[i]);
      const double sigma12 = s12.data[i] - mu1.data[i] * mu2.data[i];
      double g = sigma12 / (sigma1 + eps);
      double sv = sigma2 - g * sigma12;
      if (sigma1 < eps) {
        g = 0.0;
        sv = sigma2;
        sigma1 = 0.0;
      }
      if (sigma2 < eps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = sigma2;
        g = 0.0;
      }
      if (sv <= eps) sv = eps;
      num += std::log(1.0 + g * g * sigma1 / (sv + sigma_nsq));
      den += std::log(1.0 + sigma1 / sigma_nsq);
    }
  }
  return den > 0.0 ? num / den : 1.0;
}

double fid_from_features(const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw std::runtime_error("fid: empty feature set");
  const int d = static_cast<int>(a[0].size());
  if (d < 1) throw std::runtime_error("fid: zero-dimensional features");
  const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
  if (na < d + 1 || nb < d + 1)
    throw std::runtime_error("fid: need at least " + std::to_string(d + 1) +
                             " samples per set for dimension " + std::to_string(d) + ", got " +
                             std::to_string(na) + " and " + std::to_string(nb));
  for (const auto& v : a)
    if (static_cast<int>(v.size()) != d) throw std::runtime_error("fid: ragged feature set");
  for (const auto& v : b)
    if (static_cast<int>(v.size()) != d) throw std::runtime_error("fid: ragged feature set");

  auto fit = [d](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu,
                 Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(s.size());
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = s[i][j];
    mu = m.colwise().mean();
    Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit(a, mu_a, cov_a);
  fit(b, mu_b, cov_b);

  // sqrt(cov_a) via symmetric eigendecomposition
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  if (es_a.info() != Eigen::Success) throw std::runtime_error("fid: eigendecomposition failed");
  Eigen::VectorXd ev = es_a.eigenvalues();
  for (int i = 0; i < d; ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
  const Eigen::MatrixXd sqrt_a =
      es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();

  const Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i(inner);
  if (es_i.info() != Eigen::Success) throw std::runtime_error("fid: eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) {
    double l = es_i.eigenvalues()(i);
    if (l < 0.0) {
      if (l < -1e-8)
        throw std::runtime_error("fid: covariance product has eigenvalue " + std::to_string(l));
      l = 0.0;
    }
    tr_sqrt += std::sqrt(l);
  }
  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

MetricsReport evaluate_set(const std::vector<std::pair<Image, Image>>& pairs,
                           const FeatureExtractor<float>& fx,
                           const std::vector<std::string>* names) {
  if (pairs.empty()) throw std::runtime_error("evaluate_set: empty pair list");
  MetricsReport rep;
  std::vector<std::vector<double>> fa, fb;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const Image& out = pairs[i].first;
    const Image& gt = pairs[i].second;
    ImageMetrics m;
    m.name = names && i < names->size() ? (*names)[i] : "pair" + std::to_string(i);
    m.l1_percent = l1_percent(out, gt);
    m.psnr = psnr(out, gt);
    m.ssim = ssim(out, gt);
    m.uqi = uqi(out, gt);
    m.vif = vif_p(gt, out);  // reference first
    rep.per_image.push_back(m);
    fa.push_back(pooled_descriptor(fx, image_to_tensor<float>(to_rgb(out))));
    fb.push_back(pooled_descriptor(fx, image_to_tensor<float>(to_rgb(gt))));
  }
  rep.means.name = "mean";
  for (const auto& m : rep.per_image) {
    rep.means.l1_percent += m.l1_percent;
    rep.means.psnr += m.psnr;
    rep.means.ssim += m.ssim;
    rep.means.uqi += m.uqi;
    rep.means.vif += m.vif;
  }
  const double inv = 1.0 / static_cast<double>(rep.per_image.size());
  rep.means.l1_percent *= inv;
  rep.means.psnr *= inv;
  rep.means.ssim *= inv;
  rep.means.uqi *= inv;
  rep.means.vif *= inv;

  const int d = static_cast<int>(fa[0].size());
  if (static_cast<int>(fa.size()) >= d + 1) {
    rep.fid_available = true;
    rep.fid = fid_from_features(fa, fb);
    rep.fid_note = "proxy over the repo's fixed feature extractor; not comparable "
                   "to published Inception-based numbers";
  } else {
    rep.fid_available = false;
    rep.fid_note = "unavailable: need at least " + std::to_string(d + 1) +
                   " image pairs for dimension " + std::to_string(d);
  }
  return rep;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["report_version"] = 1;
  j["count"] = r.per_image.size();
  auto row = [](const ImageMetrics& m) {
    return nlohmann::json{{"l1_percent", m.l1_percent}, {"psnr", m.psnr},
                          {"ssim", m.ssim},             {"uqi", m.uqi},
                          {"vif", m.vif}};
  };
  j["means"] = row(r.means);
  j["fid_available"] = r.fid_available;
  if (r.fid_available) j["fid"] = r.fid;
  j["fid_note"] = r.fid_note;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : r.per_image) {
    nlohmann::json e = row(m);
    e["name"] = m.name;
    arr.push_back(e);
  }
  j["per_image"] = arr;
  return j.dump(2);
}

std::string report_to_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "image" << std::right << std::setw(9) << "l1%"
     << std::setw(9) << "PSNR" << std::setw(9) << "SSIM" << std::setw(9) << "UQI"
     << std::setw(9) << "VIF" << std::setw(10) << "FID" << "\n";
  auto line = [&os](const ImageMetrics& m, const std::string& fid_cell) {
    os << std::left << std::setw(20) << m.name << std::right << std::fixed
       << std::setprecision(3) << std::setw(9) << m.l1_percent << std::setw(9) << m.psnr
       << std::setw(9) << m.ssim << std::setw(9) << m.uqi << std::setw(9) << m.vif
       << std::setw(10) << fid_cell << "\n";
  };
  for (const auto& m : r.per_image) line(m, "-");
  std::ostringstream fidcell;
  if (r.fid_available)
    fidcell << std::fixed << std::setprecision(3) << r.fid;
  else
    fidcell << "n/a";
  line(r.means, fidcell.str());
  return os.str();
}

}  // namespace sfill
