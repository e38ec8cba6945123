#pragma once

#include <memory>
#include <string>
#include <vector>

#include "structfill/ops.hpp"
#include "structfill/rng.hpp"
#include "structfill/tensor.hpp"

namespace sfill {

// Fixed (never trained) map from an image batch to feature pyramids.
// Gradients flow through it into the image; its own weights stay frozen.
template <class T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor<T>> features(const Tensor<T>& img) const = 0;
  virtual int levels() const = 0;
  virtual int deepest_channels() const = 0;
};

// Default extractor: fixed-seed random convolutional stack
// 3 -> 16 -> 32 -> 64 -> 128 -> 128, each stage 3x3 stride-2 + relu.
template <class T>
class RandomConvExtractor final : public FeatureExtractor<T> {
 public:
  explicit RandomConvExtractor(uint64_t seed = 0x5eed) {
    const int chans[6] = {3, 16, 32, 64, 128, 128};
    for (int l = 0; l < 5; ++l) {
      const std::string name = "fx.l" + std::to_string(l);
      Rng rng(mix_seed(seed, fnv1a64(name)));
      const Shape ws(chans[l + 1], chans[l], 3, 3);
      Tensor<T> w(ws);
      const T sd = std::sqrt(T(2) / static_cast<T>(chans[l] * 9));
      for (int64_t i = 0; i < w.numel(); ++i)
        w.data()[i] = static_cast<T>(rng.normal()) * sd;
      weights_.push_back(w);
      biases_.push_back(Tensor<T>(Shape(1, chans[l + 1], 1, 1)));
    }
  }

  std::vector<Tensor<T>> features(const Tensor<T>& img) const override {
    if (img.shape().c != 3)
      throw TensorError("RandomConvExtractor: expected 3-channel input, got " +
                        img.shape().str());
    std::vector<Tensor<T>> out;
    Tensor<T> x = img;
    for (int l = 0; l < 5; ++l) {
      ConvSpec spec;
      spec.out_channels = weights_[l].shape().n;
      spec.kh = spec.kw = 3;
      spec.stride = 2;
      spec.padding = 1;
      x = relu(conv2d(x, weights_[l], biases_[l], spec));
      out.push_back(x);
    }
    return out;
  }

  int levels() const override { return 5; }
  int deepest_channels() const override { return 128; }

 private:
  std::vector<Tensor<T>> weights_;  // requires_grad stays false
  std::vector<Tensor<T>> biases_;
};

// Global-average-pools the deepest level and folds channel pairs so the
// descriptor stays small enough for covariance estimation on small sets.
template <class T>
std::vector<double> pooled_descriptor(const FeatureExtractor<T>& fx, const Tensor<T>& img,
                                      int max_dims = 64) {
  auto feats = fx.features(img);
  const Tensor<T>& deep = feats.back();
  const Shape s = deep.shape();
  if (s.n != 1) throw TensorError("pooled_descriptor: expects a single image");
  std::vector<double> gap(s.c, 0.0);
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  for (int c = 0; c < s.c; ++c) {
    const T* p = deep.data() + deep.index(0, c, 0, 0);
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
    gap[c] = acc / static_cast<double>(hw);
  }
  while (static_cast<int>(gap.size()) > max_dims) {
    std::vector<double> folded(gap.size() / 2);
    for (size_t i = 0; i < folded.size(); ++i) folded[i] = 0.5 * (gap[2 * i] + gap[2 * i + 1]);
    gap = std::move(folded);
  }
  return gap;
}

}  // namespace sfill
