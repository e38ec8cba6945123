#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "structfill/features.hpp"
#include "structfill/ops.hpp"

namespace sfill {

struct LossWeights {
  double lambda_perc = 0.1;
  double lambda_style = 250.0;
  double lambda_adv = 0.1;
  double alpha = 0.1;  // structure term weight in the total objective
  double beta = 100.0; // edge-regularizer weight inside the structure term

  void validate() const {
    if (lambda_perc < 0 || lambda_style < 0 || lambda_adv < 0 || alpha < 0 || beta < 0)
      throw TensorError("LossWeights: negative weight");
  }
};

struct LossReport {
  std::map<std::string, double> terms;
  double total = 0.0;
};

// Sum over scales of mean|C_pred - C| + beta * mean(|C_pred - C| weighted by
// the Gaussian-blurred edge mask). me[s] must be (n,1,h_s,w_s), no grad.
template <class T>
Tensor<T> structure_loss(const std::vector<Tensor<T>>& c_pred,
                         const std::vector<Tensor<T>>& c_gt,
                         const std::vector<Tensor<T>>& me, T beta,
                         std::vector<double>* per_scale_l1 = nullptr,
                         std::vector<double>* per_scale_edge = nullptr) {
  if (c_pred.size() != c_gt.size() || c_pred.size() != me.size())
    throw TensorError("structure_loss: scale count mismatch (" +
                      std::to_string(c_pred.size()) + " pred, " +
                      std::to_string(c_gt.size()) + " gt, " + std::to_string(me.size()) +
                      " edge masks)");
  if (c_pred.empty()) throw TensorError("structure_loss: no scales");
  Tensor<T> total;
  for (size_t s = 0; s < c_pred.size(); ++s) {
    Tensor<T> diff = abs_op(sub(c_pred[s], c_gt[s]));
    Tensor<T> l1 = mean_all(diff);
    Tensor<T> edge = mean_all(mul_bc1(diff, me[s]));
    if (per_scale_l1) per_scale_l1->push_back(static_cast<double>(l1.data()[0]));
    if (per_scale_edge) per_scale_edge->push_back(static_cast<double>(edge.data()[0]));
    Tensor<T> term = add(l1, scale(edge, beta));
    total = s == 0 ? term : add(total, term);
  }
  return total;
}

template <class T>
Tensor<T> rec_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return mean_abs_diff(pred, target);
}

template <class T>
Tensor<T> perceptual_from_features(const std::vector<Tensor<T>>& fp,
                                   const std::vector<Tensor<T>>& ft) {
  if (fp.size() != ft.size() || fp.empty())
    throw TensorError("perceptual_from_features: feature level mismatch");
  Tensor<T> total;
  for (size_t i = 0; i < fp.size(); ++i) {
    Tensor<T> term = mean_abs_diff(fp[i], ft[i]);
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

template <class T>
Tensor<T> style_from_features(const std::vector<Tensor<T>>& fp,
                              const std::vector<Tensor<T>>& ft) {
  if (fp.size() != ft.size() || fp.empty())
    throw TensorError("style_from_features: feature level mismatch");
  Tensor<T> total;
  for (size_t i = 0; i < fp.size(); ++i) {
    Tensor<T> term = mean_abs_diff(gram(fp[i]), gram(ft[i]));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& pred, const Tensor<T>& target,
                          const FeatureExtractor<T>& fx) {
  return perceptual_from_features(fx.features(pred), fx.features(target));
}

template <class T>
Tensor<T> style_loss(const Tensor<T>& pred, const Tensor<T>& target,
                     const FeatureExtractor<T>& fx) {
  return style_from_features(fx.features(pred), fx.features(target));
}

inline constexpr double kLogitEps = 1e-7;

// Discriminator objective in minimization form:
// -E[log sigma(D(real))] - E[log(1 - sigma(D(fake)))], patch-averaged.
template <class T>
Tensor<T> adversarial_d_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
  check_finite_or_throw(real_scores, "adversarial_d_loss: real scores");
  check_finite_or_throw(fake_scores, "adversarial_d_loss: fake scores");
  Tensor<T> lr = mean_all(log_clamped(sigmoid(real_scores), T(kLogitEps)));
  Tensor<T> lf = mean_all(log_clamped(affine(sigmoid(fake_scores), T(-1), T(1)), T(kLogitEps)));
  return scale(add(lr, lf), T(-1));
}

// Generator objective: literal E[log(1 - sigma(D(fake)))] by default; the
// non-saturating -E[log sigma(D(fake))] is available behind the flag.
template <class T>
Tensor<T> adversarial_g_loss(const Tensor<T>& fake_scores, bool non_saturating = false) {
  check_finite_or_throw(fake_scores, "adversarial_g_loss: scores");
  if (non_saturating)
    return scale(mean_all(log_clamped(sigmoid(fake_scores), T(kLogitEps))), T(-1));
  return mean_all(log_clamped(affine(sigmoid(fake_scores), T(-1), T(1)), T(kLogitEps)));
}

// total = rec + l_p*perc + l_s*style + l_adv*adv_g + alpha*structure
template <class T>
Tensor<T> total_loss(const Tensor<T>& rec, const Tensor<T>& perc, const Tensor<T>& style,
                     const Tensor<T>& adv_g, const std::optional<Tensor<T>>& structure,
                     const LossWeights& w) {
  w.validate();
  Tensor<T> t = add(rec, scale(perc, static_cast<T>(w.lambda_perc)));
  t = add(t, scale(style, static_cast<T>(w.lambda_style)));
  t = add(t, scale(adv_g, static_cast<T>(w.lambda_adv)));
  if (structure) t = add(t, scale(*structure, static_cast<T>(w.alpha)));
  return t;
}

}  // namespace sfill
