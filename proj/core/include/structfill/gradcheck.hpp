#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "structfill/rng.hpp"
#include "structfill/tensor.hpp"

namespace sfill {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 1e-6;
  bool pass = false;
};

// Central finite differences against the tape's analytic gradients.
// make_loss must rebuild the scalar loss from the current contents of the
// `wrt` tensors on every call. coords_per_tensor > 0 probes only that many
// randomly chosen coordinates per tensor (needed for large models).
template <class T>
double fd_max_rel_error(const std::function<Tensor<T>()>& make_loss,
                        const std::vector<Tensor<T>*>& wrt, double step = 1e-3,
                        int coords_per_tensor = -1, Rng* rng = nullptr,
                        double denom_floor = 1e-3) {
  std::vector<std::vector<double>> analytic;
  {
    for (Tensor<T>* t : wrt) t->set_requires_grad(true);
    Tape<T> tape;
    typename Tape<T>::Scope scope(tape);
    Tensor<T> loss = make_loss();
    if (loss.numel() != 1)
      throw TensorError("fd_max_rel_error: loss must be scalar, got " + loss.shape().str());
    for (Tensor<T>* t : wrt) t->zero_grad();
    tape.backward(loss);
    for (Tensor<T>* t : wrt) {
      std::vector<double> g(static_cast<size_t>(t->numel()));
      for (int64_t i = 0; i < t->numel(); ++i) g[static_cast<size_t>(i)] = t->grad()[i];
      analytic.push_back(std::move(g));
    }
  }
  double worst = 0.0;
  for (size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<T>& t = *wrt[ti];
    std::vector<int64_t> coords;
    if (coords_per_tensor > 0 && t.numel() > coords_per_tensor) {
      if (!rng) throw TensorError("fd_max_rel_error: coordinate sampling needs an rng");
      for (int k = 0; k < coords_per_tensor; ++k)
        coords.push_back(rng->uniform_int(0, t.numel() - 1));
    } else {
      coords.resize(static_cast<size_t>(t.numel()));
      std::iota(coords.begin(), coords.end(), int64_t{0});
    }
    for (int64_t i : coords) {
      const T keep = t.data()[i];
      t.data()[i] = keep + static_cast<T>(step);
      const double fp = static_cast<double>(make_loss().data()[0]);
      t.data()[i] = keep - static_cast<T>(step);
      const double fm = static_cast<double>(make_loss().data()[0]);
      t.data()[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double g = analytic[ti][static_cast<size_t>(i)];
      const double err =
          std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), denom_floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// FD suites behind the verification command; module: all|tensor|losses|model.
std::vector<GradCheckResult> run_gradcheck(const std::string& module, uint64_t seed = 7);

}  // namespace sfill
