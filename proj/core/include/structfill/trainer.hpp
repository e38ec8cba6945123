#pragma once

#include <cmath>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "structfill/config.hpp"
#include "structfill/features.hpp"
#include "structfill/image.hpp"
#include "structfill/losses.hpp"
#include "structfill/maskgen.hpp"
#include "structfill/metrics.hpp"
#include "structfill/model.hpp"
#include "structfill/rng.hpp"
#include "structfill/synth.hpp"

namespace sfill {

struct TrainConfig {
  // data: synthetic set by default, or a directory of images
  SynthSpec synth;
  std::string data_dir;
  double holdout_fraction = 0.1;

  GeneratorConfig model;

  int batch_size = 8;
  int64_t steps = 0;
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double d_lr_divisor = 10.0;  // discriminator lr = lr / divisor
  uint64_t seed = 0;
  LossWeights weights;
  bool non_saturating_g = false;
  MaskSpec mask;
  int64_t ckpt_every = 0;  // 0 = final checkpoint only
  int64_t log_every = 1;
  std::string out_dir;
  std::string resume_dir;  // continue from a saved checkpoint when set

  void validate() const;
};

// One Adam update, shared by the trainer and by tests that need full double
// precision. Moments are stored back into m/v; t is the 1-based step count.
template <class T>
void adam_update(T* p, const T* g, T* m, T* v, int64_t n, double lr, double beta1,
                 double beta2, double eps, int64_t t) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (int64_t i = 0; i < n; ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p[i] = static_cast<T>(static_cast<double>(p[i]) -
                          lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

// per-image cached ground-truth structure
struct Sample {
  Image img;   // (s,s,3)
  Image grad;  // (s,s,6)
  Image edge;  // (s,s,1)
};

class Dataset {
 public:
  explicit Dataset(std::vector<Image> images);
  size_t size() const { return samples_.size(); }
  const Sample& at(size_t i) const { return samples_.at(i); }

 private:
  std::vector<Sample> samples_;
};

struct Batch {
  Tensor<float> img, grad, edge, mask;                    // ground truth + mask
  Tensor<float> img_masked, grad_masked, edge_masked;     // network inputs
  std::vector<Tensor<float>> grad_pyr;  // GT gradient maps per scale, coarse->fine
  std::vector<Tensor<float>> me_pyr;    // Gaussian-blurred edge masks per scale
};

Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices,
                 const MaskSpec& mask_spec, int n_s, Rng& rng);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams<float>& params);
  int64_t t() const { return t_; }

  // moments exposed for checkpointing, keyed by parameter name
  std::map<std::string, std::vector<float>>& m() { return m_; }
  std::map<std::string, std::vector<float>>& v() { return v_; }
  const std::map<std::string, std::vector<float>>& m() const { return m_; }
  const std::map<std::string, std::vector<float>>& v() const { return v_; }
  void set_t(int64_t t) { t_ = t; }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

struct TrainState {
  int64_t step = 0;
  ModelParams<float> g, d;
  Adam opt_g{1e-4, 0.0, 0.9, 1e-8};
  Adam opt_d{1e-5, 0.0, 0.9, 1e-8};
  Rng rng;
};

TrainState init_train_state(const TrainConfig& cfg);
LossReport train_step(TrainState& st, const Batch& batch, const TrainConfig& cfg,
                      const FeatureExtractor<float>& fx);

// runs the full loop; returns final state. log_stream receives JSON lines.
TrainState train(const TrainConfig& cfg, std::ostream* log_stream = nullptr);

Dataset build_dataset(const TrainConfig& cfg);
std::vector<size_t> train_indices(const TrainConfig& cfg, size_t dataset_size);
std::vector<size_t> holdout_indices(const TrainConfig& cfg, size_t dataset_size);

void save_train_checkpoint(const std::string& dir, const TrainState& st,
                           const TrainConfig& cfg);
TrainState load_train_checkpoint(const std::string& dir, const TrainConfig& cfg);

std::string train_config_json(const TrainConfig& cfg);

// Reads every TrainConfig field from a layered key store (sections: train,
// model, weights, mask, synth); absent keys keep their defaults.
TrainConfig train_config_from(const ConfigMap& m);

// Runs the generator without recording and composites the result.
Image inpaint_image(ModelParams<float>& g, const GeneratorConfig& cfg, const Image& img,
                    const Image& mask);

// mean PSNR of composited outputs and of the mean-fill baseline on held-out
// samples, under deterministic per-index masks
struct HoldoutEval {
  double psnr_model = 0.0;
  double psnr_meanfill = 0.0;
  int count = 0;
};
HoldoutEval evaluate_holdout(TrainState& st, const TrainConfig& cfg, const Dataset& ds,
                             const std::vector<size_t>& holdout);

// Trains the four toggle combinations (none, gradients-only, +embedding,
// +attention) from one base config and scores each on the shared holdout.
struct AblationRow {
  std::string name;
  bool mt = false, se = false, at = false;
  MetricsReport report;
  LossReport final_losses;  // from the last training step of the row
};
std::vector<AblationRow> run_ablation(const TrainConfig& base, std::ostream* log_stream = nullptr);
std::string ablation_to_json(const std::vector<AblationRow>& rows, uint64_t seed,
                             const std::string& data_digest);
std::string ablation_to_table(const std::vector<AblationRow>& rows);

}  // namespace sfill
