#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "structfill/tensor.hpp"

namespace sfill {

struct GeneratorConfig {
  int image_size = 64;      // divisible by 4 (two downsamplings)
  int base_channels = 32;
  int residual_blocks = 8;
  int n_s = 3;              // pyramid scales emitted by the structure branch
  bool mt = true;           // multi-task: predict gradient maps at all
  bool se = true;           // structure embedding: merge structure features back
  bool at = true;           // non-local attention after the residual stack
  int attn_k = 3;
  int attn_stride = 1;
  int disc_base_channels = 64;  // critic widths: d, 2d, 4d, 8d

  void validate() const;
};

template <class T>
class ModelParams {
 public:
  void add(const std::string& name, Tensor<T> t);
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  int64_t value_count() const;
  void zero_grads();
  bool all_finite() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> map_;
};

template <class T>
struct GeneratorOutput {
  Tensor<T> i_pred;                // (n,3,h,w) in [0,1]
  std::vector<Tensor<T>> c_pred;   // coarse -> fine, 6 channels each; empty when MT off
};

template <class T>
ModelParams<T> build_generator(const GeneratorConfig& cfg, uint64_t seed);

// inputs: masked image (n,3,s,s), masked gradient map (n,6,s,s),
// masked edge map (n,1,s,s), mask (n,1,s,s)
template <class T>
GeneratorOutput<T> generator_forward(ModelParams<T>& params, const Tensor<T>& img_masked,
                                     const Tensor<T>& grad_masked, const Tensor<T>& edge_masked,
                                     const Tensor<T>& mask, const GeneratorConfig& cfg);

// One structure-embedding stage: residual block -> 6-channel linear head;
// returns (features to continue the image branch with, predicted gradients).
// se_on merges structure features back by concatenation; otherwise the head
// reads detached features and the branch passes through unchanged.
template <class T>
std::pair<Tensor<T>, Tensor<T>> structure_embedding_forward(ModelParams<T>& params,
                                                            const std::string& prefix,
                                                            const Tensor<T>& features,
                                                            bool se_on);

template <class T>
Tensor<T> attention_forward(const Tensor<T>& x, int k, int stride, const Tensor<T>& gamma);

template <class T>
ModelParams<T> build_discriminator(const GeneratorConfig& cfg, uint64_t seed);

template <class T>
Tensor<T> discriminator_forward(ModelParams<T>& params, const Tensor<T>& image,
                                const GeneratorConfig& cfg);

// spatial side of the patch score map for a given input size
int discriminator_output_size(int image_size);

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template ModelParams<float> build_generator<float>(const GeneratorConfig&, uint64_t);
extern template ModelParams<double> build_generator<double>(const GeneratorConfig&, uint64_t);
extern template GeneratorOutput<float> generator_forward<float>(
    ModelParams<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
    const Tensor<float>&, const GeneratorConfig&);
extern template GeneratorOutput<double> generator_forward<double>(
    ModelParams<double>&, const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
    const Tensor<double>&, const GeneratorConfig&);
extern template std::pair<Tensor<float>, Tensor<float>> structure_embedding_forward<float>(
    ModelParams<float>&, const std::string&, const Tensor<float>&, bool);
extern template std::pair<Tensor<double>, Tensor<double>> structure_embedding_forward<double>(
    ModelParams<double>&, const std::string&, const Tensor<double>&, bool);
extern template Tensor<float> attention_forward<float>(const Tensor<float>&, int, int,
                                                       const Tensor<float>&);
extern template Tensor<double> attention_forward<double>(const Tensor<double>&, int, int,
                                                         const Tensor<double>&);
extern template ModelParams<float> build_discriminator<float>(const GeneratorConfig&, uint64_t);
extern template ModelParams<double> build_discriminator<double>(const GeneratorConfig&, uint64_t);
extern template Tensor<float> discriminator_forward<float>(ModelParams<float>&,
                                                           const Tensor<float>&,
                                                           const GeneratorConfig&);
extern template Tensor<double> discriminator_forward<double>(ModelParams<double>&,
                                                             const Tensor<double>&,
                                                             const GeneratorConfig&);

}  // namespace sfill
