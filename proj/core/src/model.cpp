#include "structfill/model.hpp"

#include <cmath>

#include "structfill/ops.hpp"
#include "structfill/rng.hpp"

namespace sfill {

void GeneratorConfig::validate() const {
  if (image_size < 4 || image_size % 4 != 0)
    throw TensorError("GeneratorConfig: image_size " + std::to_string(image_size) +
                      " must be a positive multiple of 4");
  if (base_channels < 1) throw TensorError("GeneratorConfig: base_channels must be >= 1");
  if (residual_blocks < 1) throw TensorError("GeneratorConfig: residual_blocks must be >= 1");
  if (n_s < 1 || n_s > 3)
    throw TensorError("GeneratorConfig: n_s must be in [1,3], got " + std::to_string(n_s));
  if (se && !mt)
    throw TensorError("GeneratorConfig: structure embedding (se) requires multi-task (mt)");
  if (attn_k < 1 || attn_k % 2 == 0)
    throw TensorError("GeneratorConfig: attention patch size must be odd and >= 1");
  if (attn_stride < 1) throw TensorError("GeneratorConfig: attention stride must be >= 1");
  if (at && image_size / 4 < attn_k)
    throw TensorError("GeneratorConfig: bottleneck " + std::to_string(image_size / 4) +
                      " smaller than attention patch " + std::to_string(attn_k));
  if (disc_base_channels < 1)
    throw TensorError("GeneratorConfig: disc_base_channels must be >= 1");
}

template <class T>
void ModelParams<T>::add(const std::string& name, Tensor<T> t) {
  if (map_.count(name)) throw TensorError("ModelParams: duplicate name " + name);
  t.set_requires_grad(true);
  order_.push_back(name);
  map_.emplace(name, std::move(t));
}

template <class T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw TensorError("ModelParams: unknown parameter " + name);
  return it->second;
}

template <class T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw TensorError("ModelParams: unknown parameter " + name);
  return it->second;
}

template <class T>
int64_t ModelParams<T>::value_count() const {
  int64_t n = 0;
  for (const auto& name : order_) n += map_.at(name).numel();
  return n;
}

template <class T>
void ModelParams<T>::zero_grads() {
  for (const auto& name : order_) map_.at(name).zero_grad();
}

template <class T>
bool ModelParams<T>::all_finite() const {
  for (const auto& name : order_)
    if (!map_.at(name).all_finite()) return false;
  return true;
}

namespace {

// Every parameter draws from its own stream keyed by name, so registries
// agree on the shared subset across toggle combinations.
template <class T>
Tensor<T> scaled_normal(const Shape& s, int fan_in, uint64_t seed, const std::string& name) {
  Rng rng(mix_seed(seed, fnv1a64(name)));
  Tensor<T> t(s);
  const T sd = std::sqrt(T(2) / static_cast<T>(fan_in));
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal()) * sd;
  return t;
}

template <class T>
void add_conv(ModelParams<T>& mp, const std::string& prefix, int in_c, int out_c, int k,
              uint64_t seed, bool with_norm) {
  mp.add(prefix + ".w", scaled_normal<T>(Shape(out_c, in_c, k, k), in_c * k * k, seed,
                                         prefix + ".w"));
  mp.add(prefix + ".b", Tensor<T>(Shape(1, out_c, 1, 1)));
  if (with_norm) {
    mp.add(prefix + ".in.g", Tensor<T>::full(Shape(1, out_c, 1, 1), T(1)));
    mp.add(prefix + ".in.b", Tensor<T>(Shape(1, out_c, 1, 1)));
  }
}

template <class T>
void add_resblock(ModelParams<T>& mp, const std::string& prefix, int c, uint64_t seed) {
  add_conv(mp, prefix + ".c1", c, c, 3, seed, true);
  add_conv(mp, prefix + ".c2", c, c, 3, seed, true);
}

template <class T>
Tensor<T> conv_in_relu(ModelParams<T>& mp, const std::string& prefix, const Tensor<T>& x,
                       int k, int stride, int pad, int dilation = 1) {
  ConvSpec spec;
  spec.out_channels = mp.at(prefix + ".w").shape().n;
  spec.kh = spec.kw = k;
  spec.stride = stride;
  spec.padding = pad;
  spec.dilation = dilation;
  Tensor<T> y = conv2d(x, mp.at(prefix + ".w"), mp.at(prefix + ".b"), spec);
  y = instance_norm(y, mp.at(prefix + ".in.g"), mp.at(prefix + ".in.b"));
  return relu(y);
}

// x + IN(conv(relu(IN(conv(x))))); first conv dilated per backbone lineage
template <class T>
Tensor<T> resblock(ModelParams<T>& mp, const std::string& prefix, const Tensor<T>& x,
                   int dilation) {
  ConvSpec s1;
  s1.out_channels = x.shape().c;
  s1.kh = s1.kw = 3;
  s1.stride = 1;
  s1.dilation = dilation;
  s1.padding = dilation;
  Tensor<T> h = conv2d(x, mp.at(prefix + ".c1.w"), mp.at(prefix + ".c1.b"), s1);
  h = relu(instance_norm(h, mp.at(prefix + ".c1.in.g"), mp.at(prefix + ".c1.in.b")));
  ConvSpec s2 = s1;
  s2.dilation = 1;
  s2.padding = 1;
  h = conv2d(h, mp.at(prefix + ".c2.w"), mp.at(prefix + ".c2.b"), s2);
  h = instance_norm(h, mp.at(prefix + ".c2.in.g"), mp.at(prefix + ".c2.in.b"));
  return add(x, h);
}

// scale index d in {0: bottleneck 1/4, 1: mid 1/2, 2: full}; the finest n_s
// scales carry structure predictions
inline bool scale_emitted(const GeneratorConfig& cfg, int d) { return d >= 3 - cfg.n_s; }

int decoder_in_channels(const GeneratorConfig& cfg, int d, int c_plain) {
  const bool merged = cfg.mt && cfg.se && scale_emitted(cfg, d);
  return merged ? 2 * c_plain : c_plain;
}

}  // namespace

template <class T>
ModelParams<T> build_generator(const GeneratorConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int bc = cfg.base_channels;
  ModelParams<T> mp;
  add_conv(mp, "g.enc0", 11, bc, 7, seed, true);
  add_conv(mp, "g.enc1", bc, 2 * bc, 4, seed, true);
  add_conv(mp, "g.enc2", 2 * bc, 4 * bc, 4, seed, true);
  for (int r = 0; r < cfg.residual_blocks; ++r)
    add_resblock(mp, "g.res" + std::to_string(r), 4 * bc, seed);
  if (cfg.at) mp.add("g.attn.gamma", Tensor<T>(Shape(1, 1, 1, 1)));

  const int scale_c[3] = {4 * bc, 2 * bc, bc};
  for (int d = 0; d < 3; ++d) {
    if (!cfg.mt || !scale_emitted(cfg, d)) continue;
    const std::string prefix = "g.se" + std::to_string(d);
    if (cfg.se) add_resblock(mp, prefix + ".res", scale_c[d], seed);
    add_conv(mp, prefix + ".head", scale_c[d], 6, 1, seed, false);
  }

  add_conv(mp, "g.dec1", decoder_in_channels(cfg, 0, 4 * bc), 2 * bc, 3, seed, true);
  add_conv(mp, "g.dec2", decoder_in_channels(cfg, 1, 2 * bc), bc, 3, seed, true);
  add_conv(mp, "g.out", decoder_in_channels(cfg, 2, bc), 3, 7, seed, false);
  return mp;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> structure_embedding_forward(ModelParams<T>& params,
                                                            const std::string& prefix,
                                                            const Tensor<T>& features,
                                                            bool se_on) {
  ConvSpec head;
  head.out_channels = 6;
  head.kh = head.kw = 1;
  if (se_on) {
    Tensor<T> sf = resblock(params, prefix + ".res", features, 1);
    Tensor<T> cpred = conv2d(sf, params.at(prefix + ".head.w"), params.at(prefix + ".head.b"),
                             head);
    Tensor<T> merged = concat_channels<T>({features, sf});
    return {merged, cpred};
  }
  // pass-through branch: the head learns from a detached view, so structure
  // supervision cannot reach the trunk without the embedding
  Tensor<T> cpred = conv2d(features.detach(), params.at(prefix + ".head.w"),
                           params.at(prefix + ".head.b"), head);
  return {features, cpred};
}

template <class T>
Tensor<T> attention_forward(const Tensor<T>& x, int k, int stride, const Tensor<T>& gamma) {
  const Shape s = x.shape();
  if (s.h < k || s.w < k)
    throw TensorError("attention_forward: patch size " + std::to_string(k) +
                      " exceeds map " + std::to_string(s.h) + "x" + std::to_string(s.w));
  if (k % 2 == 0) throw TensorError("attention_forward: patch size must be odd");
  const int pad = k / 2;

  // per-pixel overlap counts of the stamped reconstruction (constant plane)
  Tensor<T> recip(Shape(1, 1, s.h, s.w));
  {
    std::vector<int> counts(static_cast<size_t>(s.h) * s.w, 0);
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        for (int ki = 0; ki < k; ++ki) {
          const int oy = y + ki - pad;
          if (oy < 0 || oy >= s.h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int ox = xx + kj - pad;
            if (ox >= 0 && ox < s.w) counts[static_cast<size_t>(oy) * s.w + ox]++;
          }
        }
    for (int64_t i = 0; i < recip.numel(); ++i)
      recip.data()[i] = T(1) / static_cast<T>(counts[i]);
  }

  std::vector<Tensor<T>> outs;
  outs.reserve(s.n);
  for (int in = 0; in < s.n; ++in) {
    Tensor<T> xi = narrow_batch(x, in, 1);
    Tensor<T> patches = extract_patches(xi, k, stride);
    Tensor<T> filters = l2_normalize_filters(patches, T(1e-8));
    const int m = patches.shape().n;
    ConvSpec spec;
    spec.out_channels = m;
    spec.kh = spec.kw = k;
    spec.stride = 1;
    spec.padding = pad;
    Tensor<T> zero_bias(Shape(1, m, 1, 1));
    Tensor<T> scores = conv2d(xi, filters, zero_bias, spec);
    Tensor<T> attn = softmax_over(scores, Axis::Channel);
    Tensor<T> recon = conv_transpose2d(attn, patches, pad);
    Tensor<T> o = mul_bc1(recon, recip);
    outs.push_back(add(xi, scale_by(o, gamma)));
  }
  return s.n == 1 ? outs[0] : concat_batch(outs);
}

template <class T>
GeneratorOutput<T> generator_forward(ModelParams<T>& params, const Tensor<T>& img_masked,
                                     const Tensor<T>& grad_masked, const Tensor<T>& edge_masked,
                                     const Tensor<T>& mask, const GeneratorConfig& cfg) {
  cfg.validate();
  const Shape is = img_masked.shape();
  auto check_input = [&](const Tensor<T>& t, int c, const char* what) {
    const Shape ts = t.shape();
    if (ts.c != c || ts.n != is.n || ts.h != cfg.image_size || ts.w != cfg.image_size)
      throw TensorError(std::string("generator_forward: ") + what + " has shape " + ts.str() +
                        ", expected (" + std::to_string(is.n) + "," + std::to_string(c) + "," +
                        std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                        ")");
  };
  check_input(img_masked, 3, "masked image");
  check_input(grad_masked, 6, "masked gradient map");
  check_input(edge_masked, 1, "masked edge map");
  check_input(mask, 1, "mask");

  Tensor<T> x = concat_channels<T>({img_masked, grad_masked, edge_masked, mask});
  x = conv_in_relu(params, "g.enc0", x, 7, 1, 3);
  x = conv_in_relu(params, "g.enc1", x, 4, 2, 1);
  x = conv_in_relu(params, "g.enc2", x, 4, 2, 1);
  for (int r = 0; r < cfg.residual_blocks; ++r)
    x = resblock(params, "g.res" + std::to_string(r), x, 2);
  if (cfg.at) x = attention_forward(x, cfg.attn_k, cfg.attn_stride, params.at("g.attn.gamma"));

  GeneratorOutput<T> out;
  for (int d = 0; d < 3; ++d) {
    if (cfg.mt && scale_emitted(cfg, d)) {
      auto [merged, cpred] =
          structure_embedding_forward(params, "g.se" + std::to_string(d), x, cfg.se);
      x = merged;
      out.c_pred.push_back(cpred);
    }
    if (d == 0) {
      x = upsample_nearest(x, 2);
      x = conv_in_relu(params, "g.dec1", x, 3, 1, 1);
    } else if (d == 1) {
      x = upsample_nearest(x, 2);
      x = conv_in_relu(params, "g.dec2", x, 3, 1, 1);
    }
  }
  ConvSpec last;
  last.out_channels = 3;
  last.kh = last.kw = 7;
  last.padding = 3;
  Tensor<T> raw = conv2d(x, params.at("g.out.w"), params.at("g.out.b"), last);
  out.i_pred = affine(tanh_op(raw), T(0.5), T(0.5));  // tanh range mapped onto [0,1]
  return out;
}

int discriminator_output_size(int image_size) {
  int s = image_size;
  const int strides[5] = {2, 2, 2, 1, 1};
  for (int l = 0; l < 5; ++l) {
    s = conv_out_extent(s, 4, strides[l], 1, 1);
    if (s < 1)
      throw TensorError("discriminator: input size " + std::to_string(image_size) +
                        " too small for the conv stack (layer " + std::to_string(l) + ")");
  }
  return s;
}

template <class T>
ModelParams<T> build_discriminator(const GeneratorConfig& cfg, uint64_t seed) {
  cfg.validate();
  discriminator_output_size(cfg.image_size);
  const int db = cfg.disc_base_channels;
  const int chans[6] = {3, db, 2 * db, 4 * db, 8 * db, 1};
  ModelParams<T> mp;
  for (int l = 0; l < 5; ++l)
    add_conv(mp, "d.l" + std::to_string(l), chans[l], chans[l + 1], 4, seed, false);
  return mp;
}

template <class T>
Tensor<T> discriminator_forward(ModelParams<T>& params, const Tensor<T>& image,
                                const GeneratorConfig& cfg) {
  const Shape s = image.shape();
  if (s.c != 3 || s.h != cfg.image_size || s.w != cfg.image_size)
    throw TensorError("discriminator_forward: image shape " + s.str() + " vs configured size " +
                      std::to_string(cfg.image_size));
  const int strides[5] = {2, 2, 2, 1, 1};
  Tensor<T> x = image;
  for (int l = 0; l < 5; ++l) {
    const std::string prefix = "d.l" + std::to_string(l);
    ConvSpec spec;
    spec.out_channels = params.at(prefix + ".w").shape().n;
    spec.kh = spec.kw = 4;
    spec.stride = strides[l];
    spec.padding = 1;
    x = conv2d(x, params.at(prefix + ".w"), params.at(prefix + ".b"), spec);
    if (l < 4) x = leaky_relu(x, T(0.2));
  }
  return x;
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<float> build_generator<float>(const GeneratorConfig&, uint64_t);
template ModelParams<double> build_generator<double>(const GeneratorConfig&, uint64_t);
template GeneratorOutput<float> generator_forward<float>(ModelParams<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const GeneratorConfig&);
template GeneratorOutput<double> generator_forward<double>(ModelParams<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const GeneratorConfig&);
template std::pair<Tensor<float>, Tensor<float>> structure_embedding_forward<float>(
    ModelParams<float>&, const std::string&, const Tensor<float>&, bool);
template std::pair<Tensor<double>, Tensor<double>> structure_embedding_forward<double>(
    ModelParams<double>&, const std::string&, const Tensor<double>&, bool);
template Tensor<float> attention_forward<float>(const Tensor<float>&, int, int,
                                                const Tensor<float>&);
template Tensor<double> attention_forward<double>(const Tensor<double>&, int, int,
                                                  const Tensor<double>&);
template ModelParams<float> build_discriminator<float>(const GeneratorConfig&, uint64_t);
template ModelParams<double> build_discriminator<double>(const GeneratorConfig&, uint64_t);
template Tensor<float> discriminator_forward<float>(ModelParams<float>&, const Tensor<float>&,
                                                    const GeneratorConfig&);
template Tensor<double> discriminator_forward<double>(ModelParams<double>&,
                                                      const Tensor<double>&,
                                                      const GeneratorConfig&);

}  // namespace sfill
