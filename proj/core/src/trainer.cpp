#include "structfill/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "structfill/checkpoint.hpp"
#include "structfill/imageops.hpp"

namespace sfill {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch_size < 1) throw TensorError("TrainConfig: batch_size must be >= 1");
  if (steps < 0) throw TensorError("TrainConfig: steps must be >= 0");
  if (lr < 0.0) throw TensorError("TrainConfig: lr must be >= 0");
  if (d_lr_divisor <= 0.0) throw TensorError("TrainConfig: d_lr_divisor must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw TensorError("TrainConfig: betas must lie in [0,1)");
  if (adam_eps <= 0.0) throw TensorError("TrainConfig: adam_eps must be > 0");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    throw TensorError("TrainConfig: holdout_fraction must lie in [0,1)");
  if (log_every < 1) throw TensorError("TrainConfig: log_every must be >= 1");
  if (ckpt_every < 0) throw TensorError("TrainConfig: ckpt_every must be >= 0");
}

Dataset::Dataset(std::vector<Image> images) {
  samples_.reserve(images.size());
  for (auto& img : images) {
    Sample s;
    s.grad = sobel_gradient_map(img);
    s.edge = canny_edges(img);
    s.img = std::move(img);
    samples_.push_back(std::move(s));
  }
}

namespace {

// scales emitted by the generator, coarse -> fine, as downscale factors
std::vector<int> emitted_factors(int n_s) {
  std::vector<int> f;
  for (int d = 3 - n_s; d < 3; ++d) f.push_back(1 << (2 - d));
  return f;
}

void copy_plane(Tensor<float>& dst, int sample, const Image& src) {
  const Shape s = dst.shape();
  if (src.h != s.h || src.w != s.w || src.c != s.c)
    throw TensorError("copy_plane: image does not match batch tensor layout");
  float* out = dst.data() + static_cast<int64_t>(sample) * s.c * s.h * s.w;
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        out[(static_cast<int64_t>(c) * s.h + y) * s.w + x] =
            static_cast<float>(src.at(y, x, c));
}

}  // namespace

Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices,
                 const MaskSpec& mask_spec, int n_s, Rng& rng) {
  if (indices.empty()) throw TensorError("make_batch: empty index list");
  const Sample& first = ds.at(indices[0]);
  const int s = first.img.h;
  const int n = static_cast<int>(indices.size());

  Batch b;
  b.img = Tensor<float>(Shape(n, 3, s, s));
  b.grad = Tensor<float>(Shape(n, 6, s, s));
  b.edge = Tensor<float>(Shape(n, 1, s, s));
  b.mask = Tensor<float>(Shape(n, 1, s, s));

  const auto factors = emitted_factors(n_s);
  const auto kernel = gaussian_kernel(10, 1.0);
  for (int f : factors) {
    const int hs = s / f;
    b.grad_pyr.push_back(Tensor<float>(Shape(n, 6, hs, hs)));
    b.me_pyr.push_back(Tensor<float>(Shape(n, 1, hs, hs)));
  }

  for (int i = 0; i < n; ++i) {
    const Sample& smp = ds.at(indices[i]);
    if (smp.img.h != s || smp.img.w != s)
      throw TensorError("make_batch: images in a batch must share one size");
    copy_plane(b.img, i, smp.img);
    copy_plane(b.grad, i, smp.grad);
    copy_plane(b.edge, i, smp.edge);
    const Image m = make_mask(s, s, mask_spec, rng.next_u64());
    copy_plane(b.mask, i, m);
    for (size_t k = 0; k < factors.size(); ++k) {
      const Image grad_s = downscale_nearest(smp.grad, factors[k]);
      const Image edge_s = downscale_nearest(smp.edge, factors[k]);
      copy_plane(b.grad_pyr[k], i, grad_s);
      copy_plane(b.me_pyr[k], i, edge_weight_mask(edge_s, kernel, 10));
    }
  }

  // masked inputs: zero out the hole (mask is 1 where content is missing)
  auto masked = [&](const Tensor<float>& plane) {
    Tensor<float> out(plane.shape());
    const Shape ps = plane.shape();
    const int64_t hw = static_cast<int64_t>(ps.h) * ps.w;
    for (int i = 0; i < ps.n; ++i) {
      const float* mp = b.mask.data() + static_cast<int64_t>(i) * hw;
      for (int c = 0; c < ps.c; ++c) {
        const float* src = plane.data() + (static_cast<int64_t>(i) * ps.c + c) * hw;
        float* dst = out.data() + (static_cast<int64_t>(i) * ps.c + c) * hw;
        for (int64_t j = 0; j < hw; ++j) dst[j] = src[j] * (1.0f - mp[j]);
      }
    }
    return out;
  };
  b.img_masked = masked(b.img);
  b.grad_masked = masked(b.grad);
  b.edge_masked = masked(b.edge);
  return b;
}

void Adam::step(ModelParams<float>& params) {
  ++t_;
  for (const auto& name : params.names()) {
    Tensor<float>& p = params.at(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(static_cast<size_t>(p.numel()), 0.0f);
    if (v.empty()) v.assign(static_cast<size_t>(p.numel()), 0.0f);
    adam_update(p.data(), p.grad(), m.data(), v.data(), p.numel(), lr_, beta1_, beta2_,
                eps_, t_);
  }
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.g = build_generator<float>(cfg.model, cfg.seed);
  st.d = build_discriminator<float>(cfg.model, mix_seed(cfg.seed, fnv1a64("disc")));
  st.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  st.opt_d = Adam(cfg.lr / cfg.d_lr_divisor, cfg.beta1, cfg.beta2, cfg.adam_eps);
  st.rng = Rng(mix_seed(cfg.seed, fnv1a64("train")));
  return st;
}

namespace {

double term_value(const Tensor<float>& t, const char* name) {
  const double v = static_cast<double>(t.data()[0]);
  if (!std::isfinite(v))
    throw TensorError(std::string("train_step: loss term '") + name +
                      "' is not finite; aborting before the update");
  return v;
}

}  // namespace

LossReport train_step(TrainState& st, const Batch& batch, const TrainConfig& cfg,
                      const FeatureExtractor<float>& fx) {
  LossReport rep;

  Tape<float> tape;
  Tape<float>::Scope scope(tape);

  GeneratorOutput<float> out =
      generator_forward(st.g, batch.img_masked, batch.grad_masked, batch.edge_masked,
                        batch.mask, cfg.model);
  Tensor<float> i_comp = add(batch.img_masked, mul_bc1(out.i_pred, batch.mask));

  // discriminator phase on its own tape; the composite is detached so no
  // generator gradient leaks through this update
  {
    Tensor<float> i_comp_d = i_comp.detach();
    Tape<float> dtape;
    Tape<float>::Scope dscope(dtape);
    Tensor<float> real = discriminator_forward(st.d, batch.img, cfg.model);
    Tensor<float> fake = discriminator_forward(st.d, i_comp_d, cfg.model);
    Tensor<float> ld = adversarial_d_loss(real, fake);
    rep.terms["adv_d"] = term_value(ld, "adv_d");
    st.d.zero_grads();
    dtape.backward(ld);
    st.opt_d.step(st.d);
  }

  // generator phase continues the outer tape against the updated critic
  Tensor<float> fake_scores = discriminator_forward(st.d, i_comp, cfg.model);
  Tensor<float> adv_g = adversarial_g_loss(fake_scores, cfg.non_saturating_g);
  rep.terms["adv_g"] = term_value(adv_g, "adv_g");

  Tensor<float> rec = rec_loss(out.i_pred, batch.img);
  rep.terms["rec"] = term_value(rec, "rec");

  auto fp = fx.features(out.i_pred);
  auto ft = fx.features(batch.img);
  Tensor<float> perc = perceptual_from_features(fp, ft);
  rep.terms["perc"] = term_value(perc, "perc");
  Tensor<float> style = style_from_features(fp, ft);
  rep.terms["style"] = term_value(style, "style");

  std::optional<Tensor<float>> structure;
  if (cfg.model.mt) {
    std::vector<double> per_l1, per_edge;
    structure = structure_loss(out.c_pred, batch.grad_pyr, batch.me_pyr,
                               static_cast<float>(cfg.weights.beta), &per_l1, &per_edge);
    rep.terms["structure"] = term_value(*structure, "structure");
    for (size_t k = 0; k < per_l1.size(); ++k) {
      rep.terms["structure_l1_s" + std::to_string(k)] = per_l1[k];
      rep.terms["structure_edge_s" + std::to_string(k)] = per_edge[k];
    }
  } else {
    rep.terms["structure"] = 0.0;
  }

  Tensor<float> total = total_loss(rec, perc, style, adv_g, structure, cfg.weights);
  rep.total = term_value(total, "total");

  st.g.zero_grads();
  st.d.zero_grads();  // scratch gradients only; the critic update already ran
  tape.backward(total);
  st.opt_g.step(st.g);
  if (!st.g.all_finite())
    throw TensorError("train_step: generator parameters became non-finite");
  return rep;
}

Dataset build_dataset(const TrainConfig& cfg) {
  std::vector<Image> images;
  if (!cfg.data_dir.empty()) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(cfg.data_dir)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty())
      throw TensorError("build_dataset: no .png/.jpg images in " + cfg.data_dir);
    for (const auto& p : paths)
      images.push_back(ingest_image(p.string(), cfg.model.image_size, cfg.model.image_size));
  } else {
    SynthSpec spec = cfg.synth;
    spec.size = cfg.model.image_size;
    images = synth_dataset(spec, cfg.seed);
  }
  return Dataset(std::move(images));
}

namespace {

std::vector<size_t> shuffled_indices(uint64_t seed, size_t n) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, fnv1a64("split")));
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

size_t holdout_count(const TrainConfig& cfg, size_t n) {
  size_t k = static_cast<size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(n)));
  if (k >= n) k = n - 1;  // never hold out everything
  return k;
}

}  // namespace

std::vector<size_t> train_indices(const TrainConfig& cfg, size_t dataset_size) {
  auto idx = shuffled_indices(cfg.seed, dataset_size);
  idx.erase(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(holdout_count(cfg, dataset_size)));
  return idx;
}

std::vector<size_t> holdout_indices(const TrainConfig& cfg, size_t dataset_size) {
  auto idx = shuffled_indices(cfg.seed, dataset_size);
  idx.resize(holdout_count(cfg, dataset_size));
  return idx;
}

std::string train_config_json(const TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["steps"] = cfg.steps;
  j["lr"] = cfg.lr;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["d_lr_divisor"] = cfg.d_lr_divisor;
  j["seed"] = cfg.seed;
  j["holdout_fraction"] = cfg.holdout_fraction;
  j["non_saturating_g"] = cfg.non_saturating_g;
  j["model"] = {{"image_size", cfg.model.image_size},
                {"base_channels", cfg.model.base_channels},
                {"residual_blocks", cfg.model.residual_blocks},
                {"n_s", cfg.model.n_s},
                {"mt", cfg.model.mt},
                {"se", cfg.model.se},
                {"at", cfg.model.at}};
  j["weights"] = {{"lambda_perc", cfg.weights.lambda_perc},
                  {"lambda_style", cfg.weights.lambda_style},
                  {"lambda_adv", cfg.weights.lambda_adv},
                  {"alpha", cfg.weights.alpha},
                  {"beta", cfg.weights.beta}};
  return j.dump();
}

TrainConfig train_config_from(const ConfigMap& m) {
  TrainConfig c;
  c.batch_size = static_cast<int>(m.get_int("train.batch_size", c.batch_size));
  c.steps = m.get_int("train.steps", c.steps);
  c.lr = m.get_double("train.lr", c.lr);
  c.beta1 = m.get_double("train.beta1", c.beta1);
  c.beta2 = m.get_double("train.beta2", c.beta2);
  c.adam_eps = m.get_double("train.adam_eps", c.adam_eps);
  c.d_lr_divisor = m.get_double("train.d_lr_divisor", c.d_lr_divisor);
  c.seed = static_cast<uint64_t>(m.get_int("train.seed", 0));
  c.holdout_fraction = m.get_double("train.holdout_fraction", c.holdout_fraction);
  c.non_saturating_g = m.get_bool("train.non_saturating_g", c.non_saturating_g);
  c.ckpt_every = m.get_int("train.ckpt_every", c.ckpt_every);
  c.log_every = m.get_int("train.log_every", c.log_every);
  c.out_dir = m.get_str("train.out_dir", c.out_dir);
  c.resume_dir = m.get_str("train.resume_dir", c.resume_dir);
  c.data_dir = m.get_str("train.data_dir", c.data_dir);

  c.model.image_size = static_cast<int>(m.get_int("model.image_size", c.model.image_size));
  c.model.base_channels =
      static_cast<int>(m.get_int("model.base_channels", c.model.base_channels));
  c.model.residual_blocks =
      static_cast<int>(m.get_int("model.residual_blocks", c.model.residual_blocks));
  c.model.n_s = static_cast<int>(m.get_int("model.n_s", c.model.n_s));
  c.model.mt = m.get_bool("model.mt", c.model.mt);
  c.model.se = m.get_bool("model.se", c.model.se);
  c.model.at = m.get_bool("model.at", c.model.at);
  c.model.attn_k = static_cast<int>(m.get_int("model.attn_k", c.model.attn_k));
  c.model.attn_stride =
      static_cast<int>(m.get_int("model.attn_stride", c.model.attn_stride));
  c.model.disc_base_channels =
      static_cast<int>(m.get_int("model.disc_base_channels", c.model.disc_base_channels));

  c.weights.lambda_perc = m.get_double("weights.lambda_perc", c.weights.lambda_perc);
  c.weights.lambda_style = m.get_double("weights.lambda_style", c.weights.lambda_style);
  c.weights.lambda_adv = m.get_double("weights.lambda_adv", c.weights.lambda_adv);
  c.weights.alpha = m.get_double("weights.alpha", c.weights.alpha);
  c.weights.beta = m.get_double("weights.beta", c.weights.beta);

  const std::string kind = m.get_str("mask.kind", "irregular");
  if (kind == "regular")
    c.mask.kind = MaskKind::Regular;
  else if (kind == "irregular")
    c.mask.kind = MaskKind::Irregular;
  else
    throw TensorError("config mask.kind must be regular or irregular, got '" + kind + "'");
  c.mask.hole_h = static_cast<int>(m.get_int("mask.hole_h", c.mask.hole_h));
  c.mask.hole_w = static_cast<int>(m.get_int("mask.hole_w", c.mask.hole_w));
  c.mask.centered = m.get_bool("mask.centered", c.mask.centered);

  c.synth.count = static_cast<int>(m.get_int("synth.count", c.synth.count));
  c.synth.shapes_min = static_cast<int>(m.get_int("synth.shapes_min", c.synth.shapes_min));
  c.synth.shapes_max = static_cast<int>(m.get_int("synth.shapes_max", c.synth.shapes_max));
  c.synth.size = c.model.image_size;
  return c;
}

void save_train_checkpoint(const std::string& dir, const TrainState& st,
                           const TrainConfig& cfg) {
  CheckpointData ck;
  ck.step = st.step;
  auto push_params = [&](const ModelParams<float>& mp) {
    for (const auto& name : mp.names()) ck.tensors.emplace_back(name, mp.at(name));
  };
  push_params(st.g);
  push_params(st.d);
  auto push_moments = [&](const char* tag, const std::map<std::string, std::vector<float>>& mv) {
    for (const auto& [name, vals] : mv) {
      Tensor<float> t(Shape(1, 1, 1, static_cast<int>(vals.size())));
      std::copy(vals.begin(), vals.end(), t.data());
      ck.tensors.emplace_back(std::string(tag) + "." + name, t);
    }
  };
  push_moments("adam_g.m", st.opt_g.m());
  push_moments("adam_g.v", st.opt_g.v());
  push_moments("adam_d.m", st.opt_d.m());
  push_moments("adam_d.v", st.opt_d.v());
  ck.extra["rng"] = st.rng.serialize();
  ck.extra["opt_g_t"] = std::to_string(st.opt_g.t());
  ck.extra["opt_d_t"] = std::to_string(st.opt_d.t());
  ck.extra["config"] = train_config_json(cfg);
  save_checkpoint(dir, ck);
}

TrainState load_train_checkpoint(const std::string& dir, const TrainConfig& cfg) {
  const CheckpointData ck = load_checkpoint(dir);
  TrainState st = init_train_state(cfg);
  st.step = ck.step;
  auto pull_params = [&](ModelParams<float>& mp) {
    for (const auto& name : mp.names()) {
      const Tensor<float>* src = ck.find(name);
      if (!src) throw TensorError("checkpoint " + dir + " is missing tensor '" + name + "'");
      Tensor<float>& dst = mp.at(name);
      if (src->numel() != dst.numel())
        throw TensorError("checkpoint tensor '" + name + "' has " +
                          std::to_string(src->numel()) + " values, model expects " +
                          std::to_string(dst.numel()));
      std::copy(src->data(), src->data() + src->numel(), dst.data());
    }
  };
  pull_params(st.g);
  pull_params(st.d);
  auto pull_moments = [&](const char* tag, ModelParams<float>& mp, Adam& opt) {
    for (const auto& name : mp.names()) {
      const Tensor<float>* m = ck.find(std::string(tag) + ".m." + name);
      const Tensor<float>* v = ck.find(std::string(tag) + ".v." + name);
      if (!m || !v) continue;  // checkpoint taken before the first step
      opt.m()[name].assign(m->data(), m->data() + m->numel());
      opt.v()[name].assign(v->data(), v->data() + v->numel());
    }
  };
  pull_moments("adam_g", st.g, st.opt_g);
  pull_moments("adam_d", st.d, st.opt_d);
  auto extra_int = [&](const std::string& key) -> int64_t {
    auto it = ck.extra.find(key);
    return it == ck.extra.end() ? 0 : std::stoll(it->second);
  };
  st.opt_g.set_t(extra_int("opt_g_t"));
  st.opt_d.set_t(extra_int("opt_d_t"));
  if (auto it = ck.extra.find("rng"); it != ck.extra.end()) st.rng.deserialize(it->second);
  return st;
}

namespace {

void run_loop(TrainState& st, const TrainConfig& cfg, const Dataset& ds,
              const std::vector<size_t>& train_idx, std::ostream* log_stream) {
  RandomConvExtractor<float> fx(mix_seed(cfg.seed, fnv1a64("fx")));
  while (st.step < cfg.steps) {
    std::vector<size_t> picks(static_cast<size_t>(cfg.batch_size));
    for (auto& p : picks)
      p = train_idx[static_cast<size_t>(
          st.rng.uniform_int(0, static_cast<int64_t>(train_idx.size()) - 1))];
    Batch batch = make_batch(ds, picks, cfg.mask, cfg.model.n_s, st.rng);
    const LossReport rep = train_step(st, batch, cfg, fx);
    ++st.step;
    if (log_stream && (st.step % cfg.log_every == 0 || st.step == cfg.steps)) {
      json j;
      j["step"] = st.step;
      j["total"] = rep.total;
      for (const auto& [k, v] : rep.terms) j[k] = v;
      (*log_stream) << j.dump() << "\n";
    }
    if (!cfg.out_dir.empty() && cfg.ckpt_every > 0 && st.step % cfg.ckpt_every == 0 &&
        st.step != cfg.steps) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "ckpt_%06lld", static_cast<long long>(st.step));
      save_train_checkpoint((fs::path(cfg.out_dir) / buf).string(), st, cfg);
    }
  }
  if (!cfg.out_dir.empty())
    save_train_checkpoint((fs::path(cfg.out_dir) / "final").string(), st, cfg);
}

}  // namespace

TrainState train(const TrainConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  const Dataset ds = build_dataset(cfg);
  const auto train_idx = train_indices(cfg, ds.size());
  TrainState st = cfg.resume_dir.empty() ? init_train_state(cfg)
                                         : load_train_checkpoint(cfg.resume_dir, cfg);
  run_loop(st, cfg, ds, train_idx, log_stream);
  return st;
}

Image inpaint_image(ModelParams<float>& g, const GeneratorConfig& cfg, const Image& img,
                    const Image& mask) {
  if (img.h != cfg.image_size || img.w != cfg.image_size || img.c != 3)
    throw TensorError("inpaint_image: expected a " + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.image_size) + " RGB image");
  if (mask.h != img.h || mask.w != img.w || mask.c != 1)
    throw TensorError("inpaint_image: mask must be single-channel and match the image");
  // structure is derived from the hole-free content only
  const Image img_masked = apply_mask(img, mask);
  const Image grad_masked = apply_mask(sobel_gradient_map(img_masked), mask);
  const Image edge_masked = apply_mask(canny_edges(img_masked), mask);

  GeneratorOutput<float> out = generator_forward(
      g, image_to_tensor<float>(img_masked), image_to_tensor<float>(grad_masked),
      image_to_tensor<float>(edge_masked), image_to_tensor<float>(mask), cfg);
  return compose(img_masked, tensor_to_image(out.i_pred), mask);
}

HoldoutEval evaluate_holdout(TrainState& st, const TrainConfig& cfg, const Dataset& ds,
                             const std::vector<size_t>& holdout) {
  HoldoutEval ev;
  for (size_t k = 0; k < holdout.size(); ++k) {
    const Sample& smp = ds.at(holdout[k]);
    const Image mask =
        make_mask(smp.img.h, smp.img.w, cfg.mask, mix_seed(cfg.seed, 0x401d + k));
    const Image out = inpaint_image(st.g, cfg.model, smp.img, mask);
    ev.psnr_model += psnr(smp.img, out);

    // mean fill: every hole pixel gets the mean color of the known region
    Image base = apply_mask(smp.img, mask);
    double mean_c[3] = {0, 0, 0};
    int64_t known = 0;
    for (int y = 0; y < base.h; ++y)
      for (int x = 0; x < base.w; ++x)
        if (mask.at(y, x, 0) < 0.5) {
          ++known;
          for (int c = 0; c < 3; ++c) mean_c[c] += smp.img.at(y, x, c);
        }
    if (known > 0)
      for (double& m : mean_c) m /= static_cast<double>(known);
    for (int y = 0; y < base.h; ++y)
      for (int x = 0; x < base.w; ++x)
        if (mask.at(y, x, 0) >= 0.5)
          for (int c = 0; c < 3; ++c) base.at(y, x, c) = mean_c[c];
    ev.psnr_meanfill += psnr(smp.img, base);
    ++ev.count;
  }
  if (ev.count > 0) {
    ev.psnr_model /= ev.count;
    ev.psnr_meanfill /= ev.count;
  }
  return ev;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::ostream* log_stream) {
  struct Toggle {
    const char* name;
    bool mt, se, at;
  };
  const Toggle rows[] = {{"baseline", false, false, false},
                         {"+gradients", true, false, false},
                         {"+embedding", true, true, false},
                         {"+attention", true, true, true}};

  const Dataset ds = build_dataset(base);
  const auto holdout = holdout_indices(base, ds.size());
  RandomConvExtractor<float> fx(mix_seed(base.seed, fnv1a64("fx")));

  std::vector<AblationRow> out;
  for (const Toggle& t : rows) {
    TrainConfig cfg = base;
    cfg.model.mt = t.mt;
    cfg.model.se = t.se;
    cfg.model.at = t.at;
    cfg.out_dir.clear();
    cfg.resume_dir.clear();
    TrainState st = init_train_state(cfg);
    const auto train_idx = train_indices(cfg, ds.size());
    RandomConvExtractor<float> fx_train(mix_seed(cfg.seed, fnv1a64("fx")));
    LossReport last;
    while (st.step < cfg.steps) {
      std::vector<size_t> picks(static_cast<size_t>(cfg.batch_size));
      for (auto& p : picks)
        p = train_idx[static_cast<size_t>(
            st.rng.uniform_int(0, static_cast<int64_t>(train_idx.size()) - 1))];
      Batch batch = make_batch(ds, picks, cfg.mask, cfg.model.n_s, st.rng);
      last = train_step(st, batch, cfg, fx_train);
      ++st.step;
      if (log_stream) {
        json j;
        j["row"] = t.name;
        j["step"] = st.step;
        j["total"] = last.total;
        (*log_stream) << j.dump() << "\n";
      }
    }
    std::vector<std::pair<Image, Image>> pairs;
    for (size_t k = 0; k < holdout.size(); ++k) {
      const Sample& smp = ds.at(holdout[k]);
      const Image mask =
          make_mask(smp.img.h, smp.img.w, cfg.mask, mix_seed(base.seed, 0xab1e + k));
      pairs.emplace_back(smp.img, inpaint_image(st.g, cfg.model, smp.img, mask));
    }
    AblationRow row;
    row.name = t.name;
    row.mt = t.mt;
    row.se = t.se;
    row.at = t.at;
    row.report = evaluate_set(pairs, fx);
    row.final_losses = last;
    out.push_back(std::move(row));
  }
  return out;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows, uint64_t seed,
                             const std::string& data_digest) {
  json j;
  j["report_version"] = 1;
  j["seed"] = seed;
  j["data_digest"] = data_digest;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json row;
    row["name"] = r.name;
    row["mt"] = r.mt;
    row["se"] = r.se;
    row["at"] = r.at;
    row["l1_percent"] = r.report.means.l1_percent;
    row["psnr"] = r.report.means.psnr;
    row["ssim"] = r.report.means.ssim;
    row["uqi"] = r.report.means.uqi;
    row["vif"] = r.report.means.vif;
    row["fid"] = r.report.fid_available ? json(r.report.fid) : json(nullptr);
    json losses = json::object();
    for (const auto& [k, v] : r.final_losses.terms) {
      if (k == "structure" && !r.mt) continue;  // no structure supervision ran
      losses[k] = v;
    }
    losses["total"] = r.final_losses.total;
    row["final_losses"] = losses;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

std::string ablation_to_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %8s %8s %8s %8s %8s %10s %10s\n", "variant",
                "l1%", "psnr", "ssim", "uqi", "vif", "fid", "structure");
  os << buf;
  for (const auto& r : rows) {
    std::string fid = "n/a";
    if (r.report.fid_available) {
      std::snprintf(buf, sizeof(buf), "%.4f", r.report.fid);
      fid = buf;
    }
    std::string structure = "n/a";
    if (r.mt) {
      auto it = r.final_losses.terms.find("structure");
      if (it != r.final_losses.terms.end()) {
        std::snprintf(buf, sizeof(buf), "%.4f", it->second);
        structure = buf;
      }
    }
    std::snprintf(buf, sizeof(buf), "%-12s %8.3f %8.3f %8.4f %8.4f %8.4f %10s %10s\n",
                  r.name.c_str(), r.report.means.l1_percent, r.report.means.psnr,
                  r.report.means.ssim, r.report.means.uqi, r.report.means.vif,
                  fid.c_str(), structure.c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace sfill
