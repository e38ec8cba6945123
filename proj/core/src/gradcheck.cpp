#include "structfill/gradcheck.hpp"

#include <limits>

#include "structfill/features.hpp"
#include "structfill/losses.hpp"
#include "structfill/model.hpp"
#include "structfill/ops.hpp"

namespace sfill {

namespace {

Tensor<double> rand_t(Shape s, Rng& rng, double sd = 1.0) {
  return Tensor<double>::randn(s, rng, sd);
}

// push values away from 0 so kink exclusions (|.|, relu) hold
Tensor<double> rand_away_from_zero(Shape s, Rng& rng, double margin = 0.2) {
  Tensor<double> t = rand_t(s, rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.data()[i];
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

// push each coordinate of `a` at least `margin` away from `b` so the |a - b|
// kinks sit outside the FD probe radius
Tensor<double> separated_from(Tensor<double> a, const Tensor<double>& b, double margin) {
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    if (std::abs(d) < margin) a.data()[i] = b.data()[i] + (d < 0.0 ? -margin : margin);
  }
  return a;
}

// Same interface as the production extractor but tanh nonlinearities, so the
// loss-formula FD checks are smooth everywhere except the outer |.| terms;
// those ties are measured below and rejected if a probe could cross one.
class SmoothConvExtractor final : public FeatureExtractor<double> {
 public:
  explicit SmoothConvExtractor(uint64_t seed) {
    const int chans[4] = {3, 8, 12, 16};
    for (int l = 0; l < 3; ++l) {
      Rng rng(mix_seed(seed, 0x5100u + static_cast<uint64_t>(l)));
      Tensor<double> w(Shape(chans[l + 1], chans[l], 3, 3));
      const double sd = std::sqrt(2.0 / (chans[l] * 9.0));
      for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.normal() * sd;
      weights_.push_back(w);
      biases_.push_back(Tensor<double>(Shape(1, chans[l + 1], 1, 1)));
    }
  }

  std::vector<Tensor<double>> features(const Tensor<double>& img) const override {
    std::vector<Tensor<double>> out;
    Tensor<double> x = img;
    for (size_t l = 0; l < weights_.size(); ++l) {
      ConvSpec spec;
      spec.out_channels = weights_[l].shape().n;
      spec.kh = spec.kw = 3;
      spec.stride = 2;
      spec.padding = 1;
      x = tanh_op(conv2d(x, weights_[l], biases_[l], spec));
      out.push_back(x);
    }
    return out;
  }

  int levels() const override { return 3; }
  int deepest_channels() const override { return 16; }

 private:
  std::vector<Tensor<double>> weights_, biases_;
};

// smallest |fp - ft| gap across feature levels and their Gram matrices: every
// remaining kink argument of the perceptual/style formulas
double fx_tie_margin(const FeatureExtractor<double>& fx, const Tensor<double>& p,
                     const Tensor<double>& t) {
  const auto fp = fx.features(p);
  const auto ft = fx.features(t);
  double m = std::numeric_limits<double>::infinity();
  for (size_t l = 0; l < fp.size(); ++l) {
    for (int64_t i = 0; i < fp[l].numel(); ++i)
      m = std::min(m, std::abs(fp[l].data()[i] - ft[l].data()[i]));
    const Tensor<double> gp = gram(fp[l]);
    const Tensor<double> gt = gram(ft[l]);
    for (int64_t i = 0; i < gp.numel(); ++i)
      m = std::min(m, std::abs(gp.data()[i] - gt.data()[i]));
  }
  return m;
}

// Draws a comparison input whose feature/Gram ties all clear the probe radius
// with room to spare; redraws are deterministic given the rng state, and
// failure to find one is loud rather than a flaky near-zero denominator.
Tensor<double> draw_clear_of_ties(const FeatureExtractor<double>& fx, const Tensor<double>& t,
                                  Rng& rng, double sd, double pixel_margin, double need) {
  for (int tries = 0; tries < 64; ++tries) {
    Tensor<double> p = rand_t(t.shape(), rng, sd);
    if (pixel_margin > 0.0) p = separated_from(p, t, pixel_margin);
    if (fx_tie_margin(fx, p, t) >= need) return p;
  }
  throw TensorError("losses_suite: no draw cleared the feature tie margin");
}

struct Suite {
  std::vector<GradCheckResult> results;
  Rng rng;

  explicit Suite(uint64_t seed) : rng(seed) {}

  // Default step 1e-5 keeps the O(step^2) truncation term of the central
  // difference well under the 1e-6 gate at 64-bit while roundoff stays near
  // 1e-11; checks with tighter kink margins pass a smaller step explicitly.
  void check(const std::string& name, const std::function<Tensor<double>()>& loss,
             std::vector<Tensor<double>*> wrt, double tol = 1e-6, double fd_step = 1e-5) {
    GradCheckResult r;
    r.name = name;
    r.tol = tol;
    r.max_rel_err = fd_max_rel_error<double>(loss, wrt, fd_step);
    r.pass = r.max_rel_err < tol;
    results.push_back(r);
  }
};

void tensor_suite(Suite& s) {
  Rng& rng = s.rng;
  {
    Tensor<double> x = rand_t(Shape(1, 2, 5, 5), rng);
    Tensor<double> w = rand_t(Shape(3, 2, 3, 3), rng);
    Tensor<double> b = rand_t(Shape(1, 3, 1, 1), rng);
    ConvSpec spec;
    spec.out_channels = 3;
    spec.kh = spec.kw = 3;
    s.check("conv2d/k3s1p0", [&] { return mean_all(tanh_op(conv2d(x, w, b, spec))); },
            {&x, &w, &b});
  }
  {
    Tensor<double> x = rand_t(Shape(2, 2, 8, 8), rng);
    Tensor<double> w = rand_t(Shape(4, 2, 3, 3), rng);
    Tensor<double> b = rand_t(Shape(1, 4, 1, 1), rng);
    ConvSpec spec;
    spec.out_channels = 4;
    spec.kh = spec.kw = 3;
    spec.stride = 2;
    spec.dilation = 2;
    spec.padding = 2;
    s.check("conv2d/k3s2d2p2", [&] { return mean_all(tanh_op(conv2d(x, w, b, spec))); },
            {&x, &w, &b});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 3, 4, 4), rng);
    Tensor<double> w = rand_t(Shape(3, 2, 3, 3), rng);
    s.check("conv_transpose2d/k3p1",
            [&] { return mean_all(tanh_op(conv_transpose2d(x, w, 1))); }, {&x, &w});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 2, 3, 3), rng);
    s.check("upsample_nearest/f2", [&] { return mean_all(tanh_op(upsample_nearest(x, 2))); },
            {&x});
  }
  {
    Tensor<double> x = rand_t(Shape(2, 4, 3, 3), rng);
    s.check("softmax_over/channel",
            [&] { return mean_all(mul(softmax_over(x, Axis::Channel), x)); }, {&x});
    s.check("softmax_over/width",
            [&] { return mean_all(mul(softmax_over(x, Axis::Width), x)); }, {&x});
  }
  {
    Tensor<double> x = rand_t(Shape(2, 3, 4, 4), rng);
    Tensor<double> g = rand_t(Shape(1, 3, 1, 1), rng);
    Tensor<double> b = rand_t(Shape(1, 3, 1, 1), rng);
    s.check("instance_norm", [&] { return mean_all(tanh_op(instance_norm(x, g, b))); },
            {&x, &g, &b});
  }
  {
    Tensor<double> x = rand_away_from_zero(Shape(1, 2, 4, 4), rng);
    s.check("relu", [&] { return mean_all(mul(relu(x), x)); }, {&x});
    s.check("leaky_relu", [&] { return mean_all(mul(leaky_relu(x), x)); }, {&x});
    s.check("abs", [&] { return mean_all(mul(abs_op(x), x)); }, {&x});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 2, 4, 4), rng);
    s.check("tanh", [&] { return mean_all(tanh_op(x)); }, {&x});
    s.check("sigmoid", [&] { return mean_all(mul(sigmoid(x), x)); }, {&x});
    s.check("affine", [&] { return mean_all(affine(x, 0.5, 0.5)); }, {&x});
    s.check("scale", [&] { return mean_all(scale(x, -2.5)); }, {&x});
  }
  {
    // keep sigmoid outputs well above the clamp floor
    Tensor<double> x = rand_t(Shape(1, 1, 4, 4), rng, 0.5);
    s.check("log_clamped", [&] { return mean_all(log_clamped(sigmoid(x), 1e-7)); }, {&x});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 2, 3, 3), rng);
    Tensor<double> gamma = rand_t(Shape(1, 1, 1, 1), rng);
    s.check("scale_by", [&] { return mean_all(scale_by(x, gamma)); }, {&x, &gamma});
  }
  {
    Tensor<double> a = rand_t(Shape(1, 2, 3, 3), rng);
    Tensor<double> b = rand_t(Shape(1, 2, 3, 3), rng);
    s.check("add", [&] { return mean_all(mul(add(a, b), a)); }, {&a, &b});
    s.check("sub", [&] { return mean_all(mul(sub(a, b), b)); }, {&a, &b});
    s.check("mul", [&] { return mean_all(mul(a, b)); }, {&a, &b});
  }
  {
    Tensor<double> x = rand_t(Shape(2, 3, 4, 4), rng);
    Tensor<double> m = rand_t(Shape(2, 1, 4, 4), rng);
    s.check("mul_bc1", [&] { return mean_all(tanh_op(mul_bc1(x, m))); }, {&x, &m});
  }
  {
    Tensor<double> a = rand_t(Shape(1, 2, 3, 3), rng);
    Tensor<double> b = rand_t(Shape(1, 1, 3, 3), rng);
    Tensor<double> c = rand_t(Shape(1, 3, 3, 3), rng);
    s.check("concat_channels",
            [&] { return mean_all(tanh_op(concat_channels<double>({a, b, c}))); },
            {&a, &b, &c});
  }
  {
    Tensor<double> x = rand_t(Shape(3, 2, 2, 2), rng);
    s.check("narrow+concat_batch",
            [&] {
              Tensor<double> head = narrow_batch(x, 0, 1);
              Tensor<double> tail = narrow_batch(x, 1, 2);
              return mean_all(tanh_op(concat_batch<double>({tail, head})));
            },
            {&x});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 2, 3, 3), rng);
    Tensor<double> y = rand_away_from_zero(Shape(1, 2, 3, 3), rng, 0.4);
    s.check("sum_all", [&] { return sum_all(mul(x, x)); }, {&x});
    s.check("mean_all", [&] { return mean_all(mul(x, x)); }, {&x});
    // x near 0, y bounded away: |x - y| has no ties to cross
    Tensor<double> x2 = separated_from(rand_t(Shape(1, 2, 3, 3), rng, 0.05), y, 0.1);
    s.check("mean_abs_diff", [&] { return mean_abs_diff(x2, y); }, {&x2, &y});
  }
  {
    Tensor<double> x = rand_t(Shape(1, 2, 4, 4), rng);
    s.check("extract_patches/k3s1",
            [&] { return mean_all(tanh_op(extract_patches(x, 3, 1))); }, {&x});
  }
  {
    Tensor<double> w = rand_t(Shape(4, 2, 3, 3), rng);
    s.check("l2_normalize_filters",
            [&] { return mean_all(tanh_op(l2_normalize_filters(w, 1e-8))); }, {&w});
  }
  {
    Tensor<double> x = rand_t(Shape(2, 3, 4, 4), rng);
    s.check("gram", [&] { return mean_all(tanh_op(gram(x))); }, {&x});
  }
}

void losses_suite(Suite& s) {
  Rng& rng = s.rng;
  {
    std::vector<Tensor<double>> gt = {rand_away_from_zero(Shape(1, 6, 4, 4), rng, 0.5),
                                      rand_away_from_zero(Shape(1, 6, 8, 8), rng, 0.5)};
    std::vector<Tensor<double>> pred = {
        separated_from(rand_t(Shape(1, 6, 4, 4), rng), gt[0], 1e-2),
        separated_from(rand_t(Shape(1, 6, 8, 8), rng), gt[1], 1e-2)};
    std::vector<Tensor<double>> me = {
        Tensor<double>::full(Shape(1, 1, 4, 4), 0.3),
        Tensor<double>::full(Shape(1, 1, 8, 8), 0.7),
    };
    s.check("structure_loss",
            [&] { return structure_loss(pred, gt, me, 100.0); }, {&pred[0], &pred[1]});
  }
  {
    Tensor<double> t = rand_away_from_zero(Shape(1, 3, 6, 6), rng, 0.4);
    Tensor<double> p = separated_from(rand_t(Shape(1, 3, 6, 6), rng, 0.05), t, 0.1);
    s.check("rec_loss", [&] { return rec_loss(p, t); }, {&p});
  }
  {
    SmoothConvExtractor fx(11);
    Tensor<double> t = rand_t(Shape(1, 3, 16, 16), rng, 0.3);
    // step 1e-6: tie gaps between deep feature maps run ~1e-4, so the probe
    // radius has to stay well inside the measured margin
    Tensor<double> p = draw_clear_of_ties(fx, t, rng, 0.3, 0.0, 2e-5);
    s.check("perceptual_loss", [&] { return perceptual_loss(p, t, fx); }, {&p}, 1e-6, 1e-6);
    s.check("style_loss", [&] { return style_loss(p, t, fx); }, {&p}, 1e-6, 1e-6);
  }
  {
    Tensor<double> real = rand_t(Shape(2, 1, 3, 3), rng);
    Tensor<double> fake = rand_t(Shape(2, 1, 3, 3), rng);
    s.check("adversarial_d_loss", [&] { return adversarial_d_loss(real, fake); },
            {&real, &fake});
    s.check("adversarial_g_loss", [&] { return adversarial_g_loss(fake); }, {&fake});
    s.check("adversarial_g_loss/non_saturating",
            [&] { return adversarial_g_loss(fake, true); }, {&fake});
  }
  {
    SmoothConvExtractor fx(13);
    LossWeights w;
    // order-one weights: the default style multiplier (250) amplifies Gram
    // reduction roundoff in f(x+h)-f(x-h) past what a 1e-6 gate resolves;
    // the weighting itself is linear and covered by the scale op check
    w.lambda_perc = 0.3;
    w.lambda_style = 1.0;
    w.lambda_adv = 0.2;
    Tensor<double> t = rand_away_from_zero(Shape(1, 3, 8, 8), rng, 0.4);
    Tensor<double> p = draw_clear_of_ties(fx, t, rng, 0.05, 0.1, 2e-5);
    Tensor<double> scores = rand_t(Shape(1, 1, 2, 2), rng);
    s.check("total_loss",
            [&] {
              return total_loss(rec_loss(p, t), perceptual_loss(p, t, fx),
                                style_loss(p, t, fx), adversarial_g_loss(scores),
                                std::optional<Tensor<double>>{}, w);
            },
            {&p, &scores}, 1e-6, 1e-6);
  }
}

void model_suite(Suite& s, uint64_t seed) {
  Rng& rng = s.rng;
  {
    Tensor<double> x = rand_t(Shape(2, 3, 4, 4), rng);
    Tensor<double> gamma = rand_t(Shape(1, 1, 1, 1), rng);
    s.check("attention_forward",
            [&] { return mean_all(tanh_op(attention_forward(x, 3, 1, gamma))); },
            {&x, &gamma});
  }

  // Whole model at 32-bit: generator + critic + every loss term, probing 20
  // random coordinates of each parameter tensor. Analytic gradients come from
  // the float tape; the FD oracle evaluates an exact double upcast of the
  // same parameters. A float-evaluated probe cannot resolve this gate: the
  // loss ulp quantizes any usable central difference more coarsely than the
  // gradients under test, and the normalized activations put relu corners
  // inside every larger step. The double graph's own gradients are already
  // FD-verified by the suites above, so the oracle is trustworthy.
  {
    GeneratorConfig cfg;
    cfg.image_size = 32;
    cfg.base_channels = 8;
    cfg.residual_blocks = 2;
    cfg.disc_base_channels = 8;
    ModelParams<float> g = build_generator<float>(cfg, seed);
    ModelParams<float> d = build_discriminator<float>(cfg, mix_seed(seed, 1));
    RandomConvExtractor<float> fx(17);
    RandomConvExtractor<double> fx_d(17);
    // order-one weights keep every term's gradient at a comparable scale,
    // so no term's mistakes can hide under another's magnitude
    LossWeights w;
    w.lambda_perc = 0.3;
    w.lambda_style = 1.0;
    w.lambda_adv = 0.2;
    w.alpha = 0.3;
    w.beta = 2.0;

    Rng drng(mix_seed(seed, 2));
    auto frand = [&](Shape shp, float sd) {
      return Tensor<float>::randn(shp, drng, sd);
    };
    Tensor<float> img = frand(Shape(1, 3, 32, 32), 0.25f);
    Tensor<float> grad = frand(Shape(1, 6, 32, 32), 0.25f);
    Tensor<float> edge = frand(Shape(1, 1, 32, 32), 0.25f);
    Tensor<float> mask(Shape(1, 1, 32, 32));
    for (int y = 8; y < 24; ++y)
      for (int x = 8; x < 24; ++x) mask.data()[y * 32 + x] = 1.0f;
    std::vector<Tensor<float>> gt_pyr, me_pyr;
    for (int f : {4, 2, 1}) {
      gt_pyr.push_back(frand(Shape(1, 6, 32 / f, 32 / f), 0.5f));
      me_pyr.push_back(Tensor<float>::full(Shape(1, 1, 32 / f, 32 / f), 0.4f));
    }
    Tensor<float> target = frand(Shape(1, 3, 32, 32), 0.25f);

    auto upcast = [](const Tensor<float>& src) {
      Tensor<double> t(src.shape());
      for (int64_t i = 0; i < src.numel(); ++i) t.data()[i] = src.data()[i];
      return t;
    };
    ModelParams<double> g_d = build_generator<double>(cfg, seed);
    ModelParams<double> d_d = build_discriminator<double>(cfg, mix_seed(seed, 1));
    for (const auto& n : g.names()) g_d.at(n) = upcast(g.at(n));
    for (const auto& n : d.names()) d_d.at(n) = upcast(d.at(n));
    const Tensor<double> img_d = upcast(img), grad_d = upcast(grad), edge_d = upcast(edge),
                         mask_d = upcast(mask), target_d = upcast(target);
    std::vector<Tensor<double>> gt_pyr_d, me_pyr_d;
    for (const auto& t : gt_pyr) gt_pyr_d.push_back(upcast(t));
    for (const auto& t : me_pyr) me_pyr_d.push_back(upcast(t));

    auto loss32 = [&]() -> Tensor<float> {
      GeneratorOutput<float> o = generator_forward(g, img, grad, edge, mask, cfg);
      Tensor<float> comp = add(img, mul_bc1(o.i_pred, mask));
      Tensor<float> scores = discriminator_forward(d, comp, cfg);
      auto fp = fx.features(o.i_pred);
      auto ft = fx.features(target);
      std::optional<Tensor<float>> structure =
          structure_loss(o.c_pred, gt_pyr, me_pyr, static_cast<float>(w.beta));
      return total_loss(rec_loss(o.i_pred, target), perceptual_from_features(fp, ft),
                        style_from_features(fp, ft), adversarial_g_loss(scores),
                        structure, w);
    };
    auto oracle = [&]() -> double {
      GeneratorOutput<double> o =
          generator_forward(g_d, img_d, grad_d, edge_d, mask_d, cfg);
      Tensor<double> comp = add(img_d, mul_bc1(o.i_pred, mask_d));
      Tensor<double> scores = discriminator_forward(d_d, comp, cfg);
      auto fp = fx_d.features(o.i_pred);
      auto ft = fx_d.features(target_d);
      std::optional<Tensor<double>> structure =
          structure_loss(o.c_pred, gt_pyr_d, me_pyr_d, w.beta);
      return total_loss(rec_loss(o.i_pred, target_d), perceptual_from_features(fp, ft),
                        style_from_features(fp, ft), adversarial_g_loss(scores),
                        structure, w)
          .data()[0];
    };

    std::vector<Tensor<float>*> wrt;
    std::vector<Tensor<double>*> wrt_d;
    for (const auto& n : g.names()) {
      wrt.push_back(&g.at(n));
      wrt_d.push_back(&g_d.at(n));
    }
    for (const auto& n : d.names()) {
      wrt.push_back(&d.at(n));
      wrt_d.push_back(&d_d.at(n));
    }

    std::vector<std::vector<double>> analytic;
    {
      for (Tensor<float>* t : wrt) t->set_requires_grad(true);
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      Tensor<float> l = loss32();
      for (Tensor<float>* t : wrt) t->zero_grad();
      tape.backward(l);
      for (Tensor<float>* t : wrt) {
        std::vector<double> gv(static_cast<size_t>(t->numel()));
        for (int64_t i = 0; i < t->numel(); ++i) gv[static_cast<size_t>(i)] = t->grad()[i];
        analytic.push_back(std::move(gv));
      }
    }

    Rng sample_rng(mix_seed(seed, 3));
    const double h = 1e-5;
    const double floor_ = 1e-2;
    double worst = 0.0;
    for (size_t ti = 0; ti < wrt_d.size(); ++ti) {
      Tensor<double>& t = *wrt_d[ti];
      std::vector<int64_t> coords;
      if (t.numel() > 20)
        for (int k = 0; k < 20; ++k)
          coords.push_back(sample_rng.uniform_int(0, t.numel() - 1));
      else
        for (int64_t i = 0; i < t.numel(); ++i) coords.push_back(i);
      for (int64_t i : coords) {
        const double keep = t.data()[i];
        t.data()[i] = keep + h;
        const double fp = oracle();
        t.data()[i] = keep - h;
        const double fm = oracle();
        t.data()[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double gv = analytic[ti][static_cast<size_t>(i)];
        worst = std::max(worst,
                         std::abs(fd - gv) / std::max({std::abs(fd), std::abs(gv), floor_}));
      }
    }

    GradCheckResult r;
    r.name = "generator+losses/composite32";
    r.tol = 1e-3;
    r.max_rel_err = worst;
    r.pass = r.max_rel_err < r.tol;
    s.results.push_back(r);
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(const std::string& module, uint64_t seed) {
  if (module != "all" && module != "tensor" && module != "losses" && module != "model")
    throw TensorError("run_gradcheck: unknown module '" + module +
                      "' (expected all|tensor|losses|model)");
  Suite s(seed);
  if (module == "all" || module == "tensor") tensor_suite(s);
  if (module == "all" || module == "losses") losses_suite(s);
  if (module == "all" || module == "model") model_suite(s, seed);
  return s.results;
}

}  // namespace sfill
