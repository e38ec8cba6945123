#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "structfill/checkpoint.hpp"
#include "structfill/imageops.hpp"
#include "structfill/trainer.hpp"

using namespace sfill;
namespace fs = std::filesystem;

namespace {

// small enough to keep every trainer test in seconds
TrainConfig diet_config() {
  TrainConfig cfg;
  cfg.model.image_size = 32;
  cfg.model.base_channels = 8;
  cfg.model.residual_blocks = 2;
  cfg.model.disc_base_channels = 8;
  cfg.synth.count = 8;
  cfg.batch_size = 2;
  cfg.holdout_fraction = 0.25;
  cfg.seed = 11;
  return cfg;
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("structfill_trainer_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  if (a.names() != b.names()) return false;
  for (const auto& name : a.names()) {
    const auto& ta = a.at(name);
    const auto& tb = b.at(name);
    if (ta.shape() != tb.shape()) return false;
    for (int64_t i = 0; i < ta.numel(); ++i)
      if (ta.data()[i] != tb.data()[i]) return false;
  }
  return true;
}

double recombine(const LossReport& rep, const LossWeights& w) {
  return rep.terms.at("rec") + w.lambda_perc * rep.terms.at("perc") +
         w.lambda_style * rep.terms.at("style") + w.lambda_adv * rep.terms.at("adv_g") +
         w.alpha * rep.terms.at("structure");
}

}  // namespace

TEST_CASE("train configuration validation") {
  TrainConfig cfg = diet_config();
  CHECK_NOTHROW(cfg.validate());

  auto broken = [&](auto mutate) {
    TrainConfig c = diet_config();
    mutate(c);
    CHECK_THROWS_AS(c.validate(), TensorError);
  };
  broken([](TrainConfig& c) { c.batch_size = 0; });
  broken([](TrainConfig& c) { c.steps = -1; });
  broken([](TrainConfig& c) { c.lr = -0.1; });
  broken([](TrainConfig& c) { c.d_lr_divisor = 0.0; });
  broken([](TrainConfig& c) { c.beta1 = 1.0; });
  broken([](TrainConfig& c) { c.beta2 = -0.5; });
  broken([](TrainConfig& c) { c.adam_eps = 0.0; });
  broken([](TrainConfig& c) { c.holdout_fraction = 1.0; });
  broken([](TrainConfig& c) { c.log_every = 0; });
  broken([](TrainConfig& c) { c.ckpt_every = -1; });
  broken([](TrainConfig& c) { c.weights.alpha = -1.0; });
  broken([](TrainConfig& c) { c.model.mt = false; });  // se still on
}

TEST_CASE("batches carry the advertised shapes for a 3-scale pyramid") {
  TrainConfig cfg = diet_config();
  cfg.model.image_size = 64;
  const Dataset ds = build_dataset(cfg);
  Rng rng(1);
  const Batch b = make_batch(ds, {0, 1, 2}, cfg.mask, 3, rng);
  CHECK(b.img.shape() == Shape(3, 3, 64, 64));
  CHECK(b.grad.shape() == Shape(3, 6, 64, 64));
  CHECK(b.edge.shape() == Shape(3, 1, 64, 64));
  CHECK(b.mask.shape() == Shape(3, 1, 64, 64));
  CHECK(b.img_masked.shape() == b.img.shape());
  CHECK(b.grad_masked.shape() == b.grad.shape());
  CHECK(b.edge_masked.shape() == b.edge.shape());
  REQUIRE(b.grad_pyr.size() == 3);
  REQUIRE(b.me_pyr.size() == 3);
  CHECK(b.grad_pyr[0].shape() == Shape(3, 6, 16, 16));
  CHECK(b.grad_pyr[1].shape() == Shape(3, 6, 32, 32));
  CHECK(b.grad_pyr[2].shape() == Shape(3, 6, 64, 64));
  CHECK(b.me_pyr[0].shape() == Shape(3, 1, 16, 16));
  CHECK(b.me_pyr[2].shape() == Shape(3, 1, 64, 64));

  Rng rng2(1);
  CHECK_THROWS_AS(make_batch(ds, {}, cfg.mask, 3, rng2), TensorError);
}

TEST_CASE("an all-zero mask leaves the network inputs untouched") {
  TrainConfig cfg = diet_config();
  cfg.mask.strokes_min = cfg.mask.strokes_max = 0;  // no strokes -> empty mask
  const Dataset ds = build_dataset(cfg);
  Rng rng(2);
  const Batch b = make_batch(ds, {0, 1}, cfg.mask, 2, rng);
  for (int64_t i = 0; i < b.mask.numel(); ++i) CHECK(b.mask.data()[i] == 0.0f);
  for (int64_t i = 0; i < b.img.numel(); ++i) CHECK(b.img_masked.data()[i] == b.img.data()[i]);
  for (int64_t i = 0; i < b.grad.numel(); ++i)
    CHECK(b.grad_masked.data()[i] == b.grad.data()[i]);
  for (int64_t i = 0; i < b.edge.numel(); ++i)
    CHECK(b.edge_masked.data()[i] == b.edge.data()[i]);
}

TEST_CASE("identical generator streams produce identical batches") {
  TrainConfig cfg = diet_config();
  const Dataset ds = build_dataset(cfg);
  Rng r1(7), r2(7);
  const Batch a = make_batch(ds, {1, 3}, cfg.mask, 3, r1);
  const Batch b = make_batch(ds, {1, 3}, cfg.mask, 3, r2);
  for (int64_t i = 0; i < a.mask.numel(); ++i) CHECK(a.mask.data()[i] == b.mask.data()[i]);
  for (int64_t i = 0; i < a.img_masked.numel(); ++i)
    CHECK(a.img_masked.data()[i] == b.img_masked.data()[i]);
}

TEST_CASE("dataset caches the structure planes of each image") {
  TrainConfig cfg = diet_config();
  cfg.synth.count = 2;
  const Dataset ds = build_dataset(cfg);
  SynthSpec spec = cfg.synth;
  spec.size = cfg.model.image_size;
  const Image orig = synth_image(spec, cfg.seed, 1);
  const Image grad = sobel_gradient_map(orig);
  const Image edge = canny_edges(orig);
  const Sample& s = ds.at(1);
  REQUIRE(s.grad.numel() == grad.numel());
  for (size_t i = 0; i < grad.data.size(); ++i) CHECK(s.grad.data[i] == grad.data[i]);
  for (size_t i = 0; i < edge.data.size(); ++i) CHECK(s.edge.data[i] == edge.data[i]);
}

TEST_CASE("holdout split is deterministic, disjoint and complete") {
  TrainConfig cfg = diet_config();
  cfg.holdout_fraction = 0.25;
  const auto tr = train_indices(cfg, 8);
  const auto ho = holdout_indices(cfg, 8);
  CHECK(tr.size() == 6);
  CHECK(ho.size() == 2);
  std::set<size_t> all(tr.begin(), tr.end());
  for (size_t i : ho) CHECK(all.insert(i).second);  // no overlap
  CHECK(all.size() == 8);

  CHECK(train_indices(cfg, 8) == tr);  // same seed, same split

  cfg.holdout_fraction = 0.0;
  CHECK(holdout_indices(cfg, 8).empty());
  CHECK(train_indices(cfg, 8).size() == 8);

  // never hold out the entire set
  cfg.holdout_fraction = 0.9;
  CHECK(holdout_indices(cfg, 2).size() == 1);
}

TEST_CASE("one optimizer step matches the constant-gradient closed form") {
  // with zero initial moments, bias correction makes every constant-gradient
  // step move by exactly lr * g / (|g| + eps)
  const double lr = 0.01, beta1 = 0.3, beta2 = 0.9, eps = 1e-8;
  double p = 1.7, m = 0.0, v = 0.0;
  const double g = -0.42;
  double expect = p;
  for (int64_t t = 1; t <= 5; ++t) {
    adam_update<double>(&p, &g, &m, &v, 1, lr, beta1, beta2, eps, t);
    expect -= lr * g / (std::abs(g) + eps);
    CHECK(std::abs(p - expect) <= 1e-10);
  }
}

TEST_CASE("optimizer moments follow the exponential averages") {
  const double beta1 = 0.5, beta2 = 0.75;
  double p = 0.0, m = 0.0, v = 0.0;
  const double gs[3] = {1.0, -2.0, 0.5};
  double em = 0.0, ev = 0.0;
  for (int64_t t = 1; t <= 3; ++t) {
    adam_update<double>(&p, &gs[t - 1], &m, &v, 1, 0.001, beta1, beta2, 1e-8, t);
    em = beta1 * em + (1.0 - beta1) * gs[t - 1];
    ev = beta2 * ev + (1.0 - beta2) * gs[t - 1] * gs[t - 1];
    CHECK(m == doctest::Approx(em).epsilon(1e-12));
    CHECK(v == doctest::Approx(ev).epsilon(1e-12));
  }
}

TEST_CASE("optimizer wrapper: zero gradient means no movement, t advances") {
  ModelParams<float> mp;
  mp.add("w", Tensor<float>::full(Shape(1, 1, 1, 3), 0.5f));
  Adam opt(0.1, 0.0, 0.9, 1e-8);
  CHECK(opt.t() == 0);
  mp.zero_grads();
  opt.step(mp);
  CHECK(opt.t() == 1);
  for (int64_t i = 0; i < 3; ++i) CHECK(mp.at("w").data()[i] == 0.5f);

  // now a real gradient moves the values
  mp.at("w").grad()[0] = 1.0f;
  opt.step(mp);
  CHECK(mp.at("w").data()[0] < 0.5f);
  CHECK(mp.at("w").data()[1] == 0.5f);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  TrainConfig cfg = diet_config();
  cfg.lr = 0.0;
  TrainState st = init_train_state(cfg);
  const Dataset ds = build_dataset(cfg);
  Rng rng(3);
  const Batch b = make_batch(ds, {0, 1}, cfg.mask, cfg.model.n_s, rng);
  RandomConvExtractor<float> fx(4);

  TrainState ref = init_train_state(cfg);
  const LossReport rep = train_step(st, b, cfg, fx);
  CHECK(std::isfinite(rep.total));
  CHECK(rep.terms.count("rec") == 1);
  CHECK(rep.terms.count("adv_d") == 1);
  CHECK(same_params(st.g, ref.g));
  CHECK(same_params(st.d, ref.d));
}

TEST_CASE("report total equals the weighted combination of its terms") {
  TrainConfig cfg = diet_config();
  TrainState st = init_train_state(cfg);
  const Dataset ds = build_dataset(cfg);
  Rng rng(5);
  const Batch b = make_batch(ds, {0, 1}, cfg.mask, cfg.model.n_s, rng);
  RandomConvExtractor<float> fx(6);
  const LossReport rep = train_step(st, b, cfg, fx);

  const double combo = recombine(rep, cfg.weights);
  CHECK(std::abs(rep.total - combo) <= 1e-6 * std::max(1.0, std::abs(rep.total)));

  // per-scale structure detail adds back up to the structure term
  double structure = 0.0;
  for (int k = 0; k < cfg.model.n_s; ++k) {
    structure += rep.terms.at("structure_l1_s" + std::to_string(k));
    structure += cfg.weights.beta * rep.terms.at("structure_edge_s" + std::to_string(k));
  }
  CHECK(std::abs(structure - rep.terms.at("structure")) <=
        1e-6 * std::max(1.0, structure));
}

TEST_CASE("single-task training reports a zero structure term") {
  TrainConfig cfg = diet_config();
  cfg.model.mt = cfg.model.se = false;
  TrainState st = init_train_state(cfg);
  const Dataset ds = build_dataset(cfg);
  Rng rng(7);
  const Batch b = make_batch(ds, {0, 1}, cfg.mask, cfg.model.n_s, rng);
  RandomConvExtractor<float> fx(8);
  const LossReport rep = train_step(st, b, cfg, fx);
  CHECK(rep.terms.at("structure") == 0.0);
  CHECK(rep.terms.count("structure_l1_s0") == 0);
  CHECK(std::abs(rep.total - recombine(rep, cfg.weights)) <=
        1e-6 * std::max(1.0, std::abs(rep.total)));
}

TEST_CASE("repeating one batch drives the supervised objective down") {
  TrainConfig cfg = diet_config();
  cfg.synth.count = 2;
  cfg.weights.lambda_adv = 0.0;  // keep the witness deterministic-ish
  TrainState st = init_train_state(cfg);
  const Dataset ds = build_dataset(cfg);
  Rng rng(9);
  const Batch b = make_batch(ds, {0, 1}, cfg.mask, cfg.model.n_s, rng);
  RandomConvExtractor<float> fx(10);

  double first_total = 0.0, first_rec = 0.0, last_total = 0.0, last_rec = 0.0;
  const int steps = 30;
  for (int i = 0; i < steps; ++i) {
    const LossReport rep = train_step(st, b, cfg, fx);
    if (i == 0) {
      first_total = rep.total;
      first_rec = rep.terms.at("rec");
    }
    last_total = rep.total;
    last_rec = rep.terms.at("rec");
  }
  CHECK(last_total < first_total);
  CHECK(last_rec < first_rec);
}

TEST_CASE("zero steps: the final checkpoint is the initial state") {
  TrainConfig cfg = diet_config();
  cfg.steps = 0;
  const fs::path out = temp_dir("zerosteps");
  cfg.out_dir = out.string();
  TrainState st = train(cfg);
  CHECK(st.step == 0);

  const fs::path ref_dir = temp_dir("zerosteps_ref");
  TrainState ref = init_train_state(cfg);
  save_train_checkpoint(ref_dir.string(), ref, cfg);
  CHECK(checkpoint_digest(load_checkpoint((out / "final").string())) ==
        checkpoint_digest(load_checkpoint(ref_dir.string())));
  fs::remove_all(out);
  fs::remove_all(ref_dir);
}

TEST_CASE("two runs from one seed land on identical weights") {
  TrainConfig cfg = diet_config();
  cfg.steps = 3;
  std::ostringstream log_a, log_b;
  TrainState a = train(cfg, &log_a);
  TrainState b = train(cfg, &log_b);
  CHECK(a.step == 3);
  CHECK(same_params(a.g, b.g));
  CHECK(same_params(a.d, b.d));
  CHECK(log_a.str() == log_b.str());
  CHECK(log_a.str().find("\"step\":1") != std::string::npos);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TrainConfig cfg = diet_config();
  cfg.steps = 4;
  const fs::path full_dir = temp_dir("resume_full");
  cfg.out_dir = full_dir.string();
  train(cfg);

  TrainConfig half = cfg;
  half.steps = 2;
  const fs::path half_dir = temp_dir("resume_half");
  half.out_dir = half_dir.string();
  train(half);

  TrainConfig rest = cfg;
  const fs::path rest_dir = temp_dir("resume_rest");
  rest.out_dir = rest_dir.string();
  rest.resume_dir = (half_dir / "final").string();
  TrainState done = train(rest);
  CHECK(done.step == 4);

  CHECK(checkpoint_digest(load_checkpoint((full_dir / "final").string())) ==
        checkpoint_digest(load_checkpoint((rest_dir / "final").string())));
  fs::remove_all(full_dir);
  fs::remove_all(half_dir);
  fs::remove_all(rest_dir);
}

TEST_CASE("intermediate checkpoints appear at the requested cadence") {
  TrainConfig cfg = diet_config();
  cfg.steps = 4;
  cfg.ckpt_every = 2;
  const fs::path out = temp_dir("cadence");
  cfg.out_dir = out.string();
  train(cfg);
  CHECK(fs::exists(out / "ckpt_000002" / "manifest.json"));
  CHECK(!fs::exists(out / "ckpt_000004"));  // final step writes to final/ instead
  CHECK(fs::exists(out / "final" / "manifest.json"));
  CHECK(load_checkpoint((out / "ckpt_000002").string()).step == 2);
  fs::remove_all(out);
}

TEST_CASE("checkpoint loading rejects a mismatched architecture") {
  TrainConfig cfg = diet_config();
  TrainState st = init_train_state(cfg);
  const fs::path dir = temp_dir("mismatch");
  save_train_checkpoint(dir.string(), st, cfg);

  TrainConfig wider = cfg;
  wider.model.base_channels = 16;
  CHECK_THROWS_WITH_AS(load_train_checkpoint(dir.string(), wider),
                       doctest::Contains("values"), TensorError);

  TrainConfig no_attn = cfg;
  no_attn.model.at = false;
  CHECK_NOTHROW(load_train_checkpoint(dir.string(), no_attn));  // subset is fine
  fs::remove_all(dir);
}

TEST_CASE("config files map onto every trainer field") {
  const ConfigMap m = ConfigMap::from_string(
      "[train]\n"
      "batch_size = 3\n"
      "steps = 7\n"
      "lr = 0.5\n"
      "seed = 21\n"
      "holdout_fraction = 0.2\n"
      "non_saturating_g = true\n"
      "out_dir = \"runs/x\"\n"
      "[model]\n"
      "image_size = 32\n"
      "base_channels = 8\n"
      "residual_blocks = 2\n"
      "n_s = 2\n"
      "mt = false\n"
      "se = false\n"
      "at = false\n"
      "disc_base_channels = 8\n"
      "[weights]\n"
      "alpha = 0.25\n"
      "lambda_style = 10\n"
      "[mask]\n"
      "kind = \"regular\"\n"
      "hole_h = 4\n"
      "hole_w = 6\n"
      "centered = false\n"
      "[synth]\n"
      "count = 5\n");
  const TrainConfig c = train_config_from(m);
  CHECK(c.batch_size == 3);
  CHECK(c.steps == 7);
  CHECK(c.lr == doctest::Approx(0.5));
  CHECK(c.seed == 21);
  CHECK(c.holdout_fraction == doctest::Approx(0.2));
  CHECK(c.non_saturating_g);
  CHECK(c.out_dir == "runs/x");
  CHECK(c.model.image_size == 32);
  CHECK(c.model.base_channels == 8);
  CHECK(c.model.residual_blocks == 2);
  CHECK(c.model.n_s == 2);
  CHECK(!c.model.mt);
  CHECK(!c.model.se);
  CHECK(!c.model.at);
  CHECK(c.model.disc_base_channels == 8);
  CHECK(c.weights.alpha == doctest::Approx(0.25));
  CHECK(c.weights.lambda_style == doctest::Approx(10.0));
  CHECK(c.mask.kind == MaskKind::Regular);
  CHECK(c.mask.hole_h == 4);
  CHECK(c.mask.hole_w == 6);
  CHECK(!c.mask.centered);
  CHECK(c.synth.count == 5);
  CHECK(c.synth.size == 32);  // follows the model size

  ConfigMap bad;
  bad.set("mask.kind", "diagonal");
  CHECK_THROWS_AS(train_config_from(bad), TensorError);
}

TEST_CASE("inpainting keeps known pixels and fills only the hole") {
  TrainConfig cfg = diet_config();
  TrainState st = init_train_state(cfg);
  SynthSpec spec = cfg.synth;
  spec.size = cfg.model.image_size;
  const Image img = synth_image(spec, 1, 0);
  MaskSpec ms;
  const Image mask = make_mask(img.h, img.w, ms, 42);

  const Image out = inpaint_image(st.g, cfg.model, img, mask);
  REQUIRE(out.h == img.h);
  REQUIRE(out.c == 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        if (mask.at(y, x, 0) < 0.5) {
          CHECK(out.at(y, x, c) == img.at(y, x, c));
        } else {
          CHECK(out.at(y, x, c) >= 0.0);
          CHECK(out.at(y, x, c) <= 1.0);
        }
      }

  Image small(16, 16, 3);
  CHECK_THROWS_AS(inpaint_image(st.g, cfg.model, small, mask), TensorError);
  Image badmask(img.h, img.w, 3);
  CHECK_THROWS_AS(inpaint_image(st.g, cfg.model, img, badmask), TensorError);
}

TEST_CASE("holdout evaluation scores both the model and the mean-fill floor") {
  TrainConfig cfg = diet_config();
  TrainState st = init_train_state(cfg);
  const Dataset ds = build_dataset(cfg);
  const auto holdout = holdout_indices(cfg, ds.size());
  REQUIRE(holdout.size() == 2);
  const HoldoutEval ev = evaluate_holdout(st, cfg, ds, holdout);
  CHECK(ev.count == 2);
  CHECK(std::isfinite(ev.psnr_model));
  CHECK(std::isfinite(ev.psnr_meanfill));
  CHECK(ev.psnr_meanfill > 0.0);
}
