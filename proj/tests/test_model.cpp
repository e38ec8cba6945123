#include <doctest.h>

#include <cmath>
#include <vector>

#include "attention_reference.hpp"
#include "structfill/gradcheck.hpp"
#include "structfill/model.hpp"
#include "structfill/ops.hpp"

using namespace sfill;

namespace {

// parameter counts re-derived from the layer recipe, independent of the registry
int64_t conv_count(int in_c, int out_c, int k, bool norm) {
  return static_cast<int64_t>(out_c) * in_c * k * k + out_c + (norm ? 2 * out_c : 0);
}
int64_t res_count(int c) { return 2 * conv_count(c, c, 3, true); }

int64_t expected_generator_count(const GeneratorConfig& cfg) {
  const int bc = cfg.base_channels;
  int64_t n = conv_count(11, bc, 7, true) + conv_count(bc, 2 * bc, 4, true) +
              conv_count(2 * bc, 4 * bc, 4, true);
  n += cfg.residual_blocks * res_count(4 * bc);
  if (cfg.at) n += 1;
  const int sc[3] = {4 * bc, 2 * bc, bc};
  auto emitted = [&](int d) { return cfg.mt && d >= 3 - cfg.n_s; };
  for (int d = 0; d < 3; ++d)
    if (emitted(d)) n += (cfg.se ? res_count(sc[d]) : 0) + conv_count(sc[d], 6, 1, false);
  auto dec_in = [&](int d, int c) { return (cfg.se && emitted(d)) ? 2 * c : c; };
  n += conv_count(dec_in(0, 4 * bc), 2 * bc, 3, true);
  n += conv_count(dec_in(1, 2 * bc), bc, 3, true);
  n += conv_count(dec_in(2, bc), 3, 7, false);
  return n;
}

GeneratorConfig tiny_config() {
  GeneratorConfig cfg;
  cfg.image_size = 32;
  cfg.base_channels = 8;
  cfg.residual_blocks = 2;
  cfg.disc_base_channels = 8;
  return cfg;
}

Tensor<double> rand_tensor(Shape s, Rng& rng) { return Tensor<double>::randn(s, rng, 0.5); }

}  // namespace

TEST_CASE("generator registry matches the independently derived parameter count") {
  GeneratorConfig cfg;  // 64px, 32 base channels, 8 residual blocks, everything on
  auto g = build_generator<float>(cfg, 1);
  CHECK(g.value_count() == 3130998);
  CHECK(g.value_count() == expected_generator_count(cfg));

  GeneratorConfig variants[4] = {cfg, cfg, cfg, cfg};
  variants[0].at = false;
  variants[1].se = false;
  variants[2].mt = variants[2].se = false;
  variants[3].n_s = 1;
  for (const auto& v : variants) {
    auto gv = build_generator<float>(v, 1);
    CHECK(gv.value_count() == expected_generator_count(v));
  }
}

TEST_CASE("critic registry matches the independently derived parameter count") {
  GeneratorConfig cfg;
  auto d = build_discriminator<float>(cfg, 2);
  const int ch[6] = {3, 64, 128, 256, 512, 1};
  int64_t want = 0;
  for (int l = 0; l < 5; ++l) want += conv_count(ch[l], ch[l + 1], 4, false);
  CHECK(d.value_count() == want);
  CHECK(d.value_count() == 2764737);
}

TEST_CASE("critic score map side: 64 -> 6, and tiny inputs are rejected") {
  CHECK(discriminator_output_size(64) == 6);
  CHECK(discriminator_output_size(32) == 2);
  CHECK(discriminator_output_size(256) == 30);
  CHECK_THROWS_AS(discriminator_output_size(4), TensorError);
}

TEST_CASE("critic forward produces the advertised patch-score shape") {
  GeneratorConfig cfg = tiny_config();
  cfg.image_size = 64;
  auto d = build_discriminator<double>(cfg, 3);
  Rng rng(4);
  Tensor<double> img = rand_tensor(Shape(2, 3, 64, 64), rng);
  Tensor<double> s = discriminator_forward(d, img, cfg);
  CHECK(s.shape() == Shape(2, 1, 6, 6));

  Tensor<double> wrong = rand_tensor(Shape(1, 3, 32, 32), rng);
  CHECK_THROWS_AS(discriminator_forward(d, wrong, cfg), TensorError);
}

TEST_CASE("generator forward: image in [0,1], pyramid sizes coarse to fine") {
  GeneratorConfig cfg = tiny_config();
  auto g = build_generator<double>(cfg, 5);
  Rng rng(6);
  const int n = 2, s = cfg.image_size;
  Tensor<double> img = rand_tensor(Shape(n, 3, s, s), rng);
  Tensor<double> grd = rand_tensor(Shape(n, 6, s, s), rng);
  Tensor<double> edg = rand_tensor(Shape(n, 1, s, s), rng);
  Tensor<double> msk(Shape(n, 1, s, s));

  auto out = generator_forward(g, img, grd, edg, msk, cfg);
  CHECK(out.i_pred.shape() == Shape(n, 3, s, s));
  for (int64_t i = 0; i < out.i_pred.numel(); ++i) {
    CHECK(out.i_pred.data()[i] >= 0.0);
    CHECK(out.i_pred.data()[i] <= 1.0);
  }
  REQUIRE(out.c_pred.size() == 3);
  CHECK(out.c_pred[0].shape() == Shape(n, 6, s / 4, s / 4));
  CHECK(out.c_pred[1].shape() == Shape(n, 6, s / 2, s / 2));
  CHECK(out.c_pred[2].shape() == Shape(n, 6, s, s));
}

TEST_CASE("fewer pyramid scales keep only the finest outputs") {
  for (int n_s = 1; n_s <= 2; ++n_s) {
    GeneratorConfig cfg = tiny_config();
    cfg.n_s = n_s;
    auto g = build_generator<double>(cfg, 7);
    Rng rng(8);
    const int s = cfg.image_size;
    Tensor<double> img = rand_tensor(Shape(1, 3, s, s), rng);
    Tensor<double> grd = rand_tensor(Shape(1, 6, s, s), rng);
    Tensor<double> edg = rand_tensor(Shape(1, 1, s, s), rng);
    Tensor<double> msk(Shape(1, 1, s, s));
    auto out = generator_forward(g, img, grd, edg, msk, cfg);
    REQUIRE(static_cast<int>(out.c_pred.size()) == n_s);
    // finest scale is always full resolution
    CHECK(out.c_pred.back().shape() == Shape(1, 6, s, s));
    if (n_s == 2) CHECK(out.c_pred[0].shape() == Shape(1, 6, s / 2, s / 2));
  }
}

TEST_CASE("single-task configuration emits no pyramid") {
  GeneratorConfig cfg = tiny_config();
  cfg.mt = cfg.se = false;
  auto g = build_generator<double>(cfg, 9);
  Rng rng(10);
  const int s = cfg.image_size;
  auto out = generator_forward(g, rand_tensor(Shape(1, 3, s, s), rng),
                               rand_tensor(Shape(1, 6, s, s), rng),
                               rand_tensor(Shape(1, 1, s, s), rng),
                               Tensor<double>(Shape(1, 1, s, s)), cfg);
  CHECK(out.c_pred.empty());
  CHECK(out.i_pred.shape() == Shape(1, 3, s, s));
}

TEST_CASE("attention with zero mixing weight is an exact identity") {
  Rng rng(11);
  Tensor<double> x = rand_tensor(Shape(2, 3, 6, 6), rng);
  Tensor<double> gamma(Shape(1, 1, 1, 1));
  Tensor<double> y = attention_forward(x, 3, 1, gamma);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("attention on a constant plane scales it by 1 + gamma") {
  Tensor<double> x = Tensor<double>::full(Shape(1, 2, 5, 5), 0.7);
  Tensor<double> gamma = Tensor<double>::scalar(0.3);
  Tensor<double> y = attention_forward(x, 3, 1, gamma);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(0.7 * 1.3).epsilon(1e-9));
}

TEST_CASE("attention agrees with the nested-loop reference on small maps") {
  Rng rng(12);
  const Shape shapes[] = {Shape(1, 2, 4, 4), Shape(2, 3, 3, 5), Shape(1, 1, 3, 3),
                          Shape(1, 4, 5, 3), Shape(3, 2, 4, 3)};
  for (const Shape& s : shapes) {
    Tensor<double> x = rand_tensor(s, rng);
    const double gval = rng.uniform(-0.8, 0.8);
    Tensor<double> gamma = Tensor<double>::scalar(gval);
    Tensor<double> fast = attention_forward(x, 3, 1, gamma);
    Tensor<double> slow = reference_attention(x, 3, gval);
    double worst = 0.0;
    for (int64_t i = 0; i < fast.numel(); ++i)
      worst = std::max(worst, std::abs(fast.data()[i] - slow.data()[i]));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("attention rejects maps smaller than the patch and even patch sizes") {
  Rng rng(13);
  Tensor<double> x = rand_tensor(Shape(1, 2, 2, 2), rng);
  Tensor<double> gamma(Shape(1, 1, 1, 1));
  CHECK_THROWS_AS(attention_forward(x, 3, 1, gamma), TensorError);
  Tensor<double> x2 = rand_tensor(Shape(1, 2, 4, 4), rng);
  CHECK_THROWS_AS(attention_forward(x2, 2, 1, gamma), TensorError);
}

TEST_CASE("parameters shared across toggle variants are drawn identically") {
  GeneratorConfig all = tiny_config();
  GeneratorConfig no_at = all;
  no_at.at = false;
  auto ga = build_generator<double>(all, 77);
  auto gb = build_generator<double>(no_at, 77);
  CHECK(ga.has("g.attn.gamma"));
  CHECK(!gb.has("g.attn.gamma"));
  for (const auto& name : gb.names()) {
    const auto& ta = ga.at(name);
    const auto& tb = gb.at(name);
    REQUIRE(ta.shape() == tb.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) CHECK(ta.data()[i] == tb.data()[i]);
  }

  // the 1x1 structure heads keep their shape (and hence their draw) across
  // the embedding toggle
  GeneratorConfig no_se = all;
  no_se.se = false;
  auto gc = build_generator<double>(no_se, 77);
  for (int d = 0; d < 3; ++d) {
    const std::string head = "g.se" + std::to_string(d) + ".head.w";
    const auto& ta = ga.at(head);
    const auto& tc = gc.at(head);
    REQUIRE(ta.shape() == tc.shape());
    for (int64_t i = 0; i < ta.numel(); ++i) CHECK(ta.data()[i] == tc.data()[i]);
  }
  CHECK(!gc.has("g.se0.res.c1.w"));
}

TEST_CASE("without embedding, structure supervision cannot reach the trunk") {
  GeneratorConfig cfg = tiny_config();
  cfg.se = false;
  auto g = build_generator<double>(cfg, 21);
  Rng rng(22);
  const int s = cfg.image_size;
  Tensor<double> img = rand_tensor(Shape(1, 3, s, s), rng);
  Tensor<double> grd = rand_tensor(Shape(1, 6, s, s), rng);
  Tensor<double> edg = rand_tensor(Shape(1, 1, s, s), rng);
  Tensor<double> msk(Shape(1, 1, s, s));

  Tape<double> tape;
  {
    Tape<double>::Scope sc(tape);
    auto out = generator_forward(g, img, grd, edg, msk, cfg);
    Tensor<double> loss = mean_all(out.c_pred[0]);
    for (size_t i = 1; i < out.c_pred.size(); ++i)
      loss = add(loss, mean_all(out.c_pred[i]));
    g.zero_grads();
    tape.backward(loss);
  }
  // heads learn
  double head_mag = 0.0;
  for (int d = 0; d < 3; ++d) {
    const auto& w = g.at("g.se" + std::to_string(d) + ".head.w");
    for (int64_t i = 0; i < w.numel(); ++i) head_mag += std::abs(w.grad()[i]);
  }
  CHECK(head_mag > 0.0);
  // trunk untouched
  for (const char* name : {"g.enc0.w", "g.enc2.w", "g.res0.c1.w", "g.dec1.w"}) {
    const auto& w = g.at(name);
    for (int64_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == 0.0);
  }
}

TEST_CASE("with embedding, the same supervision does reach the trunk") {
  GeneratorConfig cfg = tiny_config();
  auto g = build_generator<double>(cfg, 23);
  Rng rng(24);
  const int s = cfg.image_size;
  Tensor<double> img = rand_tensor(Shape(1, 3, s, s), rng);
  Tensor<double> grd = rand_tensor(Shape(1, 6, s, s), rng);
  Tensor<double> edg = rand_tensor(Shape(1, 1, s, s), rng);
  Tensor<double> msk(Shape(1, 1, s, s));

  Tape<double> tape;
  {
    Tape<double>::Scope sc(tape);
    auto out = generator_forward(g, img, grd, edg, msk, cfg);
    g.zero_grads();
    tape.backward(mean_all(out.c_pred[0]));
  }
  double trunk_mag = 0.0;
  const auto& w = g.at("g.enc0.w");
  for (int64_t i = 0; i < w.numel(); ++i) trunk_mag += std::abs(w.grad()[i]);
  CHECK(trunk_mag > 0.0);
}

TEST_CASE("parameter registry rejects duplicates and unknown names") {
  ModelParams<float> mp;
  mp.add("a", Tensor<float>(Shape(1, 1, 1, 1)));
  CHECK_THROWS_AS(mp.add("a", Tensor<float>(Shape(1, 1, 1, 1))), TensorError);
  CHECK_THROWS_AS(mp.at("missing"), TensorError);
  CHECK(mp.has("a"));
  CHECK(!mp.has("b"));
}

TEST_CASE("generator validates its inputs and configuration") {
  GeneratorConfig cfg = tiny_config();
  auto g = build_generator<double>(cfg, 31);
  Rng rng(32);
  const int s = cfg.image_size;
  Tensor<double> img = rand_tensor(Shape(1, 3, s, s), rng);
  Tensor<double> bad_grad = rand_tensor(Shape(1, 3, s, s), rng);  // 6 channels expected
  Tensor<double> edg = rand_tensor(Shape(1, 1, s, s), rng);
  Tensor<double> msk(Shape(1, 1, s, s));
  CHECK_THROWS_WITH_AS(generator_forward(g, img, bad_grad, edg, msk, cfg),
                       doctest::Contains("gradient map"), TensorError);

  GeneratorConfig bad = tiny_config();
  bad.image_size = 30;
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = tiny_config();
  bad.mt = false;  // se left on
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = tiny_config();
  bad.n_s = 4;
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = tiny_config();
  bad.n_s = 0;
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = tiny_config();
  bad.attn_k = 4;
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad = tiny_config();
  bad.image_size = 8;  // bottleneck 2 < patch 3
  CHECK_THROWS_AS(bad.validate(), TensorError);
}

TEST_CASE("finite-difference sweep over attention and the composed model passes") {
  for (const auto& r : run_gradcheck("model")) {
    INFO(r.name, " max_rel_err=", r.max_rel_err, " tol=", r.tol);
    CHECK(r.pass);
  }
}
