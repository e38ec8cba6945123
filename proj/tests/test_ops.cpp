#include <doctest.h>

#include <cmath>

#include "structfill/gradcheck.hpp"
#include "structfill/ops.hpp"

using namespace sfill;

TEST_CASE("conv2d sums ones to 9 with an all-ones kernel") {
  Tensor<double> x = Tensor<double>::full(Shape(1, 1, 3, 3), 1.0);
  Tensor<double> w = Tensor<double>::full(Shape(1, 1, 3, 3), 1.0);
  Tensor<double> b(Shape(1, 1, 1, 1));
  ConvSpec spec;
  spec.out_channels = 1;
  spec.kh = spec.kw = 3;
  Tensor<double> y = conv2d(x, w, b, spec);
  REQUIRE(y.shape() == Shape(1, 1, 1, 1));
  CHECK(y.data()[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d with a 1x1 identity kernel reproduces the input bit-for-bit") {
  Rng rng(1);
  Tensor<double> x = Tensor<double>::randn(Shape(2, 1, 4, 5), rng);
  Tensor<double> w = Tensor<double>::full(Shape(1, 1, 1, 1), 1.0);
  Tensor<double> b(Shape(1, 1, 1, 1));
  ConvSpec spec;
  spec.out_channels = 1;
  spec.kh = spec.kw = 1;
  Tensor<double> y = conv2d(x, w, b, spec);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d validates shapes with descriptive errors") {
  Rng rng(2);
  Tensor<double> x = Tensor<double>::randn(Shape(1, 3, 5, 5), rng);
  Tensor<double> w = Tensor<double>::randn(Shape(2, 4, 3, 3), rng);  // wrong in_c
  Tensor<double> b(Shape(1, 2, 1, 1));
  ConvSpec spec;
  spec.out_channels = 2;
  spec.kh = spec.kw = 3;
  CHECK_THROWS_WITH_AS(conv2d(x, w, b, spec),
                       doctest::Contains("channel"), TensorError);

  // kernel larger than padded input -> non-positive output extent
  Tensor<double> w2 = Tensor<double>::randn(Shape(2, 3, 7, 7), rng);
  ConvSpec spec2;
  spec2.out_channels = 2;
  spec2.kh = spec2.kw = 7;
  CHECK_THROWS_AS(conv2d(x, w2, b, spec2), TensorError);
}

TEST_CASE("conv2d stride/dilation output arithmetic") {
  // floor((h + 2p - d(k-1) - 1)/s) + 1
  CHECK(conv_out_extent(8, 3, 2, 2, 2) == 4);
  CHECK(conv_out_extent(64, 4, 2, 1, 1) == 32);
  CHECK(conv_out_extent(6, 3, 1, 1, 1) == 6);
}

TEST_CASE("upsample_nearest replicates blocks") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 2, 2), {1, 2, 3, 4});
  Tensor<double> y = upsample_nearest(x, 2);
  const double want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  REQUIRE(y.shape() == Shape(1, 1, 4, 4));
  for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]));

  Tensor<double> id = upsample_nearest(x, 1);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(id.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(upsample_nearest(x, 0), TensorError);
}

TEST_CASE("softmax slices sum to one, stay positive, and match closed forms") {
  Rng rng(3);
  Tensor<double> x = Tensor<double>::randn(Shape(2, 5, 3, 3), rng, 3.0);
  Tensor<double> y = softmax_over(x, Axis::Channel);
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
          const double v = y.data()[y.index(n, c, h, w)];
          CHECK(v > 0.0);
          s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }

  Tensor<double> c = Tensor<double>::full(Shape(1, 4, 1, 1), 0.7);
  Tensor<double> yc = softmax_over(c, Axis::Channel);
  for (int i = 0; i < 4; ++i) CHECK(yc.data()[i] == doctest::Approx(0.25));

  Tensor<double> pair = Tensor<double>::from(Shape(1, 2, 1, 1), {0.0, std::log(3.0)});
  Tensor<double> yp = softmax_over(pair, Axis::Channel);
  CHECK(yp.data()[0] == doctest::Approx(0.25));
  CHECK(yp.data()[1] == doctest::Approx(0.75));
}

TEST_CASE("elementwise op hand values") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 1, 3), {-1.0, 0.0, 2.0});
  Tensor<double> r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 2.0);

  Tensor<double> l = leaky_relu(x);
  CHECK(l.data()[0] == doctest::Approx(-0.2));
  CHECK(l.data()[2] == doctest::Approx(2.0));

  Tensor<double> gamma(Shape(1, 1, 1, 1));  // zero
  Tensor<double> z = scale_by(x, gamma);
  for (int i = 0; i < 3; ++i) CHECK(z.data()[i] == 0.0);

  Tensor<double> y = Tensor<double>::from(Shape(1, 1, 1, 3), {1.0, 1.0, 1.0});
  CHECK_THROWS_AS(add(x, Tensor<double>::full(Shape(1, 1, 1, 4), 1.0)), TensorError);
  Tensor<double> s = sub(x, y);
  CHECK(s.data()[0] == doctest::Approx(-2.0));
}

TEST_CASE("instance_norm closed forms") {
  // constant channel -> zeros pre-affine
  Tensor<double> x = Tensor<double>::full(Shape(1, 1, 2, 2), 5.0);
  Tensor<double> g = Tensor<double>::full(Shape(1, 1, 1, 1), 1.0);
  Tensor<double> b(Shape(1, 1, 1, 1));
  Tensor<double> y = instance_norm(x, g, b);
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.0).epsilon(1e-9));

  // channel [1,3]: mean 2, population var 1 -> [-1, 1] within 1e-4 (eps shifts it)
  Tensor<double> p = Tensor<double>::from(Shape(1, 1, 1, 2), {1.0, 3.0});
  Tensor<double> yp = instance_norm(p, g, Tensor<double>(Shape(1, 1, 1, 1)));
  CHECK(yp.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(yp.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("concat_channels shapes and errors") {
  Rng rng(4);
  Tensor<double> a = Tensor<double>::randn(Shape(1, 2, 4, 4), rng);
  Tensor<double> c = Tensor<double>::randn(Shape(1, 3, 4, 4), rng);
  Tensor<double> y = concat_channels<double>({a, c});
  CHECK(y.shape() == Shape(1, 5, 4, 4));
  // channel ranges preserved in order
  CHECK(y.data()[y.index(0, 0, 1, 2)] == a.data()[a.index(0, 0, 1, 2)]);
  CHECK(y.data()[y.index(0, 2, 3, 3)] == c.data()[c.index(0, 0, 3, 3)]);

  Tensor<double> one = concat_channels<double>({a});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(one.data()[i] == a.data()[i]);

  Tensor<double> bad = Tensor<double>::randn(Shape(1, 1, 3, 4), rng);
  CHECK_THROWS_AS(concat_channels<double>({a, bad}), TensorError);
}

TEST_CASE("reductions match hand arithmetic") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 1, 2), {1.0, 2.0});
  Tensor<double> y = Tensor<double>::from(Shape(1, 1, 1, 2), {0.0, 4.0});
  CHECK(mean_abs_diff(x, x).data()[0] == 0.0);
  CHECK(mean_abs_diff(x, y).data()[0] == doctest::Approx(1.5));
  CHECK(sum_all(x).data()[0] == doctest::Approx(3.0));
  CHECK(mean_all(x).data()[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(mean_abs_diff(x, Tensor<double>::full(Shape(1, 1, 1, 3), 0.0)),
                  TensorError);
}

TEST_CASE("extract_patches lays out k*k neighborhoods as filters") {
  Rng rng(5);
  Tensor<double> x = Tensor<double>::randn(Shape(1, 2, 4, 4), rng);
  Tensor<double> p = extract_patches(x, 3, 1);
  // 2x2 valid positions, each patch (2,3,3)
  REQUIRE(p.shape() == Shape(4, 2, 3, 3));
  // patch 0 anchored at (0,0): p[0,c,i,j] = x[0,c,i,j]
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(p.data()[p.index(0, c, i, j)] == x.data()[x.index(0, c, i, j)]);
  // last patch anchored at (1,1)
  CHECK(p.data()[p.index(3, 1, 2, 2)] == x.data()[x.index(0, 1, 3, 3)]);
}

TEST_CASE("l2_normalize_filters produces unit-norm filters") {
  Rng rng(6);
  Tensor<double> w = Tensor<double>::randn(Shape(3, 2, 3, 3), rng);
  Tensor<double> n = l2_normalize_filters(w, 1e-8);
  const int64_t per = 2 * 3 * 3;
  for (int f = 0; f < 3; ++f) {
    double s = 0;
    for (int64_t i = 0; i < per; ++i) {
      const double v = n.data()[f * per + i];
      s += v * v;
    }
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gram of a constant plane matches the closed form") {
  // one channel, 2x2, constant c: G = 4c^2 / (1*2*2) = c^2
  const double c = 1.7;
  Tensor<double> x = Tensor<double>::full(Shape(1, 1, 2, 2), c);
  Tensor<double> g = gram(x);
  REQUIRE(g.shape() == Shape(1, 1, 1, 1));
  CHECK(g.data()[0] == doctest::Approx(c * c));
}

TEST_CASE("gram is symmetric") {
  Rng rng(7);
  Tensor<double> x = Tensor<double>::randn(Shape(2, 4, 5, 5), rng);
  Tensor<double> g = gram(x);
  REQUIRE(g.shape() == Shape(2, 4, 4, 1));
  for (int n = 0; n < 2; ++n)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        CHECK(g.data()[g.index(n, a, b, 0)] ==
              doctest::Approx(g.data()[g.index(n, b, a, 0)]).epsilon(1e-12));
}

TEST_CASE("every tensor-level operator passes finite differences") {
  for (const auto& r : run_gradcheck("tensor")) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
