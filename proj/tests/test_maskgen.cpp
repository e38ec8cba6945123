#include <doctest.h>

#include <cstdio>

#include "structfill/maskgen.hpp"

using namespace sfill;

TEST_CASE("centered 128x128 hole in a 256 image covers rows/cols 64..191") {
  MaskSpec spec;
  spec.kind = MaskKind::Regular;
  spec.hole_h = spec.hole_w = 128;
  spec.centered = true;
  const Image m = make_mask(256, 256, spec, 0);
  int64_t ones = 0;
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      const bool inside = y >= 64 && y <= 191 && x >= 64 && x <= 191;
      CHECK(m.at(y, x, 0) == (inside ? 1.0 : 0.0));
      ones += m.at(y, x, 0) > 0.5;
    }
  CHECK(ones == 128 * 128);
}

TEST_CASE("full-image hole is all ones; oversized hole is an error") {
  MaskSpec spec;
  spec.kind = MaskKind::Regular;
  spec.hole_h = spec.hole_w = 64;
  spec.centered = true;
  const Image m = make_mask(64, 64, spec, 0);
  for (double v : m.data) CHECK(v == 1.0);

  spec.hole_h = 65;
  CHECK_THROWS_AS(make_mask(64, 64, spec, 0), std::exception);
}

TEST_CASE("random rectangle placement is reproducible and in bounds") {
  MaskSpec spec;
  spec.kind = MaskKind::Regular;
  spec.hole_h = 3;
  spec.hole_w = 5;
  spec.centered = false;
  const Image a = make_mask(32, 32, spec, 99);
  const Image b = make_mask(32, 32, spec, 99);
  for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
  CHECK(mask_ratio(a) == doctest::Approx(15.0 / (32 * 32)));
}

TEST_CASE("irregular masks are binary and deterministic; zero strokes give empty") {
  MaskSpec spec;
  const Image a = make_mask(64, 64, spec, 7);
  const Image b = make_mask(64, 64, spec, 7);
  for (size_t i = 0; i < a.data.size(); ++i) {
    CHECK((a.data[i] == 0.0 || a.data[i] == 1.0));
    CHECK(a.data[i] == b.data[i]);
  }

  MaskSpec none;
  none.strokes_min = none.strokes_max = 0;
  for (double v : make_mask(64, 64, none, 3).data) CHECK(v == 0.0);
}

TEST_CASE("irregular mask area ratio lands in [0.05, 0.60] nearly always") {
  // 1,000-draw slice of the 10,000-draw acceptance property
  MaskSpec spec;
  int ok = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    const double r = mask_ratio(make_mask(128, 128, spec, 10000 + i));
    ok += r >= 0.05 && r <= 0.60;
  }
  CHECK(ok >= trials * 99 / 100);
}

TEST_CASE("apply_mask zeroes the hole and preserves the known region") {
  Rng rng(1);
  Image img(16, 16, 3);
  for (double& v : img.data) v = rng.uniform();
  MaskSpec spec;
  const Image m = make_mask(16, 16, spec, 5);
  const Image masked = apply_mask(img, m);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) {
        const double want = m.at(y, x, 0) > 0.5 ? 0.0 : img.at(y, x, c);
        CHECK(masked.at(y, x, c) == want);
      }

  const Image zeros(16, 16, 1);
  const Image same = apply_mask(img, zeros);
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == img.data[i]);

  const Image ones(16, 16, 1, 1.0);
  for (double v : apply_mask(img, ones).data) CHECK(v == 0.0);
}

TEST_CASE("compose restores ground truth from its own masked version") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Image img(12, 12, 3), pred(12, 12, 3);
    for (double& v : img.data) v = rng.uniform();
    for (double& v : pred.data) v = rng.uniform();
    MaskSpec spec;
    spec.kind = trial % 2 ? MaskKind::Regular : MaskKind::Irregular;
    spec.hole_h = spec.hole_w = 6;
    spec.centered = false;
    const Image m = make_mask(12, 12, spec, 100 + trial);

    // pred = ground truth -> exact reconstruction
    const Image back = compose(apply_mask(img, m), img, m);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);

    // arbitrary pred: known region binds to input, hole binds to pred
    const Image comp = compose(apply_mask(img, m), pred, m);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x)
        for (int c = 0; c < 3; ++c) {
          const double want = m.at(y, x, 0) > 0.5 ? pred.at(y, x, c) : img.at(y, x, c);
          CHECK(comp.at(y, x, c) == want);
        }
  }
}

TEST_CASE("mask PNG round trip: 255 = missing, loader binarizes") {
  MaskSpec spec;
  const Image m = make_mask(48, 48, spec, 11);
  const std::string path = "test_mask_roundtrip.png";
  save_mask(path, m);
  const Image back = load_mask(path);
  REQUIRE(back.h == 48);
  for (size_t i = 0; i < m.data.size(); ++i) CHECK(back.data[i] == m.data[i]);
  std::remove(path.c_str());
}
