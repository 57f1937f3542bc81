#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "ddb/mixing.hpp"
#include "ddb/rng.hpp"

using namespace ddb;

namespace {

LabelMap labels_from(std::initializer_list<std::initializer_list<int>> rows) {
  LabelMap y(static_cast<int>(rows.size()),
             static_cast<int>(rows.begin()->size()));
  int i = 0;
  for (const auto& row : rows) {
    int j = 0;
    for (int v : row) y.at(i, j++) = static_cast<uint8_t>(v);
    ++i;
  }
  return y;
}

Tensor random_image(int h, int w, int c, RngState& rng) {
  Tensor t = Tensor::zeros({h, w, c});
  for (double& v : t.raw()) v = rng.uniform();
  return t;
}

LabelMap random_labels(int h, int w, int k, RngState& rng,
                       double ignore_prob = 0.0) {
  LabelMap y(h, w);
  for (uint8_t& id : y.ids) {
    id = rng.bernoulli(ignore_prob)
             ? kIgnoreLabel
             : static_cast<uint8_t>(rng.uniform_int(static_cast<uint64_t>(k)));
  }
  return y;
}

}  // namespace

TEST_CASE("classes_present is sorted and skips ignore") {
  LabelMap y = labels_from({{5, 0, 255}, {2, 5, 0}});
  CHECK(classes_present(y) == std::vector<int>{0, 2, 5});
  LabelMap all_ignore(2, 2, kIgnoreLabel);
  CHECK(classes_present(all_ignore).empty());
}

TEST_CASE("region mask is one uniformly placed rectangle of pinned size") {
  RngState rng(401);

  // 10x10 at ratio 0.3: round(10*sqrt(0.3)) = 5, so always a 5x5 block.
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask m = sample_region_mask(10, 10, 0.3, rng);
    CHECK(m.ones() == 25);
  }

  // A sampled mask is a single filled rectangle: its popcount equals the
  // area of its bounding box.
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 3 + static_cast<int>(rng.uniform_int(30));
    const int w = 3 + static_cast<int>(rng.uniform_int(30));
    const double r = rng.uniform(0.05, 0.95);
    BinaryMask m = sample_region_mask(h, w, r, rng);
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (m.at(y, x)) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
      }
    }
    REQUIRE(y1 >= y0);
    const int64_t box = int64_t(y1 - y0 + 1) * (x1 - x0 + 1);
    CHECK(m.ones() == box);
    const int want_h = std::clamp<int>(std::lround(h * std::sqrt(r)), 1, h);
    const int want_w = std::clamp<int>(std::lround(w * std::sqrt(r)), 1, w);
    CHECK(y1 - y0 + 1 == want_h);
    CHECK(x1 - x0 + 1 == want_w);
  }

  CHECK_THROWS_AS(sample_region_mask(1, 10, 0.3, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_region_mask(10, 10, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_region_mask(10, 10, 1.0, rng), std::invalid_argument);
}

TEST_CASE("region mask corners are uniform over their legal range") {
  RngState rng(402);
  // 64x64 at ratio 0.3 gives a 35x35 block, so corners live in [0, 29].
  std::array<int, 30> y_hist{}, x_hist{};
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    BinaryMask m = sample_region_mask(64, 64, 0.3, rng);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (m.at(y, x)) {
          ++y_hist[static_cast<size_t>(y)];
          ++x_hist[static_cast<size_t>(x)];
          y = 64;
          break;
        }
      }
    }
  }
  // Chi-squared against uniform, 30 bins, df=29; 58.3 is the 0.001 cut.
  const double expected = n / 30.0;
  double chi_y = 0.0, chi_x = 0.0;
  for (int b = 0; b < 30; ++b) {
    chi_y += (y_hist[b] - expected) * (y_hist[b] - expected) / expected;
    chi_x += (x_hist[b] - expected) * (x_hist[b] - expected) / expected;
  }
  CHECK(chi_y < 58.3);
  CHECK(chi_x < 58.3);
}

TEST_CASE("select_half_classes picks ceil(n/2) without ignore") {
  RngState rng(403);
  LabelMap y = labels_from({{0, 2, 5}, {7, 255, 0}});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> sel = select_half_classes(y, rng);
    CHECK(sel.size() == 2);  // ceil(4/2)
    CHECK(std::is_sorted(sel.begin(), sel.end()));
    for (int c : sel) CHECK((c == 0 || c == 2 || c == 5 || c == 7));
  }

  LabelMap single = labels_from({{3, 3}, {3, 3}});
  CHECK(select_half_classes(single, rng) == std::vector<int>{3});

  LabelMap ignored(2, 2, kIgnoreLabel);
  CHECK_THROWS_AS(select_half_classes(ignored, rng), std::invalid_argument);

  // Every class appears with roughly equal frequency.
  std::array<int, 8> hits{};
  const int n = 8000;
  for (int i = 0; i < n; ++i) {
    for (int c : select_half_classes(y, rng)) ++hits[static_cast<size_t>(c)];
  }
  for (int c : {0, 2, 5, 7}) {
    CHECK(hits[static_cast<size_t>(c)] ==
          doctest::Approx(n / 2.0).epsilon(0.05));
  }
}

TEST_CASE("class_mask marks exactly the selected labels") {
  LabelMap y = labels_from({{0, 1, 2}, {1, 1, 0}, {2, 0, 1}});
  BinaryMask m = class_mask(y, {1});
  CHECK(m.ones() == 4);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(1, 0) == 1);
  CHECK(m.at(1, 1) == 1);
  CHECK(m.at(2, 2) == 1);
  CHECK(m.at(0, 0) == 0);

  BinaryMask both = class_mask(y, {0, 2});
  CHECK(both.ones() == 5);

  // Ignore pixels never enter a class mask, even if 255 is requested.
  LabelMap with_ignore = labels_from({{1, 255}, {255, 1}});
  BinaryMask mi = class_mask(with_ignore, {1, 255});
  CHECK(mi.ones() == 2);
  CHECK(mi.at(0, 1) == 0);
  CHECK(mi.at(1, 0) == 0);
}

TEST_CASE("apply_local_mix equals the per-pixel two-branch oracle") {
  RngState rng(404);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(20));
    const int w = 2 + static_cast<int>(rng.uniform_int(20));
    Tensor xs = random_image(h, w, 3, rng);
    Tensor xt = random_image(h, w, 3, rng);
    LabelMap ys = random_labels(h, w, 5, rng, 0.1);
    LabelMap yt = random_labels(h, w, 5, rng);
    BinaryMask m(h, w);
    for (uint8_t& v : m.on) v = rng.bernoulli(0.5) ? 1 : 0;

    MixedSample mixed = apply_local_mix(xs, ys, xt, yt, m, MixKind::kClass);
    CHECK(mixed.kind == MixKind::kClass);
    CHECK(mixed.mask == m);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Tensor& src = m.at(y, x) ? xs : xt;
        const LabelMap& lab = m.at(y, x) ? ys : yt;
        for (int c = 0; c < 3; ++c) {
          CHECK(mixed.image.at({y, x, c}) == src.at({y, x, c}));
        }
        CHECK(mixed.label.at(y, x) == lab.at(y, x));
      }
    }
  }
}

TEST_CASE("apply_local_mix conserves label histograms") {
  RngState rng(405);
  const int h = 16, w = 16;
  Tensor xs = random_image(h, w, 3, rng);
  Tensor xt = random_image(h, w, 3, rng);
  LabelMap ys = random_labels(h, w, 6, rng, 0.05);
  LabelMap yt = random_labels(h, w, 6, rng);
  BinaryMask m = sample_region_mask(h, w, 0.4, rng);

  MixedSample mixed = apply_local_mix(xs, ys, xt, yt, m, MixKind::kRegion);
  std::array<int64_t, 256> want{}, got{};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      ++want[m.at(y, x) ? ys.at(y, x) : yt.at(y, x)];
      ++got[mixed.label.at(y, x)];
    }
  }
  CHECK(want == got);

  // Degenerate masks hand back one parent bitwise.
  BinaryMask ones(h, w, 1), zeros(h, w, 0);
  CHECK(apply_local_mix(xs, ys, xt, yt, ones, MixKind::kRegion).image.raw() ==
        xs.raw());
  CHECK(apply_local_mix(xs, ys, xt, yt, ones, MixKind::kRegion).label == ys);
  CHECK(apply_local_mix(xs, ys, xt, yt, zeros, MixKind::kRegion).image.raw() ==
        xt.raw());
  CHECK(apply_local_mix(xs, ys, xt, yt, zeros, MixKind::kRegion).label == yt);

  BinaryMask bad(h, w + 1, 1);
  CHECK_THROWS_AS(apply_local_mix(xs, ys, xt, yt, bad, MixKind::kRegion),
                  std::invalid_argument);
  Tensor small = random_image(h - 1, w, 3, rng);
  CHECK_THROWS_AS(apply_local_mix(small, ys, xt, yt, ones, MixKind::kRegion),
                  std::invalid_argument);
}

TEST_CASE("interpolation mix blends images and one-hot labels") {
  RngState rng(406);
  const int h = 6, w = 5, k = 4;
  Tensor xs = random_image(h, w, 3, rng);
  Tensor xt = random_image(h, w, 3, rng);
  Tensor ys = onehot_from_labels(random_labels(h, w, k, rng), k);
  Tensor yt = onehot_from_labels(random_labels(h, w, k, rng), k);

  InterpolationParams p;
  p.lambda = 1.0;
  MixedSample at_one = apply_interpolation_mix(xs, ys, xt, yt, p, rng);
  CHECK(at_one.image.raw() == xs.raw());
  CHECK(at_one.label_onehot.raw() == ys.raw());
  CHECK(at_one.kind == MixKind::kInterpolation);
  CHECK(at_one.lambda == 1.0);

  p.lambda = 0.0;
  MixedSample at_zero = apply_interpolation_mix(xs, ys, xt, yt, p, rng);
  CHECK(at_zero.image.raw() == xt.raw());
  CHECK(at_zero.label_onehot.raw() == yt.raw());

  p.lambda = 0.25;
  MixedSample blend = apply_interpolation_mix(xs, ys, xt, yt, p, rng);
  for (int64_t i = 0; i < blend.image.numel(); ++i) {
    CHECK(blend.image.data()[i] ==
          doctest::Approx(0.25 * xs.data()[i] + 0.75 * xt.data()[i])
              .epsilon(1e-15));
  }

  p.lambda = 1.5;
  CHECK_THROWS_AS(apply_interpolation_mix(xs, ys, xt, yt, p, rng),
                  std::invalid_argument);

  // Drawn lambda lands in [0,1] and is recorded.
  p.lambda.reset();
  for (int i = 0; i < 50; ++i) {
    MixedSample drawn = apply_interpolation_mix(xs, ys, xt, yt, p, rng);
    CHECK(drawn.lambda >= 0.0);
    CHECK(drawn.lambda <= 1.0);
    CHECK(drawn.image.at({0, 0, 0}) ==
          doctest::Approx(drawn.lambda * xs.at({0, 0, 0}) +
                          (1 - drawn.lambda) * xt.at({0, 0, 0}))
              .epsilon(1e-12));
  }
}

TEST_CASE("onehot_from_labels zeroes ignore rows and rejects overflow") {
  LabelMap y = labels_from({{0, 2}, {255, 1}});
  Tensor oh = onehot_from_labels(y, 3);
  CHECK(oh.shape() == Shape{2, 2, 3});
  CHECK(oh.at({0, 0, 0}) == 1.0);
  CHECK(oh.at({0, 1, 2}) == 1.0);
  CHECK(oh.at({1, 1, 1}) == 1.0);
  for (int c = 0; c < 3; ++c) CHECK(oh.at({1, 0, c}) == 0.0);

  LabelMap bad = labels_from({{3}});
  CHECK_THROWS_AS(onehot_from_labels(bad, 3), std::invalid_argument);
}
