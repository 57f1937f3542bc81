#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "ddb/bridging.hpp"
#include "ddb/mixing.hpp"
#include "ddb/model.hpp"
#include "ddb/rng.hpp"
#include "oracles.hpp"

using namespace ddb;

namespace {

ArchDescriptor tiny_arch() {
  ArchDescriptor a;
  a.blocks = {{4, 3, 2}, {4, 3, 2}};
  return a;
}

SegModel tiny_model(uint64_t seed, int k = 4) {
  RngState rng(seed);
  return SegModel(tiny_arch(), k, rng);
}

Tensor random_image(int h, int w, RngState& rng) {
  Tensor t = Tensor::zeros({h, w, 3});
  for (double& v : t.raw()) v = rng.uniform();
  return t;
}

LabelMap random_labels(int h, int w, int k, RngState& rng) {
  LabelMap y(h, w);
  for (uint8_t& id : y.ids) {
    id = static_cast<uint8_t>(rng.uniform_int(k));
  }
  return y;
}

std::vector<Sample> make_set(int n, int h, int k, RngState& rng,
                             bool labeled) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = random_image(h, h, rng);
    if (labeled) s.label = random_labels(h, h, k, rng);
    out.push_back(std::move(s));
  }
  return out;
}

bool same_params(const SegModel& a, const SegModel& b) {
  if (a.params().size() != b.params().size()) return false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].first != b.params()[i].first) return false;
    if (a.params()[i].second.raw() != b.params()[i].second.raw()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("make_ema_teacher copies the student and drops gradients") {
  SegModel student = tiny_model(11);
  EmaTeacher t = make_ema_teacher(student, 0.99);
  CHECK(t.alpha == 0.99);
  CHECK(same_params(t.model, student));
  for (const auto& [name, p] : t.model.params()) {
    CHECK_FALSE(p.requires_grad());
    CHECK_FALSE(p.has_grad_storage());
  }
  CHECK_THROWS_AS(make_ema_teacher(student, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_ema_teacher(student, -0.1), std::invalid_argument);
}

TEST_CASE("ema_update matches the closed form for a constant student") {
  SegModel phi = tiny_model(21);    // teacher start
  SegModel theta = tiny_model(22);  // frozen student
  const double alpha = 0.99;

  EmaTeacher teacher = make_ema_teacher(phi, alpha);
  int done = 0;
  for (int n : {1, 10, 100}) {
    for (; done < n; ++done) ema_update(teacher, theta);
    const double decay = std::pow(alpha, n);
    for (size_t i = 0; i < teacher.model.params().size(); ++i) {
      const auto& got = teacher.model.params()[i].second.raw();
      const auto& p0 = phi.params()[i].second.raw();
      const auto& st = theta.params()[i].second.raw();
      for (size_t j = 0; j < got.size(); ++j) {
        const double want = st[j] + decay * (p0[j] - st[j]);
        CHECK(std::abs(got[j] - want) < 1e-12);
      }
    }
  }

  // alpha = 0 snaps to the student bitwise; updating with an identical
  // student is a no-op at any alpha.
  EmaTeacher snap = make_ema_teacher(phi, 0.0);
  ema_update(snap, theta);
  CHECK(same_params(snap.model, theta));
  EmaTeacher still = make_ema_teacher(phi, 0.37);
  ema_update(still, phi);
  CHECK(same_params(still.model, phi));
}

TEST_CASE("pseudo labels are the argmax read-out with a strict threshold") {
  SegModel teacher = tiny_model(31);
  RngState rng(32);
  Tensor x = random_image(16, 16, rng);

  const double tau = 0.4;
  PseudoLabelPack pack = make_pseudo_labels(teacher, x, tau);
  CHECK(pack.tau == tau);
  CHECK(pack.labels.h == 16);
  CHECK(pack.confidence.shape() == Shape{16, 16});

  // Recompute from the raw logits with an independent softmax.
  Tensor logits = teacher.forward(x).logits;
  const int k = teacher.num_classes();
  int above = 0;
  for (int y = 0; y < 16; ++y) {
    for (int xx = 0; xx < 16; ++xx) {
      std::vector<double> row(static_cast<size_t>(k));
      for (int c = 0; c < k; ++c) row[static_cast<size_t>(c)] = logits.at({y, xx, c});
      std::vector<double> probs = ddb::test::longdouble_softmax(row);
      int arg = 0;
      for (int c = 1; c < k; ++c) {
        if (probs[static_cast<size_t>(c)] > probs[static_cast<size_t>(arg)]) arg = c;
      }
      CHECK(pack.labels.at(y, xx) == arg);
      CHECK(std::abs(pack.confidence.at({y, xx}) -
                     probs[static_cast<size_t>(arg)]) < 1e-12);
      if (pack.confidence.at({y, xx}) > tau) ++above;
    }
  }
  CHECK(pack.m_t == double(above) / 256.0);

  // No probability is strictly greater than 1, so tau = 1 empties the mask.
  CHECK(make_pseudo_labels(teacher, x, 1.0).m_t == 0.0);
}

TEST_CASE("weight map is exactly 1 on source pixels and m_t elsewhere") {
  BinaryMask m(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) m.at(y, x) = static_cast<uint8_t>((y + x) % 2);
  }
  WeightMap w = build_weight_map(m, 0.25);
  CHECK(w.values.shape() == Shape{4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(w.values.at({y, x}) == (m.at(y, x) ? 1.0 : 0.25));
    }
  }
  CHECK_THROWS_AS(build_weight_map(m, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(build_weight_map(m, 1.5), std::invalid_argument);
}

TEST_CASE("path loss reduces to known compositions at degenerate weights") {
  SegModel model = tiny_model(41);
  RngState rng(42);
  const int h = 8;
  Tensor xs = random_image(h, h, rng);
  Tensor xt = random_image(h, h, rng);
  LabelMap ys = random_labels(h, h, model.num_classes(), rng);
  LabelMap yt = random_labels(h, h, model.num_classes(), rng);

  // All-target provenance with m_t = 0: the bridging term vanishes.
  BinaryMask zeros(h, h, 0);
  MixedSample all_target =
      apply_local_mix(xs, ys, xt, yt, zeros, MixKind::kRegion);
  PathLossParts parts =
      path_loss_parts(model, xs, ys, all_target, build_weight_map(zeros, 0.0));
  CHECK(parts.brg.value() == 0.0);
  CHECK(parts.total.value() == parts.src.value());

  // All-source provenance: the mixed sample is the source sample, so the
  // bridging term reproduces the supervised term exactly.
  BinaryMask ones(h, h, 1);
  MixedSample all_source =
      apply_local_mix(xs, ys, xt, yt, ones, MixKind::kRegion);
  PathLossParts twice =
      path_loss_parts(model, xs, ys, all_source, build_weight_map(ones, 0.7));
  CHECK(twice.brg.value() == twice.src.value());
  CHECK(twice.total.value() == twice.src.value() + twice.brg.value());
}

TEST_CASE("path loss matches an extended precision scalar oracle") {
  SegModel model = tiny_model(51);
  RngState rng(52);
  const int h = 8;
  const int k = model.num_classes();
  Tensor xs = random_image(h, h, rng);
  Tensor xt = random_image(h, h, rng);
  LabelMap ys = random_labels(h, h, k, rng);
  LabelMap yt = random_labels(h, h, k, rng);
  BinaryMask m = sample_region_mask(h, h, 0.3, rng);
  MixedSample mixed = apply_local_mix(xs, ys, xt, yt, m, MixKind::kRegion);
  const double m_t = 0.6;
  WeightMap w = build_weight_map(m, m_t);

  PathLossParts parts = path_loss_parts(model, xs, ys, mixed, w);

  auto ce = [&](const Tensor& image, const LabelMap& target,
                const std::vector<double>& weights) {
    Tensor logits = model.forward(image).logits;
    std::vector<double> probs, onehot;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < h; ++x) {
        std::vector<double> row(static_cast<size_t>(k));
        for (int c = 0; c < k; ++c) row[static_cast<size_t>(c)] = logits.at({y, x, c});
        std::vector<double> p = ddb::test::longdouble_softmax(row);
        probs.insert(probs.end(), p.begin(), p.end());
        for (int c = 0; c < k; ++c) {
          onehot.push_back(target.at(y, x) == c ? 1.0 : 0.0);
        }
      }
    }
    return ddb::test::longdouble_weighted_ce(probs, onehot, weights, h * h, k,
                                             1e-12);
  };

  std::vector<double> unit(static_cast<size_t>(h) * h, 1.0);
  std::vector<double> wm(w.values.raw().begin(), w.values.raw().end());
  const double want_src = ce(xs, ys, unit);
  const double want_brg = ce(mixed.image, mixed.label, wm);
  CHECK(parts.src.value() == doctest::Approx(want_src).epsilon(1e-10));
  CHECK(parts.brg.value() == doctest::Approx(want_brg).epsilon(1e-10));
  CHECK(parts.total.value() ==
        doctest::Approx(want_src + want_brg).epsilon(1e-10));
  CHECK(path_loss(model, xs, ys, mixed, w).value() == parts.total.value());
}

TEST_CASE("dpdb_stage respects degenerate configurations") {
  RngState data_rng(61);
  const int k = 4;
  std::vector<Sample> source = make_set(3, 16, k, data_rng, true);
  std::vector<Sample> target = make_set(3, 16, k, data_rng, false);

  PathConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 1;
  OptimizerConfig opt;

  SegModel student = tiny_model(62, k);
  SegModel before = student.clone();
  EmaTeacher teacher = make_ema_teacher(student, cfg.alpha);
  RngState rng(63);
  dpdb_stage(student, teacher, source, target, cfg, opt, rng);
  CHECK(same_params(student, before));
  CHECK(same_params(teacher.model, before));

  // Zero learning rates freeze the student, and an EMA of a frozen student
  // stays put as well.
  cfg.steps = 4;
  OptimizerConfig frozen;
  frozen.lr_head = 0.0;
  frozen.lr_extractor = 0.0;
  frozen.weight_decay = 0.0;
  SegModel student2 = tiny_model(64, k);
  SegModel before2 = student2.clone();
  EmaTeacher teacher2 = make_ema_teacher(student2, cfg.alpha);
  RngState rng2(65);
  dpdb_stage(student2, teacher2, source, target, cfg, frozen, rng2);
  CHECK(same_params(student2, before2));
  CHECK(same_params(teacher2.model, before2));

  PathConfig bad = cfg;
  bad.kind = MixKind::kInterpolation;
  RngState rng3(66);
  CHECK_THROWS_AS(
      dpdb_stage(student2, teacher2, source, target, bad, opt, rng3),
      std::invalid_argument);
  std::vector<Sample> empty;
  CHECK_THROWS_AS(
      dpdb_stage(student2, teacher2, empty, target, cfg, opt, rng3),
      std::invalid_argument);
}

TEST_CASE("dpdb_stage is deterministic and keeps the teacher gradient free") {
  RngState data_rng(71);
  const int k = 4;
  std::vector<Sample> source = make_set(3, 16, k, data_rng, true);
  std::vector<Sample> target = make_set(3, 16, k, data_rng, false);

  PathConfig cfg;
  cfg.kind = MixKind::kClass;
  cfg.steps = 6;
  cfg.batch_size = 2;
  OptimizerConfig opt;

  auto run = [&](const std::string& log) {
    SegModel student = tiny_model(72, k);
    EmaTeacher teacher = make_ema_teacher(student, cfg.alpha);
    RngState rng(73);
    dpdb_stage(student, teacher, source, target, cfg, opt, rng, log);
    return std::pair{std::move(student), std::move(teacher)};
  };

  const std::string log =
      (std::filesystem::temp_directory_path() / "ddb_dpdb_log.csv").string();
  auto [s1, t1] = run(log);
  auto [s2, t2] = run("");
  CHECK(same_params(s1, s2));
  CHECK(same_params(t1.model, t2.model));
  CHECK_FALSE(same_params(s1, t1.model));  // teacher lags the student

  for (const auto& [name, p] : t1.model.params()) {
    CHECK_FALSE(p.has_grad_storage());
  }

  std::ifstream in(log);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,loss_src,loss_brg,m_t");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == cfg.steps);
  std::filesystem::remove(log);
}
