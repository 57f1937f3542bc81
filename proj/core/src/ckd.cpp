#include "ddb/ckd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "ddb/errors.hpp"
#include "ddb/ops.hpp"

namespace ddb {
namespace {

// Hard labels of the logits' argmax, nearest-neighbor downsampled to the
// feature grid by sampling cell centers.
LabelMap downsampled_argmax(const Tensor& logits, int fh, int fw) {
  const int h = logits.dim(0), w = logits.dim(1), k = logits.dim(2);
  const int fy = h / fh, fx = w / fw;
  LabelMap out(fh, fw);
  const double* p = logits.data();
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      const int64_t pix =
          static_cast<int64_t>(y * fy + fy / 2) * w + (x * fx + fx / 2);
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (p[pix * k + j] > p[pix * k + best]) best = j;
      }
      out.at(y, x) = static_cast<uint8_t>(best);
    }
  }
  return out;
}

}  // namespace

PrototypeSet compute_centroids(const SegModel& teacher,
                               const std::vector<Sample>& target_set) {
  if (target_set.empty()) {
    throw std::invalid_argument("compute_centroids: empty target set");
  }
  const int k = teacher.num_classes();
  const int d = teacher.arch().feature_dim();
  std::vector<long double> sums(static_cast<size_t>(k) * d, 0.0L);
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);

  for (const Sample& t : target_set) {
    const SegModel::Output out = teacher.forward(t.image);
    const int fh = out.features.dim(0), fw = out.features.dim(1);
    const LabelMap labels = downsampled_argmax(out.logits, fh, fw);
    const double* f = out.features.data();
    for (int64_t pix = 0; pix < static_cast<int64_t>(fh) * fw; ++pix) {
      const int cls = labels.ids[static_cast<size_t>(pix)];
      ++counts[static_cast<size_t>(cls)];
      long double* row = sums.data() + static_cast<size_t>(cls) * d;
      for (int j = 0; j < d; ++j) row[j] += f[pix * d + j];
    }
  }

  std::vector<double> centroids(sums.size(), 0.0);
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    for (int j = 0; j < d; ++j) {
      centroids[static_cast<size_t>(c) * d + j] = static_cast<double>(
          sums[static_cast<size_t>(c) * d + j] /
          counts[static_cast<size_t>(c)]);
    }
  }
  return {Tensor::from_data({k, d}, std::move(centroids)), std::move(counts)};
}

AdaptiveWeightField adaptive_weights(const Tensor& features,
                                     const PrototypeSet& prototypes) {
  const int h = features.dim(0), w = features.dim(1), d = features.dim(2);
  const int k = prototypes.centroids.dim(0);
  if (prototypes.centroids.dim(1) != d) {
    throw std::invalid_argument("adaptive_weights: feature dim mismatch");
  }
  std::vector<int> live;
  for (int c = 0; c < k; ++c) {
    if (!prototypes.empty_class(c)) live.push_back(c);
  }
  if (live.empty()) {
    throw ConfigError("adaptive_weights: every class is empty");
  }

  std::vector<double> out(static_cast<size_t>(h) * w * k, 0.0);
  const double* f = features.data();
  const double* eta = prototypes.centroids.data();
  std::vector<double> neg_dist(live.size());
  for (int64_t pix = 0; pix < static_cast<int64_t>(h) * w; ++pix) {
    for (size_t i = 0; i < live.size(); ++i) {
      double sq = 0.0;
      const double* row = eta + static_cast<size_t>(live[i]) * d;
      for (int j = 0; j < d; ++j) {
        const double diff = f[pix * d + j] - row[j];
        sq += diff * diff;
      }
      neg_dist[i] = -std::sqrt(sq);
    }
    const double mx = *std::max_element(neg_dist.begin(), neg_dist.end());
    double denom = 0.0;
    for (double v : neg_dist) denom += std::exp(v - mx);
    for (size_t i = 0; i < live.size(); ++i) {
      out[static_cast<size_t>(pix) * k + static_cast<size_t>(live[i])] =
          std::exp(neg_dist[i] - mx) / denom;
    }
  }
  return {Tensor::from_data({h, w, k}, std::move(out))};
}

AdaptiveWeightField uniform_weights(int h, int w, int num_classes) {
  return {Tensor::full({h, w, num_classes}, 1.0)};
}

Tensor ensemble_probs(const Tensor& logits_c, const AdaptiveWeightField& w_c,
                      const Tensor& logits_f, const AdaptiveWeightField& w_f,
                      bool renormalize) {
  if (logits_c.shape() != logits_f.shape() ||
      w_c.w.shape() != w_f.w.shape()) {
    throw std::invalid_argument("ensemble_probs: teacher shapes disagree");
  }
  const int h = logits_c.dim(0), w = logits_c.dim(1), k = logits_c.dim(2);
  const int fh = w_c.w.dim(0), fw = w_c.w.dim(1);
  if (w_c.w.dim(2) != k || h % fh != 0 || w % fw != 0) {
    throw std::invalid_argument("ensemble_probs: weight grid misaligned");
  }
  const int fy = h / fh, fx = w / fw;

  const Tensor pc = softmax(logits_c, 2);
  const Tensor pf = softmax(logits_f, 2);
  std::vector<double> out(static_cast<size_t>(h) * w * k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t pix = static_cast<size_t>(y) * w + x;
      const size_t wpix =
          (static_cast<size_t>(y / fy) * fw + static_cast<size_t>(x / fx)) * k;
      double row_sum = 0.0;
      for (int j = 0; j < k; ++j) {
        const double v = (w_c.w.data()[wpix + j] * pc.data()[pix * k + j] +
                          w_f.w.data()[wpix + j] * pf.data()[pix * k + j]) /
                         2.0;
        out[pix * k + j] = v;
        row_sum += v;
      }
      if (renormalize && row_sum > 0.0) {
        for (int j = 0; j < k; ++j) out[pix * k + j] /= row_sum;
      }
    }
  }
  return Tensor::from_data({h, w, k}, std::move(out));
}

LabelMap ensemble_pseudo_label(const Tensor& logits_c,
                               const AdaptiveWeightField& w_c,
                               const Tensor& logits_f,
                               const AdaptiveWeightField& w_f) {
  const Tensor avg = ensemble_probs(logits_c, w_c, logits_f, w_f, false);
  const int h = avg.dim(0), w = avg.dim(1), k = avg.dim(2);
  LabelMap out(h, w);
  const double* p = avg.data();
  for (int64_t pix = 0; pix < static_cast<int64_t>(h) * w; ++pix) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (p[pix * k + j] > p[pix * k + best]) best = j;
    }
    out.ids[static_cast<size_t>(pix)] = static_cast<uint8_t>(best);
  }
  return out;
}

Tensor augment_target(const Tensor& x_t, const AugmentParams& cfg,
                      RngState& rng) {
  const int h = x_t.dim(0), w = x_t.dim(1), c = x_t.dim(2);
  // All four draws happen unconditionally so the stream stays aligned no
  // matter which transforms are active.
  const double shift = rng.uniform(-cfg.brightness, cfg.brightness);
  const double contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
  const double sat = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
  const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);

  std::vector<double> img = x_t.raw();
  if (shift != 0.0) {
    for (double& v : img) v += shift;
  }
  if (contrast != 1.0) {
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    for (double& v : img) v = mean + (v - mean) * contrast;
  }
  if (sat != 1.0 && c > 1) {
    for (size_t pix = 0; pix < img.size(); pix += static_cast<size_t>(c)) {
      double gray = 0.0;
      for (int j = 0; j < c; ++j) gray += img[pix + static_cast<size_t>(j)];
      gray /= c;
      for (int j = 0; j < c; ++j) {
        double& v = img[pix + static_cast<size_t>(j)];
        v = gray + (v - gray) * sat;
      }
    }
  }
  if (sigma > 0.0) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[static_cast<size_t>(i + radius)] =
          std::exp(-0.5 * (i * i) / (sigma * sigma));
      norm += kernel[static_cast<size_t>(i + radius)];
    }
    for (double& v : kernel) v /= norm;

    auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
    std::vector<double> tmp(img.size());
    // Horizontal pass, then vertical, both with periodic padding.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            acc += kernel[static_cast<size_t>(i + radius)] *
                   img[(static_cast<size_t>(y) * w + wrap(x + i, w)) * c + j];
          }
          tmp[(static_cast<size_t>(y) * w + x) * c + j] = acc;
        }
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            acc += kernel[static_cast<size_t>(i + radius)] *
                   tmp[(static_cast<size_t>(wrap(y + i, h)) * w + x) * c + j];
          }
          img[(static_cast<size_t>(y) * w + x) * c + j] = acc;
        }
      }
    }
  }
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return Tensor::from_data(x_t.shape(), std::move(img));
}

StudentLossParts student_loss_parts(const SegModel& student, const Tensor& x_s,
                                    const LabelMap& y_s, const Tensor& x_t_aug,
                                    const DistillTarget& target,
                                    const DistillConfig& cfg) {
  const int k = student.num_classes();
  const Tensor src_loss = cross_entropy(
      softmax(student.forward(x_s).logits, 2), onehot_from_labels(y_s, k));

  const Tensor tgt_logits = student.forward(x_t_aug).logits;
  Tensor distill;
  if (cfg.mode == DistillConfig::Mode::kHard) {
    if (target.hard.size() == 0) {
      throw std::invalid_argument("student_loss: hard mode without labels");
    }
    distill = cross_entropy(softmax(tgt_logits, 2),
                            onehot_from_labels(target.hard, k));
  } else {
    if (!target.soft.defined()) {
      throw std::invalid_argument(
          "student_loss: soft mode without a distribution");
    }
    if (!(cfg.temperature > 0.0)) {
      throw std::invalid_argument("student_loss: temperature must be > 0");
    }
    Tensor teacher = target.soft;
    if (cfg.temperature != 1.0) {
      std::vector<double> sharp = teacher.raw();
      const int kk = teacher.dim(2);
      for (size_t pix = 0; pix < sharp.size(); pix += static_cast<size_t>(kk)) {
        double row = 0.0;
        for (int j = 0; j < kk; ++j) {
          sharp[pix + static_cast<size_t>(j)] = std::pow(
              std::max(sharp[pix + static_cast<size_t>(j)], kLogFloor),
              1.0 / cfg.temperature);
          row += sharp[pix + static_cast<size_t>(j)];
        }
        for (int j = 0; j < kk; ++j) sharp[pix + static_cast<size_t>(j)] /= row;
      }
      teacher = Tensor::from_data(teacher.shape(), std::move(sharp));
    }
    distill = kl_divergence(
        softmax(scale(tgt_logits, 1.0 / cfg.temperature), 2), teacher);
  }
  return {add(src_loss, distill), src_loss, distill};
}

Tensor student_loss(const SegModel& student, const Tensor& x_s,
                    const LabelMap& y_s, const Tensor& x_t_aug,
                    const DistillTarget& target, const DistillConfig& cfg) {
  return student_loss_parts(student, x_s, y_s, x_t_aug, target, cfg).total;
}

CkdResult ckd_stage(SegModel& student, const SegModel& teacher_c,
                    const SegModel& teacher_f,
                    const std::vector<Sample>& source,
                    const std::vector<Sample>& target,
                    const DistillConfig& cfg, const OptimizerConfig& opt_cfg,
                    RngState& rng, const std::string& log_path) {
  if (teacher_c.num_classes() != student.num_classes() ||
      teacher_f.num_classes() != student.num_classes()) {
    throw std::invalid_argument("ckd_stage: class counts differ");
  }
  if (cfg.batch_size < 1 || cfg.steps < 0) {
    throw std::invalid_argument("ckd_stage: bad configuration");
  }
  if (source.empty() || target.empty()) {
    throw std::invalid_argument("ckd_stage: empty source or target set");
  }

  CkdResult result{compute_centroids(teacher_c, target),
                   compute_centroids(teacher_f, target)};
  if (cfg.steps == 0) return result;

  AdamW opt(student, opt_cfg);
  CyclicSampler src_order(static_cast<int64_t>(source.size()),
                          rng.fork("source_order"));
  CyclicSampler tgt_order(static_cast<int64_t>(target.size()),
                          rng.fork("target_order"));
  RngState aug_rng = rng.fork("augment");

  // The teachers are frozen for the whole stage, so the ensembled target for
  // a given image never changes; build it once per image on first use.
  std::vector<DistillTarget> cache(target.size());
  std::vector<char> ready(target.size(), 0);
  auto ensure_target = [&](size_t idx) -> const DistillTarget& {
    if (!ready[idx]) {
      const SegModel::Output oc = teacher_c.forward(target[idx].image);
      const SegModel::Output of = teacher_f.forward(target[idx].image);
      AdaptiveWeightField wc, wf;
      if (cfg.ensemble == DistillConfig::Ensemble::kAdaptive) {
        wc = adaptive_weights(oc.features, result.prototypes_c);
        wf = adaptive_weights(of.features, result.prototypes_f);
      } else {
        wc = uniform_weights(oc.features.dim(0), oc.features.dim(1),
                             student.num_classes());
        wf = wc;
      }
      DistillTarget t;
      if (cfg.mode == DistillConfig::Mode::kHard) {
        t.hard = ensemble_pseudo_label(oc.logits, wc, of.logits, wf);
      } else {
        t.soft = ensemble_probs(oc.logits, wc, of.logits, wf, true);
      }
      cache[idx] = std::move(t);
      ready[idx] = 1;
    }
    return cache[idx];
  };

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) {
      throw std::runtime_error("ckd_stage: cannot open log " + log_path);
    }
    log << "step,loss_src,loss_distill\n";
  }

  for (int step = 0; step < cfg.steps; ++step) {
    student.zero_grads();
    Tensor batch_loss;
    double sum_src = 0.0, sum_distill = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Sample& s = source[static_cast<size_t>(src_order.next())];
      const size_t t_idx = static_cast<size_t>(tgt_order.next());
      const DistillTarget& dt = ensure_target(t_idx);
      const Tensor x_aug =
          augment_target(target[t_idx].image, cfg.augment, aug_rng);
      const StudentLossParts parts =
          student_loss_parts(student, s.image, s.label, x_aug, dt, cfg);
      sum_src += parts.src.value();
      sum_distill += parts.distill.value();
      batch_loss =
          batch_loss.defined() ? add(batch_loss, parts.total) : parts.total;
    }
    const Tensor loss = scale(batch_loss, 1.0 / cfg.batch_size);
    if (!std::isfinite(loss.value())) {
      throw TrainingError("ckd_stage: non-finite loss at step " +
                          std::to_string(step));
    }
    backward(loss);
    opt.step();

    if (log) {
      log << step << ',' << sum_src / cfg.batch_size << ','
          << sum_distill / cfg.batch_size << '\n';
    }
  }
  return result;
}

}  // namespace ddb
