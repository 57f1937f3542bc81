#include "ddb/bridging.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "ddb/errors.hpp"
#include "ddb/ops.hpp"

namespace ddb {

EmaTeacher make_ema_teacher(const SegModel& student, double alpha) {
  if (!(alpha >= 0.0) || !(alpha < 1.0)) {
    throw std::invalid_argument("make_ema_teacher: momentum outside [0,1)");
  }
  EmaTeacher teacher{student.clone(), alpha};
  teacher.model.set_requires_grad(false);
  return teacher;
}

void ema_update(EmaTeacher& teacher, const SegModel& student) {
  if (teacher.model.arch() != student.arch() ||
      teacher.model.num_classes() != student.num_classes()) {
    throw std::invalid_argument("ema_update: arch descriptors differ");
  }
  const double one_minus = 1.0 - teacher.alpha;
  auto& tp = teacher.model.params();
  const auto& sp = student.params();
  for (size_t i = 0; i < tp.size(); ++i) {
    auto& t = tp[i].second.raw();
    const auto& s = sp[i].second.raw();
    if (teacher.alpha == 0.0) {
      t = s;
      continue;
    }
    // p + (1-a)(q-p) rather than a*p + (1-a)*q: a stationary student then
    // leaves the teacher bitwise fixed.
    for (size_t j = 0; j < t.size(); ++j) t[j] += one_minus * (s[j] - t[j]);
  }
}

PseudoLabelPack make_pseudo_labels(const SegModel& teacher, const Tensor& x_t,
                                   double tau) {
  const Tensor probs = softmax(teacher.forward(x_t).logits, 2);
  const int h = probs.dim(0), w = probs.dim(1), k = probs.dim(2);

  PseudoLabelPack pack;
  pack.labels = LabelMap(h, w);
  pack.tau = tau;
  std::vector<double> conf(static_cast<size_t>(h) * w);
  int64_t confident = 0;
  const double* p = probs.data();
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (p[i * k + j] > p[i * k + best]) best = j;
    }
    pack.labels.ids[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    conf[static_cast<size_t>(i)] = p[i * k + best];
    if (p[i * k + best] > tau) ++confident;
  }
  pack.confidence = Tensor::from_data({h, w}, std::move(conf));
  pack.m_t = static_cast<double>(confident) / (static_cast<double>(h) * w);
  return pack;
}

WeightMap build_weight_map(const BinaryMask& m, double m_t) {
  if (!(m_t >= 0.0) || !(m_t <= 1.0)) {
    throw std::invalid_argument("build_weight_map: m_t outside [0,1]");
  }
  std::vector<double> v(m.on.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = m.on[i] ? 1.0 : m_t;
  return {Tensor::from_data({m.h, m.w}, std::move(v))};
}

PathLossParts path_loss_parts(const SegModel& model, const Tensor& x_s,
                              const LabelMap& y_s, const MixedSample& mixed,
                              const WeightMap& w) {
  const int k = model.num_classes();
  const Tensor src_probs = softmax(model.forward(x_s).logits, 2);
  const Tensor src_loss =
      cross_entropy(src_probs, onehot_from_labels(y_s, k));

  const Tensor mix_probs = softmax(model.forward(mixed.image).logits, 2);
  const Tensor mix_onehot = mixed.kind == MixKind::kInterpolation
                                ? mixed.label_onehot
                                : onehot_from_labels(mixed.label, k);
  const Tensor brg_loss =
      weighted_cross_entropy(mix_probs, mix_onehot, w.values);
  return {add(src_loss, brg_loss), src_loss, brg_loss};
}

Tensor path_loss(const SegModel& model, const Tensor& x_s, const LabelMap& y_s,
                 const MixedSample& mixed, const WeightMap& w) {
  return path_loss_parts(model, x_s, y_s, mixed, w).total;
}

void dpdb_stage(SegModel& student, EmaTeacher& teacher,
                const std::vector<Sample>& source,
                const std::vector<Sample>& target, const PathConfig& cfg,
                const OptimizerConfig& opt_cfg, RngState& rng,
                const std::string& log_path) {
  if (cfg.kind == MixKind::kInterpolation) {
    throw std::invalid_argument("dpdb_stage: path kind must be region/class");
  }
  if (!(cfg.tau > 0.0) || !(cfg.tau < 1.0) || cfg.batch_size < 1 ||
      cfg.steps < 0) {
    throw std::invalid_argument("dpdb_stage: bad path configuration");
  }
  if (cfg.steps == 0) return;
  if (source.empty() || target.empty()) {
    throw std::invalid_argument("dpdb_stage: empty source or target set");
  }
  teacher.alpha = cfg.alpha;

  AdamW opt(student, opt_cfg);
  CyclicSampler src_order(static_cast<int64_t>(source.size()),
                          rng.fork("source_order"));
  CyclicSampler tgt_order(static_cast<int64_t>(target.size()),
                          rng.fork("target_order"));
  RngState mask_rng = rng.fork("masks");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) {
      throw std::runtime_error("dpdb_stage: cannot open log " + log_path);
    }
    log << "step,loss_src,loss_brg,m_t\n";
  }

  for (int step = 0; step < cfg.steps; ++step) {
    student.zero_grads();
    Tensor batch_loss;
    double sum_src = 0.0, sum_brg = 0.0, sum_mt = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Sample& s = source[static_cast<size_t>(src_order.next())];
      const Sample& t = target[static_cast<size_t>(tgt_order.next())];

      const PseudoLabelPack pack =
          make_pseudo_labels(teacher.model, t.image, cfg.tau);

      BinaryMask mask =
          cfg.kind == MixKind::kRegion
              ? sample_region_mask(s.label.h, s.label.w, cfg.area_ratio,
                                   mask_rng)
              : class_mask(s.label, select_half_classes(s.label, mask_rng));
      // Unlabeled source pixels are never pasted.
      for (size_t i = 0; i < mask.on.size(); ++i) {
        if (s.label.ids[i] == kIgnoreLabel) mask.on[i] = 0;
      }

      const MixedSample mixed =
          apply_local_mix(s.image, s.label, t.image, pack.labels, mask,
                          cfg.kind);
      const WeightMap wm = build_weight_map(mask, pack.m_t);

      const PathLossParts parts =
          path_loss_parts(student, s.image, s.label, mixed, wm);
      sum_src += parts.src.value();
      sum_brg += parts.brg.value();
      sum_mt += pack.m_t;
      batch_loss =
          batch_loss.defined() ? add(batch_loss, parts.total) : parts.total;
    }
    const Tensor loss = scale(batch_loss, 1.0 / cfg.batch_size);
    if (!std::isfinite(loss.value())) {
      throw TrainingError("dpdb_stage: non-finite loss at step " +
                          std::to_string(step));
    }
    backward(loss);
    opt.step();
    ema_update(teacher, student);

    if (log) {
      log << step << ',' << sum_src / cfg.batch_size << ','
          << sum_brg / cfg.batch_size << ',' << sum_mt / cfg.batch_size
          << '\n';
    }
  }
}

}  // namespace ddb
