#pragma once

#include <string>
#include <vector>

#include "ddb/data.hpp"
#include "ddb/mixing.hpp"
#include "ddb/model.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

// Momentum copy of a student. Its parameters never carry gradients; they
// move only through ema_update.
struct EmaTeacher {
  SegModel model;
  double alpha = 0.99;
};

EmaTeacher make_ema_teacher(const SegModel& student, double alpha);

// p_teacher <- alpha * p_teacher + (1 - alpha) * p_student, elementwise.
void ema_update(EmaTeacher& teacher, const SegModel& student);

// Teacher read-out on one target image.
struct PseudoLabelPack {
  LabelMap labels;    // per-pixel argmax of the teacher softmax
  Tensor confidence;  // HxW max softmax probability
  double m_t = 0.0;   // fraction of pixels with confidence strictly > tau
  double tau = 0.0;
};

PseudoLabelPack make_pseudo_labels(const SegModel& teacher, const Tensor& x_t,
                                   double tau);

// HxW map that is 1 on source-provenance pixels and m_t elsewhere.
struct WeightMap {
  Tensor values;
};

WeightMap build_weight_map(const BinaryMask& m, double m_t);

struct PathConfig {
  MixKind kind = MixKind::kRegion;
  double area_ratio = 0.3;  // region path rectangle area fraction
  double tau = 0.968;
  double alpha = 0.99;
  int steps = 2000;
  int batch_size = 4;
};

// Supervised source term plus the weighted bridging term, both pixel-sum
// cross entropies on softmax outputs.
struct PathLossParts {
  Tensor total;
  Tensor src;
  Tensor brg;
};

PathLossParts path_loss_parts(const SegModel& model, const Tensor& x_s,
                              const LabelMap& y_s, const MixedSample& mixed,
                              const WeightMap& w);

Tensor path_loss(const SegModel& model, const Tensor& x_s, const LabelMap& y_s,
                 const MixedSample& mixed, const WeightMap& w);

// One self-training stage on one path: per step, pseudo-label a target
// image with the EMA teacher, paste source content per cfg.kind, optimize
// the path loss, then move the teacher. Appends one CSV row per step
// (step,loss_src,loss_brg,m_t) to log_path unless it is empty.
void dpdb_stage(SegModel& student, EmaTeacher& teacher,
                const std::vector<Sample>& source,
                const std::vector<Sample>& target, const PathConfig& cfg,
                const OptimizerConfig& opt_cfg, RngState& rng,
                const std::string& log_path = {});

}  // namespace ddb
