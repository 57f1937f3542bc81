#pragma once

#include <string>
#include <vector>

#include "ddb/data.hpp"
#include "ddb/mixing.hpp"
#include "ddb/model.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

// Per-class mean feature vectors over the pseudo-labeled target set.
struct PrototypeSet {
  Tensor centroids;             // KxD, zero rows for empty classes
  std::vector<int64_t> counts;  // feature-grid pixels per class
  bool empty_class(int j) const { return counts[static_cast<size_t>(j)] == 0; }
};

// One pass over the whole target set with a frozen teacher. Features stay on
// their native grid; hard pseudo-labels are nearest-neighbor downsampled
// (cell centers) to that grid. Accumulation runs in extended precision in a
// fixed order, so the result does not depend on how sums would associate.
PrototypeSet compute_centroids(const SegModel& teacher,
                               const std::vector<Sample>& target_set);

// Per-pixel softmax over negative L2 distances to the non-empty centroids.
struct AdaptiveWeightField {
  Tensor w;  // H'xW'xK; empty classes carry weight 0
};

AdaptiveWeightField adaptive_weights(const Tensor& features,
                                     const PrototypeSet& prototypes);

// All-ones field: the ablation that ignores prototype distances.
AdaptiveWeightField uniform_weights(int h, int w, int num_classes);

// (w_C * softmax_C + w_F * softmax_F) / 2 per pixel and class, with the
// weight fields nearest-neighbor upsampled to the logits grid. Renormalize
// rescales each pixel row to sum to 1 (needed when the result is consumed as
// a distribution; the argmax is unaffected).
Tensor ensemble_probs(const Tensor& logits_c, const AdaptiveWeightField& w_c,
                      const Tensor& logits_f, const AdaptiveWeightField& w_f,
                      bool renormalize);

// Argmax of the weighted two-teacher average, lowest class index on ties.
LabelMap ensemble_pseudo_label(const Tensor& logits_c,
                               const AdaptiveWeightField& w_c,
                               const Tensor& logits_f,
                               const AdaptiveWeightField& w_f);

struct AugmentParams {
  double brightness = 0.2;  // additive shift drawn from ±brightness
  double contrast = 0.2;    // factor drawn from 1 ± contrast
  double saturation = 0.2;  // blend toward per-pixel gray, factor 1 ± value
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.0;
};

// Photometric jitter then Gaussian blur (separable, periodic padding),
// clamped to [0,1]. Purely photometric: labels stay valid.
Tensor augment_target(const Tensor& x_t, const AugmentParams& cfg,
                      RngState& rng);

struct DistillConfig {
  enum class Mode { kHard, kSoft };
  enum class Ensemble { kAdaptive, kUniform };
  Mode mode = Mode::kHard;
  Ensemble ensemble = Ensemble::kAdaptive;
  // Soft mode only: both sides are sharpened by 1/temperature (the teacher
  // distribution by power, the student by logit scaling).
  double temperature = 1.0;
  AugmentParams augment;
  int steps = 2000;
  int batch_size = 4;
};

// Distillation target for one target image; which field is set follows
// DistillConfig::mode.
struct DistillTarget {
  LabelMap hard;
  Tensor soft;  // HxWxK distribution
};

struct StudentLossParts {
  Tensor total;
  Tensor src;
  Tensor distill;
};

StudentLossParts student_loss_parts(const SegModel& student, const Tensor& x_s,
                                    const LabelMap& y_s, const Tensor& x_t_aug,
                                    const DistillTarget& target,
                                    const DistillConfig& cfg);

// CE(student(x_s), y_s) plus the distillation term on the augmented target:
// hard mode CE against the ensembled labels, soft mode KL against the
// ensembled distribution.
Tensor student_loss(const SegModel& student, const Tensor& x_s,
                    const LabelMap& y_s, const Tensor& x_t_aug,
                    const DistillTarget& target, const DistillConfig& cfg);

struct CkdResult {
  PrototypeSet prototypes_c;
  PrototypeSet prototypes_f;
};

// Distillation stage: centroids once up front, then per step an ensembled
// pseudo-label built on the clean target image and a student update on the
// augmented one. Appends CSV rows (step,loss_src,loss_distill) to log_path
// unless it is empty. Teachers are read-only throughout.
CkdResult ckd_stage(SegModel& student, const SegModel& teacher_c,
                    const SegModel& teacher_f,
                    const std::vector<Sample>& source,
                    const std::vector<Sample>& target,
                    const DistillConfig& cfg, const OptimizerConfig& opt_cfg,
                    RngState& rng, const std::string& log_path = {});

}  // namespace ddb
