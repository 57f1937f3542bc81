#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

struct ConvBlockSpec {
  int out_channels;
  int kernel;
  int stride;
  bool operator==(const ConvBlockSpec&) const = default;
};

// Layer plan for the toy segmentation net: strided conv+relu feature blocks,
// a 1x1 classifier, and bilinear upsampling of the logits back to input
// resolution.
struct ArchDescriptor {
  int in_channels = 3;
  std::vector<ConvBlockSpec> blocks = {{16, 3, 2}, {32, 3, 2}, {32, 3, 1}};

  int feature_dim() const { return blocks.back().out_channels; }
  int upsample_factor() const {
    int f = 1;
    for (const auto& b : blocks) f *= b.stride;
    return f;
  }
  bool operator==(const ArchDescriptor&) const = default;
};

// Feature extractor + pixel classifier. Parameters are named tensors in a
// fixed order; everything that iterates them (EMA, optimizer, checkpoints)
// relies on that order being identical across instances of the same arch.
class SegModel {
public:
  SegModel() = default;
  SegModel(const ArchDescriptor& arch, int num_classes, RngState& rng);

  struct Output {
    Tensor features;  // H' x W' x D
    Tensor logits;    // H  x W  x K, upsampled
  };
  Output forward(const Tensor& image) const;

  const ArchDescriptor& arch() const { return arch_; }
  int num_classes() const { return num_classes_; }

  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  Tensor param(const std::string& name) const;
  int64_t param_count() const;

  void set_requires_grad(bool value);
  void zero_grads();

  // Deep copy sharing nothing with this model.
  SegModel clone() const;

private:
  ArchDescriptor arch_;
  int num_classes_ = 0;
  std::vector<std::pair<std::string, Tensor>> params_;
};

// Copies parameter values from src into dst (bitwise). Optimizer state is
// owned elsewhere and intentionally untouched.
void copy_params(const SegModel& src, SegModel& dst);

struct OptimizerConfig {
  double lr_head = 1e-3;
  double lr_extractor = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Linear warmup over the first `warmup_steps`, then linear decay to zero
  // at `total_steps`. A zero total disables the schedule (constant lr).
  int warmup_steps = 0;
  int total_steps = 0;
};

// Decoupled-weight-decay Adam over a model's named parameters. Head
// parameters (classifier) use lr_head, everything else lr_extractor.
class AdamW {
public:
  AdamW(SegModel& model, const OptimizerConfig& cfg);

  // Consumes the gradients currently stored on the parameters.
  void step();

  int step_count() const { return step_; }
  double schedule_scale(int step_index) const;

private:
  SegModel* model_;
  OptimizerConfig cfg_;
  int step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace ddb
