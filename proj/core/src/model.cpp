#include "ddb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ddb/errors.hpp"
#include "ddb/ops.hpp"

namespace ddb {
namespace {

Tensor kaiming_conv_weight(int kh, int kw, int cin, int cout, RngState rng) {
  const double stddev = std::sqrt(2.0 / (kh * kw * cin));
  std::vector<double> data(static_cast<size_t>(kh) * kw * cin * cout);
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data({kh, kw, cin, cout}, std::move(data), true);
}

}  // namespace

SegModel::SegModel(const ArchDescriptor& arch, int num_classes, RngState& rng)
    : arch_(arch), num_classes_(num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("SegModel: need at least 2 classes");
  }
  if (arch.blocks.empty()) {
    throw std::invalid_argument("SegModel: arch needs at least one block");
  }
  int cin = arch.in_channels;
  for (size_t i = 0; i < arch.blocks.size(); ++i) {
    const auto& b = arch.blocks[i];
    const std::string base = "block" + std::to_string(i);
    params_.emplace_back(base + ".weight",
                         kaiming_conv_weight(b.kernel, b.kernel, cin,
                                             b.out_channels,
                                             rng.fork(base + ".weight")));
    params_.emplace_back(base + ".bias",
                         Tensor::zeros({b.out_channels}, true));
    cin = b.out_channels;
  }
  params_.emplace_back("head.weight",
                       kaiming_conv_weight(1, 1, cin, num_classes,
                                           rng.fork("head.weight")));
  params_.emplace_back("head.bias", Tensor::zeros({num_classes}, true));
}

SegModel::Output SegModel::forward(const Tensor& image) const {
  if (!image.defined() || image.shape().size() != 3 ||
      image.dim(2) != arch_.in_channels) {
    throw std::invalid_argument("forward: image must be HxWx" +
                                std::to_string(arch_.in_channels));
  }
  Tensor h = image;
  size_t p = 0;
  for (const auto& b : arch_.blocks) {
    const Tensor& w = params_[p].second;
    const Tensor& bias = params_[p + 1].second;
    p += 2;
    h = relu(conv2d(h, w, bias, b.stride, b.kernel / 2));
  }
  Tensor features = h;
  Tensor raw_logits =
      conv2d(features, params_[p].second, params_[p + 1].second, 1, 0);
  Tensor logits = bilinear_upsample(raw_logits, arch_.upsample_factor());
  return {features, logits};
}

Tensor SegModel::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::invalid_argument("param: no parameter named " + name);
}

int64_t SegModel::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void SegModel::set_requires_grad(bool value) {
  for (auto& [name, t] : params_) t.set_requires_grad(value);
}

void SegModel::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

SegModel SegModel::clone() const {
  SegModel out;
  out.arch_ = arch_;
  out.num_classes_ = num_classes_;
  out.params_.reserve(params_.size());
  for (const auto& [name, t] : params_) {
    Tensor copy = t.detach();
    copy.set_requires_grad(t.requires_grad());
    out.params_.emplace_back(name, copy);
  }
  return out;
}

void copy_params(const SegModel& src, SegModel& dst) {
  if (src.arch() != dst.arch() || src.num_classes() != dst.num_classes()) {
    throw std::invalid_argument("copy_params: arch descriptors differ");
  }
  const auto& sp = src.params();
  auto& dp = dst.params();
  for (size_t i = 0; i < sp.size(); ++i) {
    dp[i].second.raw() = sp[i].second.raw();
  }
}

AdamW::AdamW(SegModel& model, const OptimizerConfig& cfg)
    : model_(&model), cfg_(cfg) {
  m_.resize(model.params().size());
  v_.resize(model.params().size());
  for (size_t i = 0; i < m_.size(); ++i) {
    const size_t n = model.params()[i].second.raw().size();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

double AdamW::schedule_scale(int step_index) const {
  if (cfg_.total_steps <= 0) return 1.0;
  const double t = step_index + 1;
  if (cfg_.warmup_steps > 0 && t <= cfg_.warmup_steps) {
    return t / cfg_.warmup_steps;
  }
  const double span = cfg_.total_steps - cfg_.warmup_steps;
  if (span <= 0) return 0.0;
  const double remaining = (cfg_.total_steps - t) / span;
  return remaining > 0.0 ? remaining : 0.0;
}

void AdamW::step() {
  const double scale = schedule_scale(step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  auto& params = model_->params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    const bool is_head = name.rfind("head.", 0) == 0;
    const double lr = scale * (is_head ? cfg_.lr_head : cfg_.lr_extractor);
    auto& data = p.raw();
    auto& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < data.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw TrainingError("AdamW: non-finite gradient in " + name);
      }
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      data[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                       cfg_.weight_decay * data[j]);
    }
  }
}

}  // namespace ddb
