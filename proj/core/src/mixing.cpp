#include "ddb/mixing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ddb {
namespace {

int rounded_side(int dim, double sqrt_ratio) {
  const int side = static_cast<int>(std::lround(dim * sqrt_ratio));
  return std::clamp(side, 1, dim);
}

void require_spatial_match(const Tensor& x, const LabelMap& y,
                           const char* what) {
  if (x.shape().size() != 3 || x.dim(0) != y.h || x.dim(1) != y.w) {
    throw std::invalid_argument(std::string(what) +
                                ": image/label shapes disagree");
  }
}

}  // namespace

int64_t BinaryMask::ones() const {
  return std::accumulate(on.begin(), on.end(), int64_t{0});
}

std::vector<int> classes_present(const LabelMap& y) {
  std::array<bool, 256> seen{};
  for (uint8_t id : y.ids) seen[id] = true;
  std::vector<int> out;
  for (int c = 0; c < 255; ++c) {
    if (seen[static_cast<size_t>(c)]) out.push_back(c);
  }
  return out;
}

BinaryMask sample_region_mask(int h, int w, double area_ratio, RngState& rng) {
  if (h < 2 || w < 2) {
    throw std::invalid_argument("sample_region_mask: frame smaller than 2x2");
  }
  if (!(area_ratio > 0.0) || !(area_ratio < 1.0)) {
    throw std::invalid_argument("sample_region_mask: ratio outside (0,1)");
  }
  const double side_scale = std::sqrt(area_ratio);
  const int rh = rounded_side(h, side_scale);
  const int rw = rounded_side(w, side_scale);
  const int y0 = static_cast<int>(rng.uniform_int(h - rh + 1));
  const int x0 = static_cast<int>(rng.uniform_int(w - rw + 1));

  BinaryMask mask(h, w);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) mask.at(y, x) = 1;
  }
  return mask;
}

std::vector<int> select_half_classes(const LabelMap& y_s, RngState& rng) {
  std::vector<int> present = classes_present(y_s);
  if (present.empty()) {
    throw std::invalid_argument("select_half_classes: no labeled pixels");
  }
  const size_t take = (present.size() + 1) / 2;
  rng.shuffle(present);
  present.resize(take);
  std::sort(present.begin(), present.end());
  return present;
}

BinaryMask class_mask(const LabelMap& y_s, const std::vector<int>& selected) {
  std::array<bool, 256> pick{};
  for (int c : selected) pick[static_cast<size_t>(c)] = true;
  pick[kIgnoreLabel] = false;

  BinaryMask mask(y_s.h, y_s.w);
  for (size_t i = 0; i < y_s.ids.size(); ++i) {
    mask.on[i] = pick[y_s.ids[i]] ? 1 : 0;
  }
  return mask;
}

MixedSample apply_local_mix(const Tensor& x_s, const LabelMap& y_s,
                            const Tensor& x_t, const LabelMap& y_t_pseudo,
                            const BinaryMask& m, MixKind kind) {
  require_spatial_match(x_s, y_s, "apply_local_mix");
  require_spatial_match(x_t, y_t_pseudo, "apply_local_mix");
  if (x_s.shape() != x_t.shape() || m.h != y_s.h || m.w != y_s.w ||
      y_t_pseudo.h != y_s.h || y_t_pseudo.w != y_s.w) {
    throw std::invalid_argument("apply_local_mix: parent shapes disagree");
  }

  const int c = x_s.dim(2);
  std::vector<double> image(x_s.raw().size());
  LabelMap label(y_s.h, y_s.w);
  for (size_t i = 0; i < m.on.size(); ++i) {
    const bool from_source = m.on[i] != 0;
    label.ids[i] = from_source ? y_s.ids[i] : y_t_pseudo.ids[i];
    const double* src = (from_source ? x_s : x_t).data() + i * c;
    std::copy(src, src + c, image.data() + i * c);
  }

  MixedSample out;
  out.image = Tensor::from_data(x_s.shape(), std::move(image));
  out.label = std::move(label);
  out.mask = m;
  out.kind = kind;
  return out;
}

MixedSample apply_interpolation_mix(const Tensor& x_s, const Tensor& y_s_onehot,
                                    const Tensor& x_t,
                                    const Tensor& y_t_onehot,
                                    const InterpolationParams& params,
                                    RngState& rng) {
  if (x_s.shape() != x_t.shape() || y_s_onehot.shape() != y_t_onehot.shape() ||
      y_s_onehot.shape().size() != 3 || y_s_onehot.dim(0) != x_s.dim(0) ||
      y_s_onehot.dim(1) != x_s.dim(1)) {
    throw std::invalid_argument("apply_interpolation_mix: shapes disagree");
  }
  const double lambda =
      params.lambda ? *params.lambda : rng.beta(params.beta_shape,
                                                params.beta_shape);
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("apply_interpolation_mix: lambda outside [0,1]");
  }

  auto blend = [lambda](const Tensor& a, const Tensor& b) {
    std::vector<double> out(a.raw().size());
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = lambda * a.raw()[i] + (1.0 - lambda) * b.raw()[i];
    }
    return Tensor::from_data(a.shape(), std::move(out));
  };

  MixedSample out;
  out.image = blend(x_s, x_t);
  out.label_onehot = blend(y_s_onehot, y_t_onehot);
  out.kind = MixKind::kInterpolation;
  out.lambda = lambda;
  return out;
}

Tensor onehot_from_labels(const LabelMap& y, int num_classes) {
  std::vector<double> data(static_cast<size_t>(y.size()) * num_classes, 0.0);
  for (size_t i = 0; i < y.ids.size(); ++i) {
    const uint8_t id = y.ids[i];
    if (id == kIgnoreLabel) continue;
    if (id >= num_classes) {
      throw std::invalid_argument("onehot_from_labels: class id out of range");
    }
    data[i * num_classes + id] = 1.0;
  }
  return Tensor::from_data({y.h, y.w, num_classes}, std::move(data));
}

}  // namespace ddb
