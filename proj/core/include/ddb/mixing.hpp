#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

// Pixels carrying this label are excluded from losses, metrics, masks and
// class selection everywhere.
inline constexpr uint8_t kIgnoreLabel = 255;

// Dense HxW class-id map.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> ids;  // row-major

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = 0)
      : h(h), w(w), ids(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int y, int x) const {
    return ids[static_cast<size_t>(y) * w + x];
  }
  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
  int64_t size() const { return static_cast<int64_t>(h) * w; }
  bool operator==(const LabelMap&) const = default;
};

struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> on;  // row-major, {0,1}

  BinaryMask() = default;
  BinaryMask(int h, int w, uint8_t fill = 0)
      : h(h), w(w), on(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int y, int x) const {
    return on[static_cast<size_t>(y) * w + x];
  }
  uint8_t& at(int y, int x) { return on[static_cast<size_t>(y) * w + x]; }
  int64_t ones() const;
  bool operator==(const BinaryMask&) const = default;
};

enum class MixKind { kRegion, kClass, kInterpolation };

// A cross-domain training sample. For the local-replacement kinds (region,
// class) every pixel of (image, label) comes from exactly one parent and
// `mask` records the provenance (1 = source). The interpolation kind blends
// instead: `label_onehot` holds the soft labels and `mask`/`label` are unset.
struct MixedSample {
  Tensor image;         // HxWxC
  LabelMap label;       // local replacement kinds
  Tensor label_onehot;  // interpolation kind, HxWxK
  BinaryMask mask;      // local replacement kinds
  MixKind kind = MixKind::kRegion;
  double lambda = 1.0;  // interpolation kind
};

// Sorted class ids occurring in `y`, ignore excluded.
std::vector<int> classes_present(const LabelMap& y);

// Single axis-aligned all-ones rectangle with side lengths
// round(H*sqrt(r)) x round(W*sqrt(r)) (clamped to [1, dim]), positioned
// uniformly at random fully inside the frame.
BinaryMask sample_region_mask(int h, int w, double area_ratio, RngState& rng);

// Uniformly random subset of ceil(n/2) of the n classes present in y_s,
// returned sorted.
std::vector<int> select_half_classes(const LabelMap& y_s, RngState& rng);

// mask(i) = 1 iff y_s(i) is in `selected`. Ignore pixels always get 0.
BinaryMask class_mask(const LabelMap& y_s, const std::vector<int>& selected);

// Local replacement: image = M*x_s + (1-M)*x_t pixelwise, label provenance
// identical to the image's.
MixedSample apply_local_mix(const Tensor& x_s, const LabelMap& y_s,
                            const Tensor& x_t, const LabelMap& y_t_pseudo,
                            const BinaryMask& m, MixKind kind);

struct InterpolationParams {
  // Fixed mixing ratio when set; otherwise lambda ~ Beta(beta_shape,
  // beta_shape) per call.
  std::optional<double> lambda;
  double beta_shape = 2.0;
};

// Convex combination of the images and of the one-hot labels.
MixedSample apply_interpolation_mix(const Tensor& x_s, const Tensor& y_s_onehot,
                                    const Tensor& x_t,
                                    const Tensor& y_t_onehot,
                                    const InterpolationParams& params,
                                    RngState& rng);

// HxWxK one-hot view of a label map; ignore pixels become all-zero rows.
Tensor onehot_from_labels(const LabelMap& y, int num_classes);

}  // namespace ddb
