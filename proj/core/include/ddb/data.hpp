#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddb/mixing.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

// One dataset entry. Unlabeled samples have an empty label map (h == 0).
struct Sample {
  Tensor image;   // HxWx3, values on the 8-bit grid k/255 in [0,1]
  LabelMap label;
  int domain = 0;
};

struct Dataset {
  std::vector<Sample> train_source;  // labeled
  std::vector<Sample> train_target;  // unlabeled
  std::vector<Sample> eval_target;   // labeled, held out
  int num_classes = 0;
};

// Endless shuffled index stream: every pass visits each element once, the
// order re-shuffles at each wrap.
class CyclicSampler {
public:
  CyclicSampler(int64_t size, RngState rng);
  int64_t next();
  int64_t size() const { return static_cast<int64_t>(order_.size()); }

private:
  std::vector<int64_t> order_;
  size_t pos_ = 0;
  RngState rng_;
};

// Scene generator configuration for one domain. The benchmark couples class
// pairs to the two failure modes a single mixing strategy leaves open:
// classes 2/3 are appearance twins whose band placement prior flips between
// context rules, classes 4/5 are identical disks whose identity is decided
// purely by the band they sit on.
struct DomainSpec {
  enum class Role { kSource, kTarget };
  Role role = Role::kSource;
  int count = 0;       // training samples
  int eval_count = 0;  // held-out labeled samples (target domains)
  int palette = 0;       // color table id
  int context_rule = 0;  // band-placement prior id for classes 2/3
  // Expected objects per image for classes 2..5.
  std::vector<double> class_frequencies = {1.3, 1.3, 1.8, 1.8};
  double noise = 0.04;  // uniform per-channel pixel jitter amplitude
};

struct BenchmarkConfig {
  int image_size = 64;
  int num_classes = 6;
  uint64_t seed = 1;
  std::vector<DomainSpec> domains;
};

// Default two-domain benchmark: one labeled source, one unlabeled target
// with shifted palette and flipped 2/3 placement priors.
BenchmarkConfig default_benchmark(int source_count = 120,
                                  int target_count = 120,
                                  int eval_count = 48);

// Deterministic in-memory rendering of the configured domains. Images are
// quantized to the 8-bit grid, so a disk round-trip is bitwise lossless.
Dataset generate_benchmark(const BenchmarkConfig& cfg);

// On-disk layout: images/*.ppm (P6), labels/*.pgm (P5, 255 = ignore) and a
// `manifest` with one `<split> <domain-id> <image-path> <label-path|->` line
// per sample.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Binary image file primitives (exposed for tests and tools).
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

}  // namespace ddb
