#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ddb {

// Counter-based deterministic random stream. Each draw hashes
// (seed, stream, counter) through an integer finalizer, so the sequence is
// identical on every platform and independent of thread scheduling. Streams
// are split by name or index; forking never perturbs the parent.
class RngState {
public:
  explicit RngState(uint64_t seed, uint64_t stream = 0, uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {}

  // Derived stream with counter reset to zero.
  RngState fork(std::string_view tag) const;
  RngState fork(uint64_t index) const;

  uint64_t next_u64();

  // Uniform on [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Unbiased integer on [0, n). n must be positive.
  int64_t uniform_int(int64_t n);

  bool bernoulli(double p);

  // One normal deviate per call (Box-Muller, no cached spare).
  double normal();
  double normal(double mean, double stddev);

  // Gamma(shape, 1) via Marsaglia-Tsang; Beta via the gamma ratio.
  double gamma(double shape);
  double beta(double a, double b);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t counter() const { return counter_; }

private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_;
};

}  // namespace ddb
