#include "ddb/eval.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "ddb/mixing.hpp"

namespace ddb {

namespace {

void accumulate(const SegModel& model, const Sample& s, EvalReport& rep) {
  if (s.label.size() == 0) {
    throw std::invalid_argument("evaluate: sample has no label");
  }
  const Tensor logits = model.forward(s.image).logits;
  const int h = logits.dim(0), w = logits.dim(1), k = logits.dim(2);
  if (s.label.h != h || s.label.w != w) {
    throw std::invalid_argument("evaluate: label size mismatch");
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint8_t truth = s.label.at(y, x);
      if (truth == kIgnoreLabel) continue;
      if (truth >= k) throw std::invalid_argument("evaluate: label id >= K");
      const double* row = logits.raw().data() + (static_cast<size_t>(y) * w + x) * k;
      int pred = 0;
      for (int j = 1; j < k; ++j) {
        if (row[j] > row[pred]) pred = j;
      }
      ++rep.confusion[static_cast<size_t>(truth) * k + pred];
      ++rep.pixels;
    }
  }
}

void finalize(EvalReport& rep) {
  const int k = rep.num_classes;
  rep.iou.assign(static_cast<size_t>(k), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < k; ++c) {
    int64_t tp = rep.confusion_at(c, c);
    int64_t uni = -tp;
    for (int j = 0; j < k; ++j) {
      uni += rep.confusion_at(c, j) + rep.confusion_at(j, c);
    }
    if (uni == 0) continue;
    rep.iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += rep.iou[static_cast<size_t>(c)];
    ++defined;
  }
  rep.miou = defined > 0 ? sum / defined : 0.0;
}

}  // namespace

EvalReport evaluate(const SegModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("evaluate: empty sample set");
  }
  EvalReport rep;
  rep.num_classes = model.num_classes();
  rep.confusion.assign(static_cast<size_t>(rep.num_classes) * rep.num_classes, 0);
  for (const Sample& s : samples) accumulate(model, s, rep);
  finalize(rep);
  return rep;
}

MultiDomainReport evaluate_per_domain(const SegModel& model,
                                      const std::vector<Sample>& samples) {
  std::map<int, std::vector<Sample>> by_domain;
  for (const Sample& s : samples) by_domain[s.domain].push_back(s);

  MultiDomainReport out;
  for (auto& [domain, group] : by_domain) {
    out.domains.push_back({domain, evaluate(model, group)});
    out.average_miou += out.domains.back().report.miou;
  }
  if (!out.domains.empty()) out.average_miou /= static_cast<double>(out.domains.size());
  return out;
}

}  // namespace ddb
