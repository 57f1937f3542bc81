#pragma once

#include <vector>

#include "ddb/data.hpp"
#include "ddb/model.hpp"

namespace ddb {

// Confusion is KxK with ground-truth rows and predicted columns. A class
// absent from both labels and predictions has undefined IoU (NaN) and is
// excluded from the mean.
struct EvalReport {
  int num_classes = 0;
  std::vector<int64_t> confusion;
  std::vector<double> iou;
  double miou = 0.0;
  int64_t pixels = 0;

  int64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes + pred];
  }
};

EvalReport evaluate(const SegModel& model, const std::vector<Sample>& samples);

struct DomainReport {
  int domain = 0;
  EvalReport report;
};

struct MultiDomainReport {
  std::vector<DomainReport> domains;
  double average_miou = 0.0;
};

MultiDomainReport evaluate_per_domain(const SegModel& model,
                                      const std::vector<Sample>& samples);

}  // namespace ddb
