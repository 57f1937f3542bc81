#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddb/bridging.hpp"
#include "ddb/ckd.hpp"
#include "ddb/data.hpp"
#include "ddb/eval.hpp"
#include "ddb/model.hpp"

namespace ddb {

// Schedule shared by every stage: 5% linear warmup, then linear decay to 0.
inline constexpr double kWarmupFraction = 0.05;
OptimizerConfig stage_optim(const OptimizerConfig& base, int steps);

struct RoundPlan {
  int rounds = 2;
  PathConfig region_path;
  PathConfig class_path;
  DistillConfig distill;
  uint64_t seed = 1;
};

RoundPlan default_round_plan();

struct RoundReport {
  int round = 0;
  MultiDomainReport teacher_region;
  MultiDomainReport teacher_class;
  MultiDomainReport student;
};

struct RunResult {
  SegModel student;
  SegModel teacher_region;  // final-round path models
  SegModel teacher_class;
  std::vector<RoundReport> rounds;
};

// Full alternation: per round, both bridging paths self-train, then the
// student distills from them; between rounds the path models restart from
// the student. With a non-empty out_dir, writes per-stage CSV logs,
// checkpoints with monotone stage tags, prototype dumps, and reports.json.
RunResult run_ddb(const RoundPlan& plan, const OptimizerConfig& optim,
                  const Dataset& data, const std::string& out_dir = {});

// Plain supervised baseline on a labeled set (source-only lower bound or
// target-supervised upper bound).
SegModel train_supervised(const std::vector<Sample>& labeled, int num_classes,
                          int steps, int batch_size,
                          const OptimizerConfig& optim, RngState rng);

void write_reports_json(const std::string& path,
                        const std::vector<RoundReport>& rounds);

}  // namespace ddb
