#pragma once

#include <string>

#include "ddb/data.hpp"
#include "ddb/model.hpp"
#include "ddb/pipeline.hpp"

namespace ddb {

// Everything a run needs: the round plan, optimizer settings, and the
// dataset recipe. JSON keys mirror the struct field names; unknown keys are
// rejected so typos fail loudly.
struct RunConfig {
  RoundPlan plan = default_round_plan();
  OptimizerConfig optim;
  BenchmarkConfig data = default_benchmark();
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);

}  // namespace ddb
