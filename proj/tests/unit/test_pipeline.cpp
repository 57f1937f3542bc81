#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "ddb/bridging.hpp"
#include "ddb/checkpoint.hpp"
#include "ddb/ckd.hpp"
#include "ddb/errors.hpp"
#include "ddb/eval.hpp"
#include "ddb/pipeline.hpp"
#include "ddb/rng.hpp"

using namespace ddb;
namespace fs = std::filesystem;

namespace {

Dataset tiny_benchmark(uint64_t seed) {
  BenchmarkConfig cfg = default_benchmark(6, 6, 4);
  cfg.image_size = 32;
  cfg.seed = seed;
  return generate_benchmark(cfg);
}

RoundPlan tiny_plan(int rounds, int steps) {
  RoundPlan plan = default_round_plan();
  plan.rounds = rounds;
  plan.seed = 7;
  for (PathConfig* p : {&plan.region_path, &plan.class_path}) {
    p->steps = steps;
    p->batch_size = 1;
  }
  plan.distill.steps = steps;
  plan.distill.batch_size = 1;
  return plan;
}

bool same_params(const SegModel& a, const SegModel& b) {
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].second.raw() != b.params()[i].second.raw()) return false;
  }
  return true;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("stage_optim derives the per-stage schedule") {
  OptimizerConfig base;
  base.lr_head = 2e-3;
  OptimizerConfig s = stage_optim(base, 2000);
  CHECK(s.total_steps == 2000);
  CHECK(s.warmup_steps == 100);  // 5% of the stage
  CHECK(s.lr_head == 2e-3);
  CHECK(stage_optim(base, 10).warmup_steps == 1);
  CHECK(stage_optim(base, 0).warmup_steps == 0);
  CHECK(stage_optim(base, 0).total_steps == 0);
}

TEST_CASE("one round of run_ddb equals its hand-built composition") {
  Dataset data = tiny_benchmark(201);
  RoundPlan plan = tiny_plan(1, 6);
  OptimizerConfig optim;

  RunResult got = run_ddb(plan, optim, data);

  // The same stages, composed by hand from the public pieces.
  const ArchDescriptor arch;
  RngState root(plan.seed);
  RngState rng_c = root.fork("region_model");
  RngState rng_f = root.fork("class_model");
  RngState rng_s = root.fork("student_model");
  SegModel region(arch, data.num_classes, rng_c);
  SegModel cls(arch, data.num_classes, rng_f);
  SegModel student(arch, data.num_classes, rng_s);

  EmaTeacher ema_r = make_ema_teacher(region, plan.region_path.alpha);
  RngState r1 = root.fork("round1/region");
  dpdb_stage(region, ema_r, data.train_source, data.train_target,
             plan.region_path, stage_optim(optim, plan.region_path.steps), r1);

  EmaTeacher ema_c = make_ema_teacher(cls, plan.class_path.alpha);
  RngState r2 = root.fork("round1/class");
  dpdb_stage(cls, ema_c, data.train_source, data.train_target, plan.class_path,
             stage_optim(optim, plan.class_path.steps), r2);

  RngState r3 = root.fork("round1/ckd");
  ckd_stage(student, region, cls, data.train_source, data.train_target,
            plan.distill, stage_optim(optim, plan.distill.steps), r3);

  CHECK(same_params(got.teacher_region, region));
  CHECK(same_params(got.teacher_class, cls));
  CHECK(same_params(got.student, student));

  REQUIRE(got.rounds.size() == 1);
  CHECK(got.rounds[0].round == 1);
  CHECK(got.rounds[0].student.average_miou ==
        evaluate_per_domain(student, data.eval_target).average_miou);
}

TEST_CASE("run_ddb is deterministic and records a faithful audit trail") {
  Dataset data = tiny_benchmark(202);
  RoundPlan plan = tiny_plan(2, 5);
  OptimizerConfig optim;

  fs::path dir_a = temp_dir("ddb_run_a");
  fs::path dir_b = temp_dir("ddb_run_b");
  RunResult a = run_ddb(plan, optim, data, dir_a.string());
  RunResult b = run_ddb(plan, optim, data, dir_b.string());

  // Reports agree across runs, and the student never regresses into a
  // different parameter vector.
  REQUIRE(a.rounds.size() == 2);
  for (size_t r = 0; r < 2; ++r) {
    CHECK(a.rounds[r].student.average_miou == b.rounds[r].student.average_miou);
  }
  CHECK(same_params(a.student, b.student));

  // Stage artifacts: per-round checkpoints and logs plus prototype dumps,
  // byte-identical across the two runs.
  const char* stages[] = {"region", "class", "student"};
  int expected_sequence = 0;
  for (int round = 1; round <= 2; ++round) {
    for (const char* stage : stages) {
      const std::string name =
          "round" + std::to_string(round) + "." + stage + ".ckpt";
      fs::path ckpt = dir_a / "checkpoints" / name;
      REQUIRE(fs::exists(ckpt));
      CHECK(slurp(ckpt) == slurp(dir_b / "checkpoints" / name));

      Checkpoint loaded = load_checkpoint(ckpt.string());
      CHECK(loaded.meta.round == round);
      CHECK(loaded.meta.stage ==
            "round" + std::to_string(round) + "." + stage);
      // The prototype dump claims the slot between the class teacher and
      // the student, so the student lands two past the class stage.
      CHECK(loaded.meta.sequence == expected_sequence);
      expected_sequence += std::string(stage) == "class" ? 2 : 1;
    }
    fs::path protos =
        dir_a / "prototypes" / ("round" + std::to_string(round) + ".bin");
    REQUIRE(fs::exists(protos));
    std::vector<NamedTensorRecord> records = read_record_file(protos.string());
    REQUIRE(records.size() == 5);
    CHECK(records[0].name == "__meta.counts");
    CHECK(records[0].data[0] == round);
    CHECK(records[0].data[1] == 4 * (round - 1) + 2);  // after both teachers
    CHECK(records[1].name == "region.centroids");
    CHECK(records[3].name == "class.centroids");

    for (const char* stage : {"region", "class", "ckd"}) {
      fs::path log = dir_a / "logs" /
                     ("round" + std::to_string(round) + "_" + stage + ".csv");
      REQUIRE(fs::exists(log));
      std::ifstream in(log);
      std::string header;
      std::getline(in, header);
      CHECK(header.starts_with("step,"));
      int rows = 0;
      std::string line;
      while (std::getline(in, line)) rows += !line.empty();
      CHECK(rows == 5);
    }
  }

  // The final student checkpoint holds exactly the returned parameters.
  Checkpoint last =
      load_checkpoint((dir_a / "checkpoints" / "round2.student.ckpt").string());
  CHECK(same_params(last.model, a.student));

  // reports.json mirrors the returned per-round evaluations.
  CHECK(fs::exists(dir_a / "reports.json"));
  CHECK(slurp(dir_a / "reports.json") == slurp(dir_b / "reports.json"));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("run_ddb validates the plan and wraps stage failures") {
  Dataset data = tiny_benchmark(203);
  OptimizerConfig optim;

  RoundPlan bad_rounds = tiny_plan(0, 2);
  CHECK_THROWS_AS(run_ddb(bad_rounds, optim, data), std::invalid_argument);

  Dataset no_target = data;
  no_target.train_target.clear();
  CHECK_THROWS_AS(run_ddb(tiny_plan(1, 2), optim, no_target),
                  std::invalid_argument);
  Dataset no_eval = data;
  no_eval.eval_target.clear();
  CHECK_THROWS_AS(run_ddb(tiny_plan(1, 2), optim, no_eval),
                  std::invalid_argument);

  RoundPlan bad_batch = tiny_plan(1, 2);
  bad_batch.region_path.batch_size = 0;
  try {
    run_ddb(bad_batch, optim, data);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("round 1 region") != std::string::npos);
  }
}

TEST_CASE("train_supervised is deterministic and validates input") {
  Dataset data = tiny_benchmark(204);
  OptimizerConfig optim;
  SegModel a = train_supervised(data.train_source, data.num_classes, 5, 2,
                                optim, RngState(17));
  SegModel b = train_supervised(data.train_source, data.num_classes, 5, 2,
                                optim, RngState(17));
  CHECK(same_params(a, b));

  CHECK_THROWS_AS(
      train_supervised({}, data.num_classes, 5, 2, optim, RngState(17)),
      std::invalid_argument);
  CHECK_THROWS_AS(train_supervised(data.train_source, data.num_classes, -1, 2,
                                   optim, RngState(17)),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_supervised(data.train_source, data.num_classes, 5, 0,
                                   optim, RngState(17)),
                  std::invalid_argument);
}

TEST_CASE("multiple source domains pool into one training set") {
  // One domain of 60 images versus the same recipe split into two domains
  // of 30. The pooled set must carry both domain ids, and a source-only
  // model trained on it must land in the same quality band: the split only
  // reshuffles which scenes are drawn, not their distribution.
  BenchmarkConfig whole = default_benchmark(60, 20, 24);
  whole.seed = 205;
  BenchmarkConfig split = whole;
  split.domains.insert(split.domains.begin(), split.domains[0]);
  split.domains[0].count = 30;
  split.domains[1].count = 30;

  Dataset data_whole = generate_benchmark(whole);
  Dataset data_split = generate_benchmark(split);
  REQUIRE(data_split.train_source.size() == 60);
  int from_first = 0, from_second = 0;
  for (const Sample& s : data_split.train_source) {
    from_first += s.domain == 0;
    from_second += s.domain == 1;
  }
  CHECK(from_first == 30);
  CHECK(from_second == 30);

  OptimizerConfig optim;
  SegModel on_whole = train_supervised(data_whole.train_source, 6, 400, 2,
                                       optim, RngState(206));
  SegModel on_split = train_supervised(data_split.train_source, 6, 400, 2,
                                       optim, RngState(206));
  const double miou_whole = evaluate(on_whole, data_whole.eval_target).miou;
  const double miou_split = evaluate(on_split, data_whole.eval_target).miou;
  CHECK(std::abs(miou_whole - miou_split) < 0.12);
}
