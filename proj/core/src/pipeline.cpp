#include "ddb/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ddb/checkpoint.hpp"
#include "ddb/errors.hpp"
#include "ddb/ops.hpp"

namespace fs = std::filesystem;

namespace ddb {

OptimizerConfig stage_optim(const OptimizerConfig& base, int steps) {
  OptimizerConfig cfg = base;
  cfg.total_steps = steps;
  cfg.warmup_steps = static_cast<int>(std::lround(kWarmupFraction * steps));
  return cfg;
}

RoundPlan default_round_plan() {
  RoundPlan plan;
  plan.region_path.kind = MixKind::kRegion;
  plan.class_path.kind = MixKind::kClass;
  return plan;
}

namespace {

struct RunIo {
  std::string out_dir;
  int sequence = 0;

  bool enabled() const { return !out_dir.empty(); }

  std::string log_path(int round, const char* stage) const {
    if (!enabled()) return {};
    return (fs::path(out_dir) / "logs" /
            ("round" + std::to_string(round) + "_" + stage + ".csv"))
        .string();
  }

  void save_model(const SegModel& model, int round, const char* stage,
                  const RngState& rng) {
    if (!enabled()) return;
    CheckpointMeta meta;
    meta.round = round;
    meta.sequence = sequence++;
    meta.stage = "round" + std::to_string(round) + "." + stage;
    meta.rng_seed = rng.seed();
    meta.rng_stream = rng.stream();
    meta.rng_counter = rng.counter();
    save_checkpoint((fs::path(out_dir) / "checkpoints" / (meta.stage + ".ckpt")).string(),
                    model, meta);
  }

  void save_prototypes(const CkdResult& result, int round) {
    if (!enabled()) return;
    auto dump = [](const PrototypeSet& p, const char* tag,
                   std::vector<NamedTensorRecord>& records) {
      records.push_back({std::string(tag) + ".centroids", p.centroids.shape(),
                         p.centroids.raw()});
      std::vector<double> counts(p.counts.begin(), p.counts.end());
      records.push_back({std::string(tag) + ".counts",
                         {static_cast<int>(counts.size())},
                         std::move(counts)});
    };
    std::vector<NamedTensorRecord> records;
    records.push_back({"__meta.counts",
                       {2},
                       {static_cast<double>(round),
                        static_cast<double>(sequence++)}});
    dump(result.prototypes_c, "region", records);
    dump(result.prototypes_f, "class", records);
    write_record_file((fs::path(out_dir) / "prototypes" /
                       ("round" + std::to_string(round) + ".bin"))
                          .string(),
                      records);
  }
};

}  // namespace

RunResult run_ddb(const RoundPlan& plan, const OptimizerConfig& optim,
                  const Dataset& data, const std::string& out_dir) {
  if (plan.rounds < 1) {
    throw std::invalid_argument("run_ddb: rounds must be >= 1");
  }
  if (data.num_classes < 2) {
    throw std::invalid_argument("run_ddb: dataset needs at least 2 classes");
  }
  if (data.train_source.empty() || data.train_target.empty() ||
      data.eval_target.empty()) {
    throw std::invalid_argument("run_ddb: dataset has an empty split");
  }

  RunIo io{out_dir};
  if (io.enabled()) {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    fs::create_directories(fs::path(out_dir) / "logs");
    fs::create_directories(fs::path(out_dir) / "prototypes");
  }

  const ArchDescriptor arch;
  RngState root(plan.seed);
  RngState rng_c = root.fork("region_model");
  RngState rng_f = root.fork("class_model");
  RngState rng_s = root.fork("student_model");
  RunResult result;
  result.teacher_region = SegModel(arch, data.num_classes, rng_c);
  result.teacher_class = SegModel(arch, data.num_classes, rng_f);
  result.student = SegModel(arch, data.num_classes, rng_s);

  auto run_path = [&](SegModel& model, const PathConfig& cfg, int round,
                      const char* stage) {
    EmaTeacher teacher = make_ema_teacher(model, cfg.alpha);
    RngState rng =
        root.fork("round" + std::to_string(round) + "/" + stage);
    try {
      dpdb_stage(model, teacher, data.train_source, data.train_target, cfg,
                 stage_optim(optim, cfg.steps), rng, io.log_path(round, stage));
    } catch (const std::exception& e) {
      throw TrainingError("round " + std::to_string(round) + " " + stage +
                          " path: " + e.what());
    }
    io.save_model(model, round, stage, rng);
  };

  for (int round = 1; round <= plan.rounds; ++round) {
    run_path(result.teacher_region, plan.region_path, round, "region");
    run_path(result.teacher_class, plan.class_path, round, "class");

    RoundReport report;
    report.round = round;
    report.teacher_region =
        evaluate_per_domain(result.teacher_region, data.eval_target);
    report.teacher_class =
        evaluate_per_domain(result.teacher_class, data.eval_target);

    RngState rng =
        root.fork("round" + std::to_string(round) + "/ckd");
    CkdResult ckd;
    try {
      ckd = ckd_stage(result.student, result.teacher_region,
                      result.teacher_class, data.train_source,
                      data.train_target, plan.distill,
                      stage_optim(optim, plan.distill.steps), rng,
                      io.log_path(round, "ckd"));
    } catch (const std::exception& e) {
      throw TrainingError("round " + std::to_string(round) +
                          " ckd stage: " + e.what());
    }
    io.save_prototypes(ckd, round);
    io.save_model(result.student, round, "student", rng);
    report.student = evaluate_per_domain(result.student, data.eval_target);
    result.rounds.push_back(std::move(report));

    if (round != plan.rounds) {
      copy_params(result.student, result.teacher_region);
      copy_params(result.student, result.teacher_class);
    }
  }

  if (io.enabled()) {
    write_reports_json((fs::path(out_dir) / "reports.json").string(),
                       result.rounds);
  }
  return result;
}

SegModel train_supervised(const std::vector<Sample>& labeled, int num_classes,
                          int steps, int batch_size,
                          const OptimizerConfig& optim, RngState rng) {
  if (labeled.empty()) {
    throw std::invalid_argument("train_supervised: empty training set");
  }
  if (steps < 0 || batch_size < 1) {
    throw std::invalid_argument("train_supervised: bad schedule");
  }
  RngState init_rng = rng.fork("model");
  SegModel model(ArchDescriptor{}, num_classes, init_rng);
  AdamW opt(model, stage_optim(optim, steps));
  CyclicSampler order(static_cast<int64_t>(labeled.size()), rng.fork("order"));

  for (int step = 0; step < steps; ++step) {
    model.zero_grads();
    Tensor loss;
    for (int b = 0; b < batch_size; ++b) {
      const Sample& s = labeled[static_cast<size_t>(order.next())];
      const Tensor probs = softmax(model.forward(s.image).logits, 2);
      const Tensor term =
          cross_entropy(probs, onehot_from_labels(s.label, num_classes));
      loss = b == 0 ? term : add(loss, term);
    }
    loss = scale(loss, 1.0 / batch_size);
    if (!std::isfinite(loss.value())) {
      throw TrainingError("train_supervised: non-finite loss at step " +
                          std::to_string(step));
    }
    backward(loss);
    opt.step();
  }
  return model;
}

void write_reports_json(const std::string& path,
                        const std::vector<RoundReport>& rounds) {
  nlohmann::json out;
  out["rounds"] = nlohmann::json::array();
  auto domain_json = [](const MultiDomainReport& multi) {
    nlohmann::json j;
    j["average_miou"] = multi.average_miou;
    j["domains"] = nlohmann::json::array();
    for (const DomainReport& d : multi.domains) {
      nlohmann::json dj;
      dj["domain"] = d.domain;
      dj["miou"] = d.report.miou;
      dj["iou"] = d.report.iou;
      dj["pixels"] = d.report.pixels;
      j["domains"].push_back(std::move(dj));
    }
    return j;
  };
  for (const RoundReport& r : rounds) {
    nlohmann::json rj;
    rj["round"] = r.round;
    rj["teacher_region"] = domain_json(r.teacher_region);
    rj["teacher_class"] = domain_json(r.teacher_class);
    rj["student"] = domain_json(r.student);
    out["rounds"].push_back(std::move(rj));
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << out.dump(2) << "\n";
}

}  // namespace ddb
