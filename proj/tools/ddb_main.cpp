#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ddb/checkpoint.hpp"
#include "ddb/config.hpp"
#include "ddb/data.hpp"
#include "ddb/eval.hpp"
#include "ddb/ops.hpp"
#include "ddb/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

void print_eval(const ddb::MultiDomainReport& multi) {
  for (const ddb::DomainReport& d : multi.domains) {
    std::printf("domain %d: mIoU %.4f over %lld pixels\n", d.domain,
                d.report.miou, static_cast<long long>(d.report.pixels));
    for (size_t c = 0; c < d.report.iou.size(); ++c) {
      if (std::isnan(d.report.iou[c])) {
        std::printf("  class %zu: undefined\n", c);
      } else {
        std::printf("  class %zu: IoU %.4f\n", c, d.report.iou[c]);
      }
    }
  }
  std::printf("average mIoU: %.4f\n", multi.average_miou);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const ddb::RunConfig cfg = ddb::load_run_config(config_path);
  const ddb::Dataset ds = ddb::generate_benchmark(cfg.data);
  fs::create_directories(out_dir);
  ddb::write_dataset(ds, out_dir);
  std::printf("wrote %zu source, %zu target, %zu eval samples to %s\n",
              ds.train_source.size(), ds.train_target.size(),
              ds.eval_target.size(), out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              int rounds_override, int64_t seed_override) {
  ddb::RunConfig cfg = ddb::load_run_config(config_path);
  if (rounds_override > 0) cfg.plan.rounds = rounds_override;
  if (seed_override >= 0) cfg.plan.seed = static_cast<uint64_t>(seed_override);
  fs::create_directories(out_dir);

  const ddb::Dataset ds = ddb::generate_benchmark(cfg.data);
  const ddb::RunResult result = ddb::run_ddb(cfg.plan, cfg.optim, ds, out_dir);
  for (const ddb::RoundReport& r : result.rounds) {
    std::printf(
        "round %d: region teacher %.4f  class teacher %.4f  student %.4f\n",
        r.round, r.teacher_region.average_miou, r.teacher_class.average_miou,
        r.student.average_miou);
  }
  std::printf("artifacts in %s\n", out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir) {
  const ddb::Checkpoint ckpt = ddb::load_checkpoint(ckpt_path);
  const ddb::Dataset ds = ddb::load_dataset(data_dir);
  if (ds.eval_target.empty()) {
    std::fprintf(stderr, "no labeled eval samples in %s\n", data_dir.c_str());
    return 1;
  }
  std::printf("checkpoint stage %s (round %d)\n", ckpt.meta.stage.c_str(),
              ckpt.meta.round);
  print_eval(ddb::evaluate_per_domain(ckpt.model, ds.eval_target));
  return 0;
}

// Central-difference check of the full model loss surface plus each core op.
double fd_max_rel_err(const std::function<ddb::Tensor()>& make_loss,
                      std::vector<ddb::Tensor> inputs) {
  const double eps = 1e-5;
  ddb::Tensor loss = make_loss();
  ddb::backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(inputs.size());
  for (ddb::Tensor& t : inputs) grads.push_back(t.grad());

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].raw().size(); ++j) {
      const double saved = inputs[i].raw()[j];
      inputs[i].raw()[j] = saved + eps;
      const double up = make_loss().value();
      inputs[i].raw()[j] = saved - eps;
      const double down = make_loss().value();
      inputs[i].raw()[j] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double g = grads[i][j];
      const double err =
          std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

int cmd_grad_check() {
  ddb::RngState rng(7);
  auto rand_tensor = [&rng](ddb::Shape shape, double lo, double hi) {
    ddb::Tensor t = ddb::Tensor::zeros(shape, true);
    for (double& v : t.raw()) v = rng.uniform(lo, hi);
    return t;
  };

  struct Check {
    const char* name;
    double err;
  };
  std::vector<Check> checks;

  {
    ddb::Tensor a = rand_tensor({3, 4}, -1.0, 1.0);
    ddb::Tensor b = rand_tensor({3, 4}, -1.0, 1.0);
    checks.push_back({"add/mul/scale",
                      fd_max_rel_err(
                          [&] {
                            return ddb::sum(ddb::scale(
                                ddb::mul(ddb::add(a, b), ddb::sub(a, b)), 0.7));
                          },
                          {a, b})});
  }
  {
    ddb::Tensor x = rand_tensor({4, 5}, 0.3, 1.5);
    checks.push_back(
        {"relu/mean", fd_max_rel_err([&] { return ddb::mean(ddb::relu(x)); }, {x})});
  }
  {
    ddb::Tensor logits = rand_tensor({3, 3, 4}, -2.0, 2.0);
    ddb::Tensor weights = rand_tensor({3, 3}, 0.2, 1.0);
    ddb::Tensor onehot = ddb::Tensor::zeros({3, 3, 4});
    for (int p = 0; p < 9; ++p) {
      onehot.raw()[static_cast<size_t>(p) * 4 +
                   rng.uniform_int(4)] = 1.0;
    }
    checks.push_back({"softmax/weighted_ce",
                      fd_max_rel_err(
                          [&] {
                            return ddb::weighted_cross_entropy(
                                ddb::softmax(logits, 2), onehot, weights);
                          },
                          {logits, weights})});
  }
  {
    ddb::Tensor x = rand_tensor({6, 6, 2}, -1.0, 1.0);
    ddb::Tensor k = rand_tensor({3, 3, 2, 3}, -0.6, 0.6);
    ddb::Tensor b = rand_tensor({3}, -0.2, 0.2);
    checks.push_back({"conv2d/upsample",
                      fd_max_rel_err(
                          [&] {
                            return ddb::mean(ddb::bilinear_upsample(
                                ddb::conv2d(x, k, b, 2, 1), 2));
                          },
                          {x, k, b})});
  }
  {
    ddb::RngState init(11);
    ddb::ArchDescriptor small;
    small.blocks = {{4, 3, 2}, {4, 3, 2}};
    ddb::SegModel model(small, 3, init);
    ddb::Tensor img = rand_tensor({8, 8, 3}, 0.0, 1.0);
    img.set_requires_grad(false);
    std::vector<ddb::Tensor> params;
    for (auto& [name, t] : model.params()) params.push_back(t);
    checks.push_back(
        {"model end-to-end", fd_max_rel_err(
                                 [&] {
                                   model.zero_grads();
                                   return ddb::mean(model.forward(img).logits);
                                 },
                                 params)});
  }

  bool ok = true;
  for (const Check& c : checks) {
    const bool pass = c.err < 1e-6;
    ok = ok && pass;
    std::printf("%-22s max rel err %.3e  %s\n", c.name, c.err,
                pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::string& runs_dir, const std::string& format) {
  struct Row {
    std::string run;
    int round;
    double region, cls, student;
  };
  std::vector<Row> rows;
  auto ingest = [&rows](const fs::path& reports, const std::string& name) {
    std::ifstream in(reports);
    if (!in) return;
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("rounds")) return;
    for (const auto& r : j["rounds"]) {
      rows.push_back({name, r.value("round", 0),
                      r["teacher_region"].value("average_miou", 0.0),
                      r["teacher_class"].value("average_miou", 0.0),
                      r["student"].value("average_miou", 0.0)});
    }
  };

  if (fs::exists(fs::path(runs_dir) / "reports.json")) {
    ingest(fs::path(runs_dir) / "reports.json",
           fs::path(runs_dir).filename().string());
  } else {
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(runs_dir)) {
      if (entry.is_directory() &&
          fs::exists(entry.path() / "reports.json")) {
        subdirs.push_back(entry.path());
      }
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const fs::path& p : subdirs) {
      ingest(p / "reports.json", p.filename().string());
    }
  }
  if (rows.empty()) {
    std::fprintf(stderr, "no reports.json found under %s\n", runs_dir.c_str());
    return 1;
  }

  if (format == "csv") {
    std::printf("run,round,teacher_region_miou,teacher_class_miou,student_miou\n");
    for (const Row& r : rows) {
      std::printf("%s,%d,%.6f,%.6f,%.6f\n", r.run.c_str(), r.round, r.region,
                  r.cls, r.student);
    }
  } else {
    std::printf("| run | round | region teacher | class teacher | student |\n");
    std::printf("|---|---|---|---|---|\n");
    for (const Row& r : rows) {
      std::printf("| %s | %d | %.4f | %.4f | %.4f |\n", r.run.c_str(), r.round,
                  r.region, r.cls, r.student);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-path domain bridging for semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, data_dir, runs_dir;
  std::string format = "markdown";
  int rounds_override = 0;
  int64_t seed_override = -1;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  gen->add_option("--config", config_path, "run config (JSON)")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "run the full bridging pipeline");
  train->add_option("--config", config_path, "run config (JSON)")->required();
  train->add_option("--out", out_dir, "output run directory")->required();
  train->add_option("--rounds", rounds_override, "override round count");
  train->add_option("--seed", seed_override, "override training seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();

  app.add_subcommand("grad-check", "finite-difference check of all gradients");

  CLI::App* report = app.add_subcommand("report", "summarize finished runs");
  report->add_option("--runs", runs_dir, "run directory or parent of runs")->required();
  report->add_option("--format", format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
    if (train->parsed()) return cmd_train(config_path, out_dir, rounds_override, seed_override);
    if (eval->parsed()) return cmd_eval(ckpt_path, data_dir);
    if (app.get_subcommand("grad-check")->parsed()) return cmd_grad_check();
    if (report->parsed()) return cmd_report(runs_dir, format);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
