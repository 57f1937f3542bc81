#include "ddb/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ddb/errors.hpp"

namespace ddb {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const char* where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ConfigError(std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

MixKind parse_kind(const std::string& s, const char* where) {
  if (s == "region") return MixKind::kRegion;
  if (s == "class") return MixKind::kClass;
  throw ConfigError(std::string("bad kind '") + s + "' in " + where +
                    " (want region or class)");
}

void parse_path(const json& obj, const char* where, PathConfig& cfg) {
  check_keys(obj, where,
             {"kind", "area_ratio", "tau", "alpha", "steps", "batch_size"});
  if (auto it = obj.find("kind"); it != obj.end()) {
    cfg.kind = parse_kind(it->get<std::string>(), where);
  }
  read_field(obj, "area_ratio", cfg.area_ratio);
  read_field(obj, "tau", cfg.tau);
  read_field(obj, "alpha", cfg.alpha);
  read_field(obj, "steps", cfg.steps);
  read_field(obj, "batch_size", cfg.batch_size);
}

void parse_distill(const json& obj, DistillConfig& cfg) {
  check_keys(obj, "distill",
             {"mode", "ensemble", "temperature", "augment", "steps",
              "batch_size"});
  if (auto it = obj.find("mode"); it != obj.end()) {
    const std::string s = it->get<std::string>();
    if (s == "hard") {
      cfg.mode = DistillConfig::Mode::kHard;
    } else if (s == "soft") {
      cfg.mode = DistillConfig::Mode::kSoft;
    } else {
      throw ConfigError("bad mode '" + s + "' in distill (want hard or soft)");
    }
  }
  if (auto it = obj.find("ensemble"); it != obj.end()) {
    const std::string s = it->get<std::string>();
    if (s == "adaptive") {
      cfg.ensemble = DistillConfig::Ensemble::kAdaptive;
    } else if (s == "uniform") {
      cfg.ensemble = DistillConfig::Ensemble::kUniform;
    } else {
      throw ConfigError("bad ensemble '" + s +
                        "' in distill (want adaptive or uniform)");
    }
  }
  read_field(obj, "temperature", cfg.temperature);
  if (auto it = obj.find("augment"); it != obj.end()) {
    check_keys(*it, "augment",
               {"brightness", "contrast", "saturation", "blur_sigma_min",
                "blur_sigma_max"});
    read_field(*it, "brightness", cfg.augment.brightness);
    read_field(*it, "contrast", cfg.augment.contrast);
    read_field(*it, "saturation", cfg.augment.saturation);
    read_field(*it, "blur_sigma_min", cfg.augment.blur_sigma_min);
    read_field(*it, "blur_sigma_max", cfg.augment.blur_sigma_max);
  }
  read_field(obj, "steps", cfg.steps);
  read_field(obj, "batch_size", cfg.batch_size);
}

void parse_domain(const json& obj, DomainSpec& spec) {
  check_keys(obj, "domain",
             {"role", "count", "eval_count", "palette", "context_rule",
              "class_frequencies", "noise"});
  if (auto it = obj.find("role"); it != obj.end()) {
    const std::string s = it->get<std::string>();
    if (s == "source") {
      spec.role = DomainSpec::Role::kSource;
    } else if (s == "target") {
      spec.role = DomainSpec::Role::kTarget;
    } else {
      throw ConfigError("bad role '" + s + "' (want source or target)");
    }
  } else {
    throw ConfigError("domain entry is missing 'role'");
  }
  read_field(obj, "count", spec.count);
  read_field(obj, "eval_count", spec.eval_count);
  read_field(obj, "palette", spec.palette);
  read_field(obj, "context_rule", spec.context_rule);
  read_field(obj, "class_frequencies", spec.class_frequencies);
  read_field(obj, "noise", spec.noise);
}

void parse_data(const json& obj, BenchmarkConfig& cfg) {
  check_keys(obj, "data", {"image_size", "num_classes", "seed", "domains"});
  read_field(obj, "image_size", cfg.image_size);
  read_field(obj, "num_classes", cfg.num_classes);
  read_field(obj, "seed", cfg.seed);
  if (auto it = obj.find("domains"); it != obj.end()) {
    cfg.domains.clear();
    for (const json& d : *it) {
      DomainSpec spec;
      parse_domain(d, spec);
      cfg.domains.push_back(std::move(spec));
    }
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig cfg;
  try {
    check_keys(root, "config",
               {"seed", "rounds", "region_path", "class_path", "distill",
                "optim", "data"});
    read_field(root, "seed", cfg.plan.seed);
    read_field(root, "rounds", cfg.plan.rounds);
    if (auto it = root.find("region_path"); it != root.end()) {
      parse_path(*it, "region_path", cfg.plan.region_path);
    }
    if (auto it = root.find("class_path"); it != root.end()) {
      parse_path(*it, "class_path", cfg.plan.class_path);
    }
    if (auto it = root.find("distill"); it != root.end()) {
      parse_distill(*it, cfg.plan.distill);
    }
    if (auto it = root.find("optim"); it != root.end()) {
      check_keys(*it, "optim",
                 {"lr_head", "lr_extractor", "beta1", "beta2", "eps",
                  "weight_decay"});
      read_field(*it, "lr_head", cfg.optim.lr_head);
      read_field(*it, "lr_extractor", cfg.optim.lr_extractor);
      read_field(*it, "beta1", cfg.optim.beta1);
      read_field(*it, "beta2", cfg.optim.beta2);
      read_field(*it, "eps", cfg.optim.eps);
      read_field(*it, "weight_decay", cfg.optim.weight_decay);
    }
    if (auto it = root.find("data"); it != root.end()) {
      parse_data(*it, cfg.data);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }

  if (cfg.plan.rounds < 1) throw ConfigError("rounds must be >= 1");
  for (const PathConfig* p : {&cfg.plan.region_path, &cfg.plan.class_path}) {
    if (p->steps < 0 || p->batch_size < 1) {
      throw ConfigError("path steps/batch_size out of range");
    }
  }
  if (cfg.plan.distill.steps < 0 || cfg.plan.distill.batch_size < 1) {
    throw ConfigError("distill steps/batch_size out of range");
  }
  if (cfg.plan.distill.temperature <= 0.0) {
    throw ConfigError("temperature must be positive");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_json(const RunConfig& cfg) {
  auto path_json = [](const PathConfig& p) {
    return json{{"kind", p.kind == MixKind::kRegion ? "region" : "class"},
                {"area_ratio", p.area_ratio},
                {"tau", p.tau},
                {"alpha", p.alpha},
                {"steps", p.steps},
                {"batch_size", p.batch_size}};
  };
  json root;
  root["seed"] = cfg.plan.seed;
  root["rounds"] = cfg.plan.rounds;
  root["region_path"] = path_json(cfg.plan.region_path);
  root["class_path"] = path_json(cfg.plan.class_path);
  const DistillConfig& d = cfg.plan.distill;
  root["distill"] = {
      {"mode", d.mode == DistillConfig::Mode::kHard ? "hard" : "soft"},
      {"ensemble",
       d.ensemble == DistillConfig::Ensemble::kAdaptive ? "adaptive"
                                                        : "uniform"},
      {"temperature", d.temperature},
      {"augment",
       {{"brightness", d.augment.brightness},
        {"contrast", d.augment.contrast},
        {"saturation", d.augment.saturation},
        {"blur_sigma_min", d.augment.blur_sigma_min},
        {"blur_sigma_max", d.augment.blur_sigma_max}}},
      {"steps", d.steps},
      {"batch_size", d.batch_size}};
  root["optim"] = {{"lr_head", cfg.optim.lr_head},
                   {"lr_extractor", cfg.optim.lr_extractor},
                   {"beta1", cfg.optim.beta1},
                   {"beta2", cfg.optim.beta2},
                   {"eps", cfg.optim.eps},
                   {"weight_decay", cfg.optim.weight_decay}};
  root["data"]["image_size"] = cfg.data.image_size;
  root["data"]["num_classes"] = cfg.data.num_classes;
  root["data"]["seed"] = cfg.data.seed;
  root["data"]["domains"] = json::array();
  for (const DomainSpec& s : cfg.data.domains) {
    root["data"]["domains"].push_back(
        {{"role", s.role == DomainSpec::Role::kSource ? "source" : "target"},
         {"count", s.count},
         {"eval_count", s.eval_count},
         {"palette", s.palette},
         {"context_rule", s.context_rule},
         {"class_frequencies", s.class_frequencies},
         {"noise", s.noise}});
  }
  return root.dump(2) + "\n";
}

}  // namespace ddb
