#include "smk/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "smk/error.hpp"

namespace smk {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  require(j.is_object(), ErrorKind::ContractViolation, "config section '" + section + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : j.items()) {
    require(allowed.count(key) > 0, ErrorKind::ContractViolation,
            "unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

std::filesystem::path resolve(const json& j, const char* key, const std::filesystem::path& base) {
  if (!j.contains(key)) {
    return {};
  }
  std::filesystem::path p(j.at(key).get<std::string>());
  if (p.empty() || p.is_absolute() || base.empty()) {
    return p.lexically_normal();
  }
  return (base / p).lexically_normal();
}

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  descriptors.validate();
  require(finite_nonneg(optim.lr), ErrorKind::ContractViolation, "lr must be finite and >= 0");
  require(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0,
          ErrorKind::ContractViolation, "betas must be in [0, 1)");
  require(std::isfinite(optim.eps) && optim.eps > 0.0, ErrorKind::ContractViolation, "eps must be > 0");
  require(finite_nonneg(optim.weight_decay), ErrorKind::ContractViolation, "weight_decay must be finite and >= 0");
  require(optim.epochs >= 1 && optim.batch_size >= 1, ErrorKind::ContractViolation,
          "epochs and batch_size must be >= 1");
  require(finite_nonneg(init.router_std) && finite_nonneg(init.descriptor_router_std) &&
              finite_nonneg(init.clone_noise),
          ErrorKind::ContractViolation, "init scales must be finite and >= 0");
  require(!synth.looks.empty() && synth.count_per_domain >= 1, ErrorKind::ContractViolation,
          "synth needs at least one looks level and count >= 1");
  for (double l : synth.looks) {
    require(std::isfinite(l) && l > 0.0, ErrorKind::InvalidSpec, "looks must be finite and > 0");
  }
  require(synth.width >= 8 && synth.height >= 8, ErrorKind::InvalidSpec, "synth rasters must be at least 8x8");
}

TrainConfig ExperimentConfig::train_config(std::size_t threads) const {
  TrainConfig tc;
  tc.model = model;
  tc.init = init;
  tc.optim = optim;
  tc.descriptors = descriptors;
  tc.descriptor_mask = descriptor_mask;
  tc.seed = seed;
  tc.threads = threads;
  return tc;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["precision"] = single_precision ? "f32" : "f64";
  j["model"] = {{"experts", model.experts}, {"top_k", model.top_k}, {"channels", model.channels},
                {"hidden", model.hidden},   {"patch", model.patch}, {"classes", model.classes},
                {"layers", model.layers},   {"lambda_bc", model.lambda_bc}};
  j["init"] = {{"router_std", init.router_std},
               {"descriptor_router_std", init.descriptor_router_std},
               {"clone_noise", init.clone_noise}};
  j["optimizer"] = {{"lr", optim.lr},         {"beta1", optim.beta1},
                    {"beta2", optim.beta2},   {"eps", optim.eps},
                    {"weight_decay", optim.weight_decay}, {"epochs", optim.epochs},
                    {"batch_size", optim.batch_size}};
  j["descriptors"] = {{"num_direction_bins", descriptors.num_direction_bins},
                      {"gradient_magnitude_floor", descriptors.gradient_magnitude_floor},
                      {"roughness_rows", descriptors.roughness_rows},
                      {"roughness_cols", descriptors.roughness_cols},
                      {"enl_sigma_floor", descriptors.enl_sigma_floor},
                      {"signed_angles", descriptors.signed_angles},
                      {"mask", {descriptor_mask[0], descriptor_mask[1], descriptor_mask[2]}}};
  j["synth"] = {{"looks", synth.looks},
                {"count", synth.count_per_domain},
                {"width", synth.width},
                {"height", synth.height},
                {"pattern", pattern_name(synth.pattern)}};
  j["paths"] = {{"train_dir", paths.train_dir.string()},
                {"eval_dir", paths.eval_dir.string()},
                {"manifest", paths.manifest.string()},
                {"checkpoint", paths.checkpoint.string()}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    reject_unknown(j, "", {"seed", "precision", "model", "init", "optimizer", "descriptors", "synth", "paths"});
    read(j, "seed", c.seed);
    if (j.contains("precision")) {
      auto p = j.at("precision").get<std::string>();
      require(p == "f32" || p == "f64", ErrorKind::ContractViolation, "precision must be f32 or f64");
      c.single_precision = p == "f32";
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, "model", {"experts", "top_k", "channels", "hidden", "patch", "classes", "layers", "lambda_bc"});
      read(m, "experts", c.model.experts);
      read(m, "top_k", c.model.top_k);
      read(m, "channels", c.model.channels);
      read(m, "hidden", c.model.hidden);
      read(m, "patch", c.model.patch);
      read(m, "classes", c.model.classes);
      read(m, "layers", c.model.layers);
      read(m, "lambda_bc", c.model.lambda_bc);
    }
    if (j.contains("init")) {
      const json& m = j.at("init");
      reject_unknown(m, "init", {"router_std", "descriptor_router_std", "clone_noise"});
      read(m, "router_std", c.init.router_std);
      read(m, "descriptor_router_std", c.init.descriptor_router_std);
      read(m, "clone_noise", c.init.clone_noise);
    }
    if (j.contains("optimizer")) {
      const json& m = j.at("optimizer");
      reject_unknown(m, "optimizer", {"lr", "beta1", "beta2", "eps", "weight_decay", "epochs", "batch_size"});
      read(m, "lr", c.optim.lr);
      read(m, "beta1", c.optim.beta1);
      read(m, "beta2", c.optim.beta2);
      read(m, "eps", c.optim.eps);
      read(m, "weight_decay", c.optim.weight_decay);
      read(m, "epochs", c.optim.epochs);
      read(m, "batch_size", c.optim.batch_size);
    }
    if (j.contains("descriptors")) {
      const json& m = j.at("descriptors");
      reject_unknown(m, "descriptors", {"num_direction_bins", "gradient_magnitude_floor", "roughness_rows",
                                        "roughness_cols", "enl_sigma_floor", "signed_angles", "mask"});
      read(m, "num_direction_bins", c.descriptors.num_direction_bins);
      read(m, "gradient_magnitude_floor", c.descriptors.gradient_magnitude_floor);
      read(m, "roughness_rows", c.descriptors.roughness_rows);
      read(m, "roughness_cols", c.descriptors.roughness_cols);
      read(m, "enl_sigma_floor", c.descriptors.enl_sigma_floor);
      read(m, "signed_angles", c.descriptors.signed_angles);
      read(m, "mask", c.descriptor_mask);
    }
    if (j.contains("synth")) {
      const json& m = j.at("synth");
      reject_unknown(m, "synth", {"looks", "count", "width", "height", "pattern"});
      read(m, "looks", c.synth.looks);
      read(m, "count", c.synth.count_per_domain);
      read(m, "width", c.synth.width);
      read(m, "height", c.synth.height);
      if (m.contains("pattern")) {
        c.synth.pattern = parse_pattern(m.at("pattern").get<std::string>());
      }
    }
    if (j.contains("paths")) {
      const json& m = j.at("paths");
      reject_unknown(m, "paths", {"train_dir", "eval_dir", "manifest", "checkpoint"});
      c.paths.train_dir = resolve(m, "train_dir", base_dir);
      c.paths.eval_dir = resolve(m, "eval_dir", base_dir);
      c.paths.manifest = resolve(m, "manifest", base_dir);
      c.paths.checkpoint = resolve(m, "checkpoint", base_dir);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::ContractViolation, std::string("config: ") + e.what());
  }
  c.synth.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::ContractViolation, "config " + path.string() + ": " + e.what());
  }
  return from_json(j, std::filesystem::absolute(path).parent_path());
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.seed == b.seed && a.single_precision == b.single_precision && a.model == b.model &&
         a.init == b.init && a.optim == b.optim && a.descriptors == b.descriptors &&
         a.descriptor_mask == b.descriptor_mask && a.synth.looks == b.synth.looks &&
         a.synth.count_per_domain == b.synth.count_per_domain && a.synth.width == b.synth.width &&
         a.synth.height == b.synth.height && a.synth.pattern == b.synth.pattern && a.paths == b.paths;
}

}  // namespace smk
