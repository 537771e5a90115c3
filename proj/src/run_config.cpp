#include "sfr/run_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sfr/errors.hpp"

namespace sfr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using FieldSetter = std::function<void(const json&)>;

/// Applies `setters` to the members of `obj`, rejecting unknown keys.
void apply_fields(const json& obj, const std::string& where, const std::map<std::string, FieldSetter>& setters) {
  if (!obj.is_object()) throw ParseError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError(where + ": unknown field '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ParseError(where + "." + key + ": " + e.what());
    }
  }
}

const char* path_name(CovariancePath p) {
  switch (p) {
    case CovariancePath::Auto: return "auto";
    case CovariancePath::ShrinkOnly: return "shrink";
    case CovariancePath::ForceReduce: return "reduce";
  }
  return "auto";
}

}  // namespace

RunConfig run_config_from_json(const std::string& text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base_dir.empty() ? fs::path(p) : base_dir / p; };

  const std::map<std::string, FieldSetter> sampler{
      {"replay_per_class", [&](const json& v) { c.sampler.replay_per_class = v.get<int>(); }},
      {"candidate_pool", [&](const json& v) { c.sampler.candidate_pool = v.get<int>(); }},
      {"beta", [&](const json& v) { c.sampler.beta = v.get<double>(); }},
      {"beta_decay", [&](const json& v) { c.sampler.beta_decay = v.get<double>(); }},
      {"beta_floor", [&](const json& v) { c.sampler.beta_floor = v.get<double>(); }},
      {"max_filter_rounds", [&](const json& v) { c.sampler.max_filter_rounds = v.get<int>(); }},
  };
  const std::map<std::string, FieldSetter> train{
      {"lr", [&](const json& v) { c.train.lr = v.get<double>(); }},
      {"beta1", [&](const json& v) { c.train.beta1 = v.get<double>(); }},
      {"beta2", [&](const json& v) { c.train.beta2 = v.get<double>(); }},
      {"adam_epsilon", [&](const json& v) { c.train.adam_epsilon = v.get<double>(); }},
      {"epochs", [&](const json& v) { c.train.epochs = v.get<int>(); }},
      {"batch_size", [&](const json& v) { c.train.batch_size = v.get<int>(); }},
      {"alpha", [&](const json& v) { c.train.alpha = v.get<int>(); }},
      {"use_bias", [&](const json& v) { c.train.use_bias = v.get<bool>(); }},
  };
  const std::map<std::string, FieldSetter> prototype{
      {"shrinkage", [&](const json& v) { c.prototype.shrinkage = v.get<double>(); }},
      {"rank_tolerance", [&](const json& v) { c.prototype.rank_tolerance = v.get<double>(); }},
      {"diagonal_mahalanobis", [&](const json& v) { c.prototype.diagonal_mahalanobis = v.get<bool>(); }},
      {"covariance_path",
       [&](const json& v) {
         const auto s = v.get<std::string>();
         if (s == "auto") c.prototype.path = CovariancePath::Auto;
         else if (s == "shrink") c.prototype.path = CovariancePath::ShrinkOnly;
         else if (s == "reduce") c.prototype.path = CovariancePath::ForceReduce;
         else throw ValidationError("prototype.covariance_path must be auto, shrink or reduce");
       }},
  };
  const std::map<std::string, FieldSetter> top{
      {"schema_version", [&](const json& v) { c.schema_version = v.get<int>(); }},
      {"dataset", [&](const json& v) { c.dataset = resolve(v.get<std::string>()); }},
      {"output_dir", [&](const json& v) { c.output_dir = resolve(v.get<std::string>()); }},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"trials", [&](const json& v) { c.trials = v.get<int>(); }},
      {"permute_class_order", [&](const json& v) { c.permute_class_order = v.get<bool>(); }},
      {"shots", [&](const json& v) { c.shots = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()); }},
      {"augment", [&](const json& v) { c.augment = v.get<bool>(); }},
      {"augment_target",
       [&](const json& v) { c.augment_target = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()); }},
      {"jobs", [&](const json& v) { c.jobs = v.get<int>(); }},
      {"sweep_sizes", [&](const json& v) { c.sweep_sizes = v.get<std::vector<int>>(); }},
      {"base_classes", [&](const json& v) { c.base_classes = v.get<std::vector<Label>>(); }},
      {"increments", [&](const json& v) { c.increments = v.get<std::vector<std::vector<Label>>>(); }},
      {"sampler", [&](const json& v) { apply_fields(v, "sampler", sampler); }},
      {"train", [&](const json& v) { apply_fields(v, "train", train); }},
      {"prototype", [&](const json& v) { apply_fields(v, "prototype", prototype); }},
  };
  apply_fields(doc, "run config", top);

  if (c.schema_version != kConfigSchemaVersion)
    throw ValidationError("run config: unsupported schema_version " + std::to_string(c.schema_version));
  if (c.dataset.empty()) throw ValidationError("run config: missing field 'dataset'");
  if (c.trials < 1) throw ValidationError("run config: trials must be >= 1");
  if (c.jobs < 1) throw ValidationError("run config: jobs must be >= 1");
  if (c.shots && *c.shots < 1) throw ValidationError("run config: shots must be >= 1");
  if (c.augment_target && *c.augment_target < 1) throw ValidationError("run config: augment_target must be >= 1");
  if (c.base_classes.has_value() != c.increments.has_value())
    throw ValidationError("run config: base_classes and increments must be given together");
  c.sampler.validate();
  c.train.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open run config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str(), path.parent_path());
}

json run_config_to_json(const RunConfig& c) {
  json doc;
  doc["schema_version"] = c.schema_version;
  doc["dataset"] = c.dataset.generic_string();
  doc["seed"] = c.seed;
  doc["trials"] = c.trials;
  doc["permute_class_order"] = c.permute_class_order ? json(*c.permute_class_order) : json(nullptr);
  doc["shots"] = c.shots ? json(*c.shots) : json(nullptr);
  doc["augment"] = c.augment;
  doc["augment_target"] = c.augment_target ? json(*c.augment_target) : json(nullptr);
  doc["sweep_sizes"] = c.sweep_sizes;
  if (c.base_classes) {
    doc["base_classes"] = *c.base_classes;
    doc["increments"] = *c.increments;
  }
  doc["sampler"] = {{"replay_per_class", c.sampler.replay_per_class},
                    {"candidate_pool", c.sampler.candidate_pool},
                    {"beta", c.sampler.beta},
                    {"beta_decay", c.sampler.beta_decay},
                    {"beta_floor", c.sampler.beta_floor},
                    {"max_filter_rounds", c.sampler.max_filter_rounds}};
  doc["train"] = {{"lr", c.train.lr},       {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2}, {"adam_epsilon", c.train.adam_epsilon},
                  {"epochs", c.train.epochs}, {"batch_size", c.train.batch_size},
                  {"alpha", c.train.alpha}, {"use_bias", c.train.use_bias}};
  doc["prototype"] = {{"shrinkage", c.prototype.shrinkage},
                      {"rank_tolerance", c.prototype.rank_tolerance},
                      {"diagonal_mahalanobis", c.prototype.diagonal_mahalanobis},
                      {"covariance_path", path_name(c.prototype.path)}};
  return doc;
}

SessionPlan make_plan(const RunConfig& cfg, const DatasetManifest& manifest, bool few_shot) {
  const bool permute = cfg.permute_class_order.value_or(!few_shot);
  SessionPlan plan = plan_from_manifest(manifest, cfg.seed, cfg.trials, permute);
  if (cfg.base_classes) {
    plan.base_classes = *cfg.base_classes;
    plan.increments = *cfg.increments;
    const auto known = manifest.all_labels();
    auto check = [&](Label l) {
      if (std::find(known.begin(), known.end(), l) == known.end())
        throw ValidationError("run config: class " + std::to_string(l) + " is not in the dataset");
    };
    for (Label l : plan.base_classes) check(l);
    for (const auto& inc : plan.increments)
      for (Label l : inc) check(l);
  }
  if (few_shot) plan.shots = cfg.shots;
  plan.validate();
  return plan;
}

RunOptions make_options(const RunConfig& cfg) {
  RunOptions o;
  o.prototype = cfg.prototype;
  o.augment = cfg.augment;
  o.augment_target = cfg.augment_target;
  o.jobs = cfg.jobs;
  return o;
}

}  // namespace sfr
