#pragma once

#include <json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "degentune/classifier.hpp"
#include "degentune/dataset.hpp"
#include "degentune/diffusion.hpp"
#include "degentune/errors.hpp"
#include "degentune/schedule.hpp"
#include "degentune/scramble.hpp"
#include "degentune/tuner.hpp"
#include "degentune/unet.hpp"

namespace dgt {

/// Fully-resolved run configuration. Defaults follow the desk-scale
/// protocol: 32x32 images, K=6 concepts, T=200 linear-beta schedule, DDIM-50
/// sampling at guidance 3, grid 4x4, tuning at 60 epochs x batch 16 with
/// lr = lr_base / 1000.
struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output_root = "out";

  int schedule_T = 200;
  ScheduleKind schedule_kind = ScheduleKind::kLinearBeta;

  UNetConfig model;  // num_concepts mirrored from dataset below

  int num_concepts = 6;
  int n_per_concept = 500;
  TextureParams texture;

  int base_epochs = 30;
  int base_batch = 16;
  double base_lr = 1e-3;
  double cond_dropout = 0.1;

  ClassifierConfig classifier;
  int classifier_epochs = 8;
  int classifier_batch = 32;
  double classifier_lr = 1e-3;

  double tune_lr_base = 1e-3;  // lr_DT = tune_lr_base / 1000
  int tune_epochs = 60;
  int tune_batch = 16;
  ModuleSubset tune_subset = ModuleSubset::kAll;
  GridSpec grid{4, 4};
  int n_sg = 300;
  int n_ac = 400;

  SamplerKind sampler = SamplerKind::kDdim;
  int sampler_steps = 50;
  double guidance_lambda = 3.0;

  int eval_n_per_cell = 512;
  double band_cutoff = 0.125;

  double tune_lr() const { return tune_lr_base / 1000.0; }

  GenOptions gen_options() const {
    GenOptions g;
    g.sampler = sampler;
    g.steps = sampler_steps;
    g.guidance_lambda = guidance_lambda;
    return g;
  }

  TuneConfig tune_config() const {
    TuneConfig t;
    t.learning_rate = tune_lr();
    t.epochs = tune_epochs;
    t.batch_size = tune_batch;
    t.module_subset = tune_subset;
    t.grid = grid;
    t.seed = seed;
    t.workers = workers;
    return t;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key))
      throw ValidationError("config: unknown key '" + prefix + key + "'");
  }
}

}  // namespace detail

/// Parses and normalizes a config JSON document with strict unknown-key
/// rejection. Every omitted field takes its documented default.
inline RunConfig parse_config(const json& j) {
  RunConfig cfg;
  detail::reject_unknown_keys(
      j,
      {"schema_version", "seed", "workers", "output_root", "schedule", "model",
       "dataset", "base_train", "classifier", "tune", "sampler", "eval"},
      "");
  if (j.contains("schema_version")) {
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1)
      throw ValidationError("config: unsupported schema_version " +
                            std::to_string(cfg.schema_version));
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("workers")) cfg.workers = j.at("workers").get<int>();
  if (cfg.workers < 1) throw ValidationError("config: workers must be >= 1");
  if (j.contains("output_root")) cfg.output_root = j.at("output_root").get<std::string>();

  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    detail::reject_unknown_keys(s, {"T", "kind"}, "schedule.");
    if (s.contains("T")) cfg.schedule_T = s.at("T").get<int>();
    if (cfg.schedule_T < 1) throw ValidationError("config: schedule.T must be >= 1");
    if (s.contains("kind"))
      cfg.schedule_kind = schedule_kind_from_string(s.at("kind").get<std::string>());
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(
        m, {"base_channels", "time_dim", "cond_dim", "gn_groups", "image_size"}, "model.");
    if (m.contains("base_channels")) cfg.model.base_channels = m.at("base_channels").get<int>();
    if (m.contains("time_dim")) cfg.model.time_dim = m.at("time_dim").get<int>();
    if (m.contains("cond_dim")) cfg.model.cond_dim = m.at("cond_dim").get<int>();
    if (m.contains("gn_groups")) cfg.model.gn_groups = m.at("gn_groups").get<int>();
    if (m.contains("image_size")) cfg.model.image_size = m.at("image_size").get<int>();
    if (cfg.model.image_size % 4 != 0)
      throw ValidationError("config: model.image_size must be divisible by 4");
  }

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown_keys(
        d, {"num_concepts", "n_per_concept", "noise_std", "checker_amp"}, "dataset.");
    if (d.contains("num_concepts")) cfg.num_concepts = d.at("num_concepts").get<int>();
    if (cfg.num_concepts < 2 || cfg.num_concepts > 6)
      throw ValidationError("config: dataset.num_concepts must be in [2,6]");
    if (d.contains("n_per_concept")) cfg.n_per_concept = d.at("n_per_concept").get<int>();
    if (cfg.n_per_concept < 1) throw ValidationError("config: dataset.n_per_concept must be >= 1");
    if (d.contains("noise_std")) cfg.texture.noise_std = d.at("noise_std").get<double>();
    if (d.contains("checker_amp")) cfg.texture.checker_amp = d.at("checker_amp").get<double>();
  }

  if (j.contains("base_train")) {
    const auto& b = j.at("base_train");
    detail::reject_unknown_keys(b, {"epochs", "batch", "lr", "cond_dropout"}, "base_train.");
    if (b.contains("epochs")) cfg.base_epochs = b.at("epochs").get<int>();
    if (b.contains("batch")) cfg.base_batch = b.at("batch").get<int>();
    if (b.contains("lr")) cfg.base_lr = b.at("lr").get<double>();
    if (b.contains("cond_dropout")) cfg.cond_dropout = b.at("cond_dropout").get<double>();
    if (cfg.base_epochs < 0) throw ValidationError("config: base_train.epochs must be >= 0");
    if (cfg.base_batch < 1) throw ValidationError("config: base_train.batch must be >= 1");
    if (!(cfg.base_lr > 0)) throw ValidationError("config: base_train.lr must be > 0");
  }

  if (j.contains("classifier")) {
    const auto& c = j.at("classifier");
    detail::reject_unknown_keys(
        c, {"base_channels", "feature_dim", "epochs", "batch", "lr"}, "classifier.");
    if (c.contains("base_channels")) cfg.classifier.base_channels = c.at("base_channels").get<int>();
    if (c.contains("feature_dim")) cfg.classifier.feature_dim = c.at("feature_dim").get<int>();
    if (c.contains("epochs")) cfg.classifier_epochs = c.at("epochs").get<int>();
    if (c.contains("batch")) cfg.classifier_batch = c.at("batch").get<int>();
    if (c.contains("lr")) cfg.classifier_lr = c.at("lr").get<double>();
  }

  if (j.contains("tune")) {
    const auto& t = j.at("tune");
    detail::reject_unknown_keys(
        t, {"lr_base", "lr", "epochs", "batch", "subset", "grid", "n_sg", "n_ac"}, "tune.");
    if (t.contains("lr_base")) cfg.tune_lr_base = t.at("lr_base").get<double>();
    if (t.contains("lr")) cfg.tune_lr_base = t.at("lr").get<double>() * 1000.0;
    if (t.contains("epochs")) cfg.tune_epochs = t.at("epochs").get<int>();
    if (t.contains("batch")) cfg.tune_batch = t.at("batch").get<int>();
    if (t.contains("subset")) cfg.tune_subset = subset_from_string(t.at("subset").get<std::string>());
    if (t.contains("grid")) cfg.grid = parse_grid(t.at("grid").get<std::string>());
    if (t.contains("n_sg")) cfg.n_sg = t.at("n_sg").get<int>();
    if (t.contains("n_ac")) cfg.n_ac = t.at("n_ac").get<int>();
    if (!(cfg.tune_lr_base > 0)) throw ValidationError("config: tune.lr_base must be > 0");
    if (cfg.tune_epochs < 0) throw ValidationError("config: tune.epochs must be >= 0");
    if (cfg.tune_batch < 1) throw ValidationError("config: tune.batch must be >= 1");
    if (cfg.n_sg < 1 || cfg.n_ac < 1)
      throw ValidationError("config: tune.n_sg and tune.n_ac must be >= 1");
  }

  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    detail::reject_unknown_keys(s, {"kind", "steps", "guidance"}, "sampler.");
    if (s.contains("kind")) cfg.sampler = sampler_from_string(s.at("kind").get<std::string>());
    if (s.contains("steps")) cfg.sampler_steps = s.at("steps").get<int>();
    if (s.contains("guidance")) cfg.guidance_lambda = s.at("guidance").get<double>();
    if (cfg.sampler_steps < 1) throw ValidationError("config: sampler.steps must be >= 1");
    if (cfg.sampler_steps > cfg.schedule_T)
      throw ValidationError("config: sampler.steps must be <= schedule.T");
    if (!(cfg.guidance_lambda >= 0))
      throw ValidationError("config: sampler.guidance must be >= 0");
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown_keys(e, {"n_per_cell", "cutoff"}, "eval.");
    if (e.contains("n_per_cell")) cfg.eval_n_per_cell = e.at("n_per_cell").get<int>();
    if (e.contains("cutoff")) cfg.band_cutoff = e.at("cutoff").get<double>();
    if (cfg.eval_n_per_cell < 2) throw ValidationError("config: eval.n_per_cell must be >= 2");
    if (!(cfg.band_cutoff > 0 && cfg.band_cutoff < 1))
      throw ValidationError("config: eval.cutoff must be in (0,1)");
  }

  cfg.model.num_concepts = cfg.num_concepts;
  cfg.classifier.num_classes = cfg.num_concepts;
  cfg.classifier.image_size = cfg.model.image_size;
  cfg.classifier.image_channels = cfg.model.image_channels;
  return cfg;
}

/// Loads and validates a config file. An empty file means all defaults.
inline RunConfig validate_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // strip whitespace to detect an effectively empty file
  std::string stripped;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) stripped += c;
  if (stripped.empty()) return parse_config(json::object());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace dgt
