#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/dataset.hpp"
#include "degentune/train.hpp"

namespace dgt {

enum class ModuleSubset { kAll, kCrossAttentionOnly, kResblockOnly };

inline ModuleSubset subset_from_string(const std::string& s) {
  if (s == "all") return ModuleSubset::kAll;
  if (s == "xattn" || s == "cross_attention_only") return ModuleSubset::kCrossAttentionOnly;
  if (s == "resblock" || s == "resblock_only") return ModuleSubset::kResblockOnly;
  throw ValidationError("subset must be all|xattn|resblock, got '" + s + "'");
}

inline std::string to_string(ModuleSubset m) {
  switch (m) {
    case ModuleSubset::kAll: return "all";
    case ModuleSubset::kCrossAttentionOnly: return "xattn";
    case ModuleSubset::kResblockOnly: return "resblock";
  }
  return "all";
}

struct TuneConfig {
  double learning_rate = 1e-6;  // lr_base / 1000
  int epochs = 60;
  int batch_size = 16;
  ModuleSubset module_subset = ModuleSubset::kAll;
  GridSpec grid{4, 4};
  std::uint64_t seed = 0;
  int workers = 1;                  // results are worker-count invariant
  std::string loss_csv;             // written when non-empty: epoch,mean_loss
  std::string divergence_dump_dir;  // last finite checkpoint lands here on NaN

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("tune: learning_rate must be > 0");
    if (epochs < 0) throw ValidationError("tune: epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("tune: batch_size must be >= 1");
  }
};

/// The re-tuning loop: minimizes the denoising loss over the degeneration
/// corpus (scrambled concept images with their concept condition, anchors
/// with None). The input checkpoint is never mutated. Parameters outside the
/// selected module subset stay bitwise identical; the concept embedding
/// table is never tuned here.
inline ModelCheckpoint degeneration_tune(const ModelCheckpoint& input,
                                         const DegenManifest& manifest,
                                         const TuneConfig& cfg) {
  cfg.validate();
  if (manifest.samples.empty())
    throw ValidationError("degeneration_tune: empty manifest");

  ModelCheckpoint ckpt(input);  // deep copy; tuning writes only the copy
  ckpt.train_meta().seeds.push_back(cfg.seed);
  ckpt.train_meta().epochs = cfg.epochs;
  ckpt.train_meta().loss_history.clear();
  if (cfg.epochs == 0) return ckpt;

  const auto items = load_degen_items(manifest);
  for (const auto& it : items) ckpt.require_condition(it.second);

  std::vector<std::string> allowed_groups;
  if (cfg.module_subset == ModuleSubset::kCrossAttentionOnly)
    allowed_groups = {"cross_attention"};
  else if (cfg.module_subset == ModuleSubset::kResblockOnly)
    allowed_groups = {"resblock"};

  Adam opt(ckpt.unet().params(), AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  opt.set_trainable(ckpt.unet().params(), {"cond.table"}, allowed_groups);

  const NoiseSchedule& sched = ckpt.schedule();
  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv);
    if (!csv) throw RuntimeError("cannot write " + cfg.loss_csv);
    csv << "epoch,mean_loss\n";
  }

  ModelCheckpoint last_good(ckpt);
  std::uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(
        items.size(), mix_seed(cfg.seed, seed_tag::kShuffle, static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::pair<Image, Condition>> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(items[order[k]]);
      ckpt.unet().params().zero_grads();
      const double loss = dm_loss_and_grad(
          ckpt.unet(), sched, batch, mix_seed(cfg.seed, seed_tag::kLossDraw, step_counter),
          cfg.workers);
      if (!std::isfinite(loss)) {
        std::string dump = cfg.divergence_dump_dir.empty() ? std::string("diverged_ckpt")
                                                           : cfg.divergence_dump_dir;
        last_good.save(dump);
        throw DivergedError("degeneration_tune: loss diverged at step " +
                                std::to_string(step_counter) +
                                "; last finite checkpoint written to " + dump,
                            dump);
      }
      opt.step(ckpt.unet().params());
      epoch_loss += loss;
      ++batches;
      ++step_counter;
    }
    const double mean_loss = epoch_loss / std::max(1, batches);
    ckpt.train_meta().loss_history.push_back(mean_loss);
    if (csv.is_open()) csv << epoch << "," << mean_loss << "\n";
    last_good = ModelCheckpoint(ckpt);
  }
  return ckpt;
}

struct ContinualStage {
  int concept_id = 0;
  TuneConfig tune;
  int n_sg = 300;
  int n_ac = 400;  // anchors regenerated from the current checkpoint
  std::uint64_t data_seed = 0;
};

struct ContinualPlan {
  std::vector<ContinualStage> stages;
  std::string work_dir;  // per-stage corpora and checkpoints land here
  GenOptions gen;

  void validate() const {
    if (stages.empty()) throw ValidationError("continual plan: no stages");
    for (std::size_t i = 0; i < stages.size(); ++i)
      for (std::size_t j = i + 1; j < stages.size(); ++j)
        if (stages[i].concept_id == stages[j].concept_id)
          throw ValidationError("continual plan: duplicate concept " +
                                std::to_string(stages[i].concept_id));
  }
};

/// Sequential shielding: each stage rebuilds its corpus from the CURRENT
/// checkpoint (anchors included), tunes, and persists the stage checkpoint.
/// A diverging stage aborts with all previous stage outputs preserved.
inline std::vector<ModelCheckpoint> continual_tune(const ModelCheckpoint& start,
                                                   const ContinualPlan& plan) {
  plan.validate();
  namespace fs = std::filesystem;
  fs::create_directories(plan.work_dir);

  std::vector<ModelCheckpoint> out;
  const ModelCheckpoint* current = &start;
  for (std::size_t k = 0; k < plan.stages.size(); ++k) {
    const auto& stage = plan.stages[k];
    const std::string data_dir =
        (fs::path(plan.work_dir) / ("stage" + std::to_string(k) + "_data")).string();
    const std::string ckpt_dir =
        (fs::path(plan.work_dir) / ("stage" + std::to_string(k) + "_ckpt")).string();
    const DegenManifest manifest =
        build_degen_set(*current, stage.concept_id, stage.n_sg, stage.n_ac,
                        stage.tune.grid, stage.data_seed, data_dir, plan.gen);
    TuneConfig tune = stage.tune;
    if (tune.divergence_dump_dir.empty())
      tune.divergence_dump_dir =
          (fs::path(plan.work_dir) / ("stage" + std::to_string(k) + "_diverged")).string();
    ModelCheckpoint next = degeneration_tune(*current, manifest, tune);
    next.save(ckpt_dir);
    out.push_back(std::move(next));
    current = &out.back();
  }
  return out;
}

}  // namespace dgt
