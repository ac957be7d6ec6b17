#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/metrics.hpp"

namespace dgt {

struct FusionSpec {
  double lambda = 0.5;  // weight on checkpoint_a (the original model)
  const ModelCheckpoint* checkpoint_a = nullptr;
  const ModelCheckpoint* checkpoint_b = nullptr;

  void validate() const {
    if (!checkpoint_a || !checkpoint_b)
      throw ValidationError("fuse: both checkpoints required");
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw ValidationError("fuse: lambda must be in [0,1]");
    if (!checkpoint_a->unet().params().same_layout(checkpoint_b->unet().params()))
      throw IncompatibleCheckpointsError("fuse: tensor names/shapes differ");
  }
};

/// Elementwise convex combination lambda * a + (1 - lambda) * b over every
/// parameter group. Endpoints are copied exactly.
inline ModelCheckpoint fuse(const FusionSpec& spec) {
  spec.validate();
  const ModelCheckpoint& a = *spec.checkpoint_a;
  const ModelCheckpoint& b = *spec.checkpoint_b;

  ModelCheckpoint out(a);
  auto& dst = out.unet().params().entries();
  const auto& ea = a.unet().params().entries();
  const auto& eb = b.unet().params().entries();
  const double lam = spec.lambda;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (lam == 1.0) {
      dst[i].value = ea[i].value;
    } else if (lam == 0.0) {
      dst[i].value = eb[i].value;
    } else {
      for (std::size_t j = 0; j < dst[i].value.data.size(); ++j)
        dst[i].value.data[j] = lam * ea[i].value.data[j] + (1.0 - lam) * eb[i].value.data[j];
    }
  }
  out.train_meta().parent_a = a.fingerprint();
  out.train_meta().parent_b = b.fingerprint();
  out.train_meta().fusion_lambda = lam;
  out.train_meta().loss_history.clear();
  return out;
}

inline ModelCheckpoint fuse(const ModelCheckpoint& a, const ModelCheckpoint& b, double lambda) {
  FusionSpec spec;
  spec.lambda = lambda;
  spec.checkpoint_a = &a;
  spec.checkpoint_b = &b;
  return fuse(spec);
}

struct FusionSweepRow {
  double lambda = 0.0;
  double detection_rate = 0.0;
  double retention_fid = 0.0;
};

/// Detection-rate-vs-lambda curve for fused models, with a retention
/// FID-proxy against base-dataset references on the general concepts.
inline std::vector<FusionSweepRow> fusion_sweep(
    const ModelCheckpoint& theta_ori, const ModelCheckpoint& theta_dt,
    const std::vector<double>& lambdas, int probe_concept,
    const std::vector<int>& general,
    const std::vector<std::pair<Image, Condition>>& reference_items,
    const FeatureExtractor& fx, int n, std::uint64_t seed, const GenOptions& gen = {},
    int workers = 1) {
  for (const double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0))
      throw ValidationError("fusion_sweep: lambda values must be in [0,1]");
  if (!theta_ori.has_concept(probe_concept)) throw UnknownConceptError(probe_concept);

  std::vector<Image> ref_imgs;
  for (const auto& it : reference_items) {
    if (it.second.is_none()) continue;
    if (std::find(general.begin(), general.end(), it.second.concept_id()) != general.end())
      ref_imgs.push_back(it.first);
  }
  if (ref_imgs.size() < 2)
    throw InsufficientSamplesError("fusion_sweep: reference items lack general concepts");
  const Tensor ref_feats = extract_features(fx, ref_imgs, workers);

  std::vector<FusionSweepRow> rows;
  for (const double lam : lambdas) {
    const ModelCheckpoint fused = fuse(theta_ori, theta_dt, lam);
    const auto probe_imgs =
        detail::gen_concept_parallel(fused, probe_concept, n, mix_seed(seed, 1), gen, workers);
    const auto gen_imgs =
        detail::gen_cycling(fused, general, n, mix_seed(seed, 2), gen, workers);
    FusionSweepRow row;
    row.lambda = lam;
    row.detection_rate = concept_detection_rate(probe_imgs, probe_concept, fx, workers);
    row.retention_fid = fid_proxy(ref_feats, extract_features(fx, gen_imgs, workers));
    rows.push_back(row);
  }
  return rows;
}

inline void write_fusion_sweep_csv(const std::vector<FusionSweepRow>& rows,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out << "lambda,detection_rate,retention_fid\n";
  for (const auto& r : rows)
    out << r.lambda << "," << r.detection_rate << "," << r.retention_fid << "\n";
}

}  // namespace dgt
