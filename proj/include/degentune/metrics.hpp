#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/dataset.hpp"
#include "degentune/diffusion.hpp"
#include "degentune/freq.hpp"
#include "degentune/parallel.hpp"
#include "degentune/train.hpp"

namespace dgt {

/// The trained classifier plus the identifying metadata every report quotes.
/// All FID/IS numbers from this harness are proxies over these features and
/// are only comparable when the fingerprint matches.
struct FeatureExtractor {
  ConceptClassifier net;
  std::string fingerprint;
  double holdout_accuracy = 0.0;

  int feature_dim() const { return net.config().feature_dim; }
  int num_classes() const { return net.config().num_classes; }
};

inline FeatureExtractor make_extractor(TrainedClassifier trained) {
  FeatureExtractor fx{std::move(trained.net), "", trained.holdout_accuracy};
  fx.fingerprint = classifier_fingerprint(fx.net);
  return fx;
}

inline FeatureExtractor load_extractor(const std::string& dir) {
  FeatureExtractor fx{load_classifier(dir), "", 0.0};
  fx.fingerprint = classifier_fingerprint(fx.net);
  const json meta = json::parse(detail::read_text_file(std::filesystem::path(dir) / "meta.json"));
  fx.holdout_accuracy = meta.at("train_meta").value("holdout_accuracy", 0.0);
  return fx;
}

/// Penultimate features of a batch, row per image. Parallel-safe.
inline Tensor extract_features(const FeatureExtractor& fx, const std::vector<Image>& images,
                               int workers = 1) {
  Tensor out({static_cast<int>(images.size()), fx.feature_dim()});
  parallel_for(images.size(), workers, [&](std::size_t i) {
    Tensor f;
    fx.net.predict(images[i], &f, nullptr);
    for (int j = 0; j < fx.feature_dim(); ++j)
      out.at2(static_cast<int>(i), j) = f.data[static_cast<std::size_t>(j)];
  });
  return out;
}

/// Class probabilities of a batch, row per image.
inline Tensor class_probs(const FeatureExtractor& fx, const std::vector<Image>& images,
                          int workers = 1) {
  Tensor out({static_cast<int>(images.size()), fx.num_classes()});
  parallel_for(images.size(), workers, [&](std::size_t i) {
    Tensor p;
    fx.net.predict(images[i], nullptr, &p);
    for (int j = 0; j < fx.num_classes(); ++j)
      out.at2(static_cast<int>(i), j) = p.data[static_cast<std::size_t>(j)];
  });
  return out;
}

namespace detail {

using EigMat = Eigen::MatrixXd;
using EigVec = Eigen::VectorXd;

inline void gaussian_fit(const Tensor& feats, EigVec& mu, EigMat& cov) {
  const int n = feats.dim(0), d = feats.dim(1);
  mu = EigVec::Zero(d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mu(j) += feats.at2(i, j);
  mu /= static_cast<double>(n);
  cov = EigMat::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    EigVec x(d);
    for (int j = 0; j < d; ++j) x(j) = feats.at2(i, j) - mu(j);
    cov.noalias() += x * x.transpose();
  }
  cov /= static_cast<double>(n - 1);
}

/// Symmetric PSD square root by eigendecomposition; negative eigenvalues
/// clamped to zero.
inline EigMat psd_sqrt(const EigMat& m) {
  Eigen::SelfAdjointEigenSolver<EigMat> eig(m);
  EigVec vals = eig.eigenvalues();
  for (int i = 0; i < vals.size(); ++i) vals(i) = vals(i) > 0.0 ? std::sqrt(vals(i)) : 0.0;
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

inline double frechet_distance(const EigVec& mu1, const EigMat& cov1,
                               const EigVec& mu2, const EigMat& cov2) {
  const int d = static_cast<int>(mu1.size());
  const EigMat reg = 1e-6 * EigMat::Identity(d, d);
  const EigMat s1 = cov1 + reg;
  const EigMat s2 = cov2 + reg;
  const EigMat s1h = psd_sqrt(s1);
  const EigMat inner = s1h * s2 * s1h;
  Eigen::SelfAdjointEigenSolver<EigMat> eig(inner);
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) {
    const double v = eig.eigenvalues()(i);
    if (v > 0.0) tr_sqrt += std::sqrt(v);
  }
  const double dmu = (mu1 - mu2).squaredNorm();
  const double val = dmu + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return val > 0.0 ? val : 0.0;
}

/// Deterministic argument ordering so fid(a,b) and fid(b,a) evaluate the
/// identical expression.
inline bool feats_ordered(const Tensor& a, const Tensor& b) {
  if (a.dim(0) != b.dim(0)) return a.dim(0) < b.dim(0);
  return !std::lexicographical_compare(b.data.begin(), b.data.end(), a.data.begin(),
                                       a.data.end());
}

}  // namespace detail

/// Frechet distance between Gaussian fits of two feature sets:
/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}).
inline double fid_proxy(const Tensor& features_a, const Tensor& features_b) {
  if (features_a.ndim() != 2 || features_b.ndim() != 2 ||
      features_a.dim(1) != features_b.dim(1))
    throw ValidationError("fid_proxy: feature matrices must be {n,d} with equal d");
  if (features_a.dim(0) < 2 || features_b.dim(0) < 2)
    throw InsufficientSamplesError("fid_proxy: need at least 2 samples per side");
  const Tensor& x = detail::feats_ordered(features_a, features_b) ? features_a : features_b;
  const Tensor& y = detail::feats_ordered(features_a, features_b) ? features_b : features_a;
  detail::EigVec mu1, mu2;
  detail::EigMat c1, c2;
  detail::gaussian_fit(x, mu1, c1);
  detail::gaussian_fit(y, mu2, c2);
  return detail::frechet_distance(mu1, c1, mu2, c2);
}

/// Inception-style score over probability rows: exp(E_x KL(p(y|x) || p(y))).
inline double is_proxy(const Tensor& probs) {
  if (probs.ndim() != 2 || probs.dim(0) < 1)
    throw ValidationError("is_proxy: expected {n,K} probabilities");
  const int n = probs.dim(0), k = probs.dim(1);
  std::vector<double> marginal(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) {
      const double p = probs.at2(i, j);
      if (p < -1e-12) throw ValidationError("is_proxy: negative probability");
      row += p;
    }
    if (std::abs(row - 1.0) > 1e-6)
      throw ValidationError("is_proxy: row " + std::to_string(i) + " does not sum to 1");
    for (int j = 0; j < k; ++j) marginal[static_cast<std::size_t>(j)] += probs.at2(i, j) / n;
  }
  double mean_kl = 0.0;
  for (int i = 0; i < n; ++i) {
    double kl = 0.0;
    for (int j = 0; j < k; ++j) {
      const double p = probs.at2(i, j);
      if (p > 0.0) kl += p * std::log(p / std::max(marginal[static_cast<std::size_t>(j)], 1e-300));
    }
    mean_kl += kl / n;
  }
  return std::exp(mean_kl);
}

/// Fraction of images argmax-classified as the concept.
inline double concept_detection_rate(const std::vector<Image>& images, int concept_id,
                                     const FeatureExtractor& fx, int workers = 1) {
  if (images.empty())
    throw ValidationError("concept_detection_rate: empty image set");
  std::vector<char> hits(images.size(), 0);
  parallel_for(images.size(), workers, [&](std::size_t i) {
    hits[i] = fx.net.argmax_class(images[i]) == concept_id ? 1 : 0;
  });
  double s = 0.0;
  for (char h : hits) s += h;
  return s / static_cast<double>(images.size());
}

/// Mean classifier entropy (nats) over a set; anchors should sit above
/// concept-conditioned samples.
inline double mean_class_entropy(const std::vector<Image>& images,
                                 const FeatureExtractor& fx, int workers = 1) {
  if (images.empty()) throw ValidationError("mean_class_entropy: empty image set");
  const Tensor probs = class_probs(fx, images, workers);
  double total = 0.0;
  for (int i = 0; i < probs.dim(0); ++i)
    for (int j = 0; j < probs.dim(1); ++j) {
      const double p = probs.at2(i, j);
      if (p > 0.0) total -= p * std::log(p);
    }
  return total / static_cast<double>(probs.dim(0));
}

// ---------------------------------------------------------------------------
// Shield / retention report
// ---------------------------------------------------------------------------

struct ConceptMetricsRow {
  int concept_id = 0;
  std::string label;
  double fid_proxy_concept = 0.0;  // post-DT samples vs pre-DT concept distribution
  double is_proxy = 0.0;
  double detection_rate = 0.0;
};

struct RetentionRow {
  std::string which;  // "pre" or "post"
  double fid_proxy_general = 0.0;  // vs base-dataset reference features
  double is_proxy_general = 0.0;
};

struct MetricsReport {
  std::vector<ConceptMetricsRow> concept_rows;
  std::vector<RetentionRow> retention_rows;
  std::string extractor_fingerprint;
  int n_per_cell = 0;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& r : concept_rows) {
      if (r.fid_proxy_concept < 0.0) throw RuntimeError("report: negative FID");
      if (r.is_proxy < 1.0 - 0.05) throw RuntimeError("report: IS below 1");
    }
    for (const auto& r : retention_rows) {
      if (r.fid_proxy_general < 0.0) throw RuntimeError("report: negative FID");
      if (r.is_proxy_general < 1.0 - 0.05) throw RuntimeError("report: IS below 1");
    }
  }
};

inline void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out << "row,concept_id,label,fid_proxy,is_proxy,detection_rate,extractor,n,seed\n";
  for (const auto& r : report.concept_rows)
    out << "concept," << r.concept_id << "," << r.label << "," << r.fid_proxy_concept << ","
        << r.is_proxy << "," << r.detection_rate << "," << report.extractor_fingerprint
        << "," << report.n_per_cell << "," << report.seed << "\n";
  for (const auto& r : report.retention_rows)
    out << "retention_" << r.which << ",,," << r.fid_proxy_general << ","
        << r.is_proxy_general << ",," << report.extractor_fingerprint << ","
        << report.n_per_cell << "," << report.seed << "\n";
}

struct ShieldOptions {
  int n_per_cell = 512;
  GenOptions gen;
  int workers = 1;
};

namespace detail {

inline std::vector<Image> gen_cycling(const ModelCheckpoint& ckpt,
                                      const std::vector<int>& concept_ids, int n,
                                      std::uint64_t seed, const GenOptions& gen,
                                      int workers) {
  std::vector<Image> out(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
    const int cid = concept_ids[i % concept_ids.size()];
    SampleOptions opt;
    opt.sampler = gen.sampler;
    opt.steps = gen.steps;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    out[i] = sample(ckpt, cfg_guidance(Condition::for_concept(cid), gen.guidance_lambda), opt).image;
  });
  return out;
}

inline std::vector<Image> gen_concept_parallel(const ModelCheckpoint& ckpt, int cid, int n,
                                               std::uint64_t seed, const GenOptions& gen,
                                               int workers) {
  std::vector<Image> out(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
    SampleOptions opt;
    opt.sampler = gen.sampler;
    opt.steps = gen.steps;
    opt.seed = seed + static_cast<std::uint64_t>(i);
    out[i] = sample(ckpt, cfg_guidance(Condition::for_concept(cid), gen.guidance_lambda), opt).image;
  });
  return out;
}

}  // namespace detail

/// Table-style shield/retention evaluation. Per shielded concept: FID-proxy
/// of post-DT samples against the pre-DT concept distribution (the paper's
/// target-distribution convention), IS-proxy and detection rate of the post
/// samples. Retention: both models scored against reference features from
/// the base dataset restricted to non-shielded concepts.
inline MetricsReport shield_report(const ModelCheckpoint& ckpt_pre,
                                   const ModelCheckpoint& ckpt_post,
                                   const std::vector<int>& shielded,
                                   const std::vector<int>& general,
                                   const std::vector<std::pair<Image, Condition>>& reference_items,
                                   const FeatureExtractor& fx, std::uint64_t seed,
                                   const ShieldOptions& opt = {}) {
  for (int c : shielded) {
    if (!ckpt_pre.has_concept(c) || !ckpt_post.has_concept(c)) throw UnknownConceptError(c);
  }
  for (int c : general)
    if (!ckpt_pre.has_concept(c)) throw UnknownConceptError(c);
  if (general.empty()) throw ValidationError("shield_report: need general concepts");

  MetricsReport report;
  report.extractor_fingerprint = fx.fingerprint;
  report.n_per_cell = opt.n_per_cell;
  report.seed = seed;

  int cell = 0;
  for (int c : shielded) {
    const std::uint64_t cell_seed = mix_seed(seed, seed_tag::kInitNoise, static_cast<std::uint64_t>(cell++));
    const auto pre_imgs = detail::gen_concept_parallel(ckpt_pre, c, opt.n_per_cell, cell_seed,
                                                       opt.gen, opt.workers);
    const auto post_imgs = detail::gen_concept_parallel(ckpt_post, c, opt.n_per_cell, cell_seed,
                                                        opt.gen, opt.workers);
    ConceptMetricsRow row;
    row.concept_id = c;
    for (const auto& e : ckpt_pre.concepts())
      if (e.id == c) row.label = e.label;
    row.fid_proxy_concept = fid_proxy(extract_features(fx, pre_imgs, opt.workers),
                                      extract_features(fx, post_imgs, opt.workers));
    row.is_proxy = is_proxy(class_probs(fx, post_imgs, opt.workers));
    row.detection_rate = concept_detection_rate(post_imgs, c, fx, opt.workers);
    report.concept_rows.push_back(std::move(row));
  }

  // retention cells: fixed reference features from the base dataset
  std::vector<Image> ref_imgs;
  for (const auto& it : reference_items) {
    if (it.second.is_none()) continue;
    if (std::find(general.begin(), general.end(), it.second.concept_id()) != general.end())
      ref_imgs.push_back(it.first);
  }
  if (ref_imgs.size() < 2)
    throw InsufficientSamplesError("shield_report: reference items lack general concepts");
  const Tensor ref_feats = extract_features(fx, ref_imgs, opt.workers);

  const std::uint64_t ret_seed = mix_seed(seed, seed_tag::kInitNoise, 0x5252);
  const auto pre_gen = detail::gen_cycling(ckpt_pre, general, opt.n_per_cell, ret_seed,
                                           opt.gen, opt.workers);
  const auto post_gen = detail::gen_cycling(ckpt_post, general, opt.n_per_cell, ret_seed,
                                            opt.gen, opt.workers);
  RetentionRow pre_row{"pre", fid_proxy(ref_feats, extract_features(fx, pre_gen, opt.workers)),
                       is_proxy(class_probs(fx, pre_gen, opt.workers))};
  RetentionRow post_row{"post", fid_proxy(ref_feats, extract_features(fx, post_gen, opt.workers)),
                        is_proxy(class_probs(fx, post_gen, opt.workers))};
  report.retention_rows.push_back(std::move(pre_row));
  report.retention_rows.push_back(std::move(post_row));
  report.validate();
  return report;
}

// ---------------------------------------------------------------------------
// Negative-prompt failure probe
// ---------------------------------------------------------------------------

struct NpProbeRow {
  double lambda = 0.0;
  double detection_rate = 0.0;
};

/// Samples with positive == negative == concept across lambda values. The
/// guidance identity makes outputs bitwise independent of lambda, so every
/// row reports the unguided conditional detection rate.
inline std::vector<NpProbeRow> np_failure_probe(const ModelCheckpoint& ckpt, int concept_id,
                                                const std::vector<double>& lambdas, int n,
                                                std::uint64_t seed, const FeatureExtractor& fx,
                                                const GenOptions& gen = {}, int workers = 1) {
  if (!ckpt.has_concept(concept_id)) throw UnknownConceptError(concept_id);
  std::vector<NpProbeRow> rows;
  for (const double lambda : lambdas) {
    std::vector<Image> imgs(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
      GuidanceConfig g;
      g.positive = Condition::for_concept(concept_id);
      g.negative = Condition::for_concept(concept_id);
      g.lambda_np = lambda;
      SampleOptions opt;
      opt.sampler = gen.sampler;
      opt.steps = gen.steps;
      opt.seed = seed + static_cast<std::uint64_t>(i);
      imgs[i] = sample(ckpt, g, opt).image;
    });
    rows.push_back({lambda, concept_detection_rate(imgs, concept_id, fx, workers)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Initial-noise perturbation experiment
// ---------------------------------------------------------------------------

enum class PerturbMode { kValuePreserving, kDistributionPreserving };

inline std::string to_string(PerturbMode m) {
  return m == PerturbMode::kValuePreserving ? "value_preserving" : "distribution_preserving";
}

/// x_T' = gamma * eps + eta * eps0 with either gamma + eta = 1 (value
/// preserving) or gamma^2 + eta^2 = 1 (distribution preserving).
struct PerturbationSpec {
  double gamma = 1.0;
  double eta = 0.0;
  PerturbMode mode = PerturbMode::kValuePreserving;
  std::uint64_t base_seed = 0;

  void validate() const {
    const double c = mode == PerturbMode::kValuePreserving ? gamma + eta
                                                           : gamma * gamma + eta * eta;
    if (std::abs(c - 1.0) > 1e-9)
      throw ValidationError("PerturbationSpec: mode constraint violated");
  }
};

inline PerturbationSpec value_preserving_spec(double a, std::uint64_t base_seed) {
  return {1.0 - a, a, PerturbMode::kValuePreserving, base_seed};
}

inline PerturbationSpec distribution_preserving_spec(double a, std::uint64_t base_seed) {
  return {std::sqrt(1.0 - a * a), a, PerturbMode::kDistributionPreserving, base_seed};
}

struct PerturbRow {
  double gamma = 0.0;
  double eta = 0.0;
  PerturbMode mode = PerturbMode::kValuePreserving;
  double mean_feature_drift = 0.0;
  double label_flip_rate = 0.0;
};

/// For each spec, generates None-condition image pairs from x_T = eps and
/// x_T' = gamma*eps + eta*eps0 (same eps per seed) and measures feature
/// drift and label flips.
inline std::vector<PerturbRow> perturb_experiment(const ModelCheckpoint& ckpt,
                                                  const std::vector<PerturbationSpec>& specs,
                                                  int n_seeds, const FeatureExtractor& fx,
                                                  const GenOptions& gen = {}, int workers = 1) {
  for (const auto& s : specs) s.validate();
  const auto& cfg = ckpt.unet().config();
  const std::vector<int> shape = {cfg.image_channels, cfg.image_size, cfg.image_size};

  std::vector<PerturbRow> rows;
  for (const auto& spec : specs) {
    std::vector<double> drift(static_cast<std::size_t>(n_seeds), 0.0);
    std::vector<char> flip(static_cast<std::size_t>(n_seeds), 0);
    parallel_for(static_cast<std::size_t>(n_seeds), workers, [&](std::size_t i) {
      const std::uint64_t s = spec.base_seed + static_cast<std::uint64_t>(i);
      SampleOptions opt;
      opt.sampler = gen.sampler;
      opt.steps = gen.steps;
      opt.seed = s;
      const Image eps = gaussian_image(shape, mix_seed(s, seed_tag::kInitNoise));
      const Image eps0 = gaussian_image(shape, mix_seed(s, seed_tag::kPerturb));
      Image mixed = eps;
      for (std::size_t j = 0; j < mixed.data.size(); ++j)
        mixed.data[j] = spec.gamma * eps.data[j] + spec.eta * eps0.data[j];
      const GuidanceConfig g = plain_guidance(Condition::none());
      const Image base_img =
          sample_from_noise(CheckpointModel{&ckpt}, ckpt.schedule(), g, eps, opt).image;
      const Image pert_img =
          sample_from_noise(CheckpointModel{&ckpt}, ckpt.schedule(), g, mixed, opt).image;
      Tensor fa, fb, pa, pb;
      fx.net.predict(base_img, &fa, &pa);
      fx.net.predict(pert_img, &fb, &pb);
      double d2 = 0.0;
      for (std::size_t j = 0; j < fa.data.size(); ++j) {
        const double d = fa.data[j] - fb.data[j];
        d2 += d * d;
      }
      drift[i] = std::sqrt(d2);
      int la = 0, lb = 0;
      for (int j = 1; j < pa.dim(1); ++j) {
        if (pa.data[static_cast<std::size_t>(j)] > pa.data[static_cast<std::size_t>(la)]) la = j;
        if (pb.data[static_cast<std::size_t>(j)] > pb.data[static_cast<std::size_t>(lb)]) lb = j;
      }
      flip[i] = la != lb ? 1 : 0;
    });
    PerturbRow row;
    row.gamma = spec.gamma;
    row.eta = spec.eta;
    row.mode = spec.mode;
    for (int i = 0; i < n_seeds; ++i) {
      row.mean_feature_drift += drift[static_cast<std::size_t>(i)] / n_seeds;
      row.label_flip_rate += flip[static_cast<std::size_t>(i)] / static_cast<double>(n_seeds);
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_perturb_csv(const std::vector<PerturbRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out << "mode,gamma,eta,mean_feature_drift,label_flip_rate\n";
  for (const auto& r : rows)
    out << to_string(r.mode) << "," << r.gamma << "," << r.eta << ","
        << r.mean_feature_drift << "," << r.label_flip_rate << "\n";
}

// ---------------------------------------------------------------------------
// Frequency trajectory analysis
// ---------------------------------------------------------------------------

struct FreqTrajectoryPoint {
  int t = 0;
  double progress = 0.0;  // normalized step, 0 at the start of the pass
  double low_corr = 0.0;
  double high_corr = 0.0;
};

struct FreqTrajectory {
  std::vector<FreqTrajectoryPoint> generation;
  std::vector<FreqTrajectoryPoint> diffusion;
  // first normalized step where band correlation with the endpoint image
  // reaches (generation) or drops below (diffusion) 0.9
  double gen_cross_low = 1.0, gen_cross_high = 1.0;
  double diff_cross_low = 1.0, diff_cross_high = 1.0;
};

/// Runs one recorded generation pass and its mirrored diffusion pass, and
/// reports per-band correlations with the endpoint image. In generation the
/// low band should lock in earlier than the high band; in diffusion it
/// should be the last to decay.
inline FreqTrajectory freq_trajectory(const ModelCheckpoint& ckpt, const Condition& cond,
                                      std::uint64_t seed, double cutoff,
                                      const GenOptions& gen = {}, int record_stride = 2,
                                      double corr_threshold = 0.9) {
  SampleOptions opt;
  opt.sampler = gen.sampler;
  opt.steps = gen.steps;
  opt.seed = seed;
  opt.record = true;
  opt.record_stride = record_stride;
  const GuidanceConfig g = cond.is_none()
                               ? plain_guidance(cond)
                               : cfg_guidance(cond, gen.guidance_lambda);
  const SampleResult res = sample(ckpt, g, opt);
  const TrajectoryRecord& traj = *res.trajectory;

  FreqTrajectory out;
  const Image& final_img = res.image;
  const BandSplit final_bands = band_split(final_img, cutoff);

  const int steps = opt.steps;
  bool low_done = false, high_done = false;
  for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
    const BandSplit bands = band_split(traj.snapshots[i], cutoff);
    FreqTrajectoryPoint p;
    p.t = traj.timesteps[i];
    // progress from pass start: t goes T..0, completed fraction
    p.progress = 1.0 - static_cast<double>(p.t) / ckpt.schedule().T;
    p.low_corr = pearson(bands.low, final_bands.low);
    p.high_corr = pearson(bands.high, final_bands.high);
    if (!low_done && p.low_corr >= corr_threshold) {
      out.gen_cross_low = static_cast<double>(i) / std::max<std::size_t>(1, traj.snapshots.size() - 1);
      low_done = true;
    }
    if (!high_done && p.high_corr >= corr_threshold) {
      out.gen_cross_high = static_cast<double>(i) / std::max<std::size_t>(1, traj.snapshots.size() - 1);
      high_done = true;
    }
    out.generation.push_back(p);
  }
  (void)steps;

  // mirrored diffusion pass: same recorded t grid, shared forward noise
  const Image eps = gaussian_image(final_img.shape, mix_seed(seed, seed_tag::kStepNoise));
  std::vector<int> ts(traj.timesteps.rbegin(), traj.timesteps.rend());  // 0..T
  bool low_decayed = false, high_decayed = false;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const Image x_t = forward_diffuse(final_img, ts[i], eps, ckpt.schedule());
    const BandSplit bands = band_split(x_t, cutoff);
    FreqTrajectoryPoint p;
    p.t = ts[i];
    p.progress = static_cast<double>(ts[i]) / ckpt.schedule().T;
    p.low_corr = pearson(bands.low, final_bands.low);
    p.high_corr = pearson(bands.high, final_bands.high);
    if (!low_decayed && p.low_corr < corr_threshold) {
      out.diff_cross_low = static_cast<double>(i) / std::max<std::size_t>(1, ts.size() - 1);
      low_decayed = true;
    }
    if (!high_decayed && p.high_corr < corr_threshold) {
      out.diff_cross_high = static_cast<double>(i) / std::max<std::size_t>(1, ts.size() - 1);
      high_decayed = true;
    }
    out.diffusion.push_back(p);
  }
  return out;
}

inline void write_freq_csv(const FreqTrajectory& ft, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out << "direction,t,progress,low_corr,high_corr\n";
  for (const auto& p : ft.generation)
    out << "generation," << p.t << "," << p.progress << "," << p.low_corr << ","
        << p.high_corr << "\n";
  for (const auto& p : ft.diffusion)
    out << "diffusion," << p.t << "," << p.progress << "," << p.low_corr << ","
        << p.high_corr << "\n";
}

}  // namespace dgt
