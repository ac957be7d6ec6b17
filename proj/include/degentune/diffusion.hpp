#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/condition.hpp"
#include "degentune/errors.hpp"
#include "degentune/rng.hpp"
#include "degentune/schedule.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

/// Anything that predicts noise from (x_t, t, condition). The trained U-Net
/// satisfies this; tests plug in analytic toy models.
template <class M>
concept EpsModel = requires(const M& m, const Image& x, int t, const Condition& c) {
  { m.eps(x, t, c) } -> std::convertible_to<Image>;
};

/// Adapter giving checkpoints the EpsModel surface with the contract checks
/// (timestep range, registered condition) applied.
struct CheckpointModel {
  const ModelCheckpoint* ckpt;

  Image eps(const Image& x_t, int t, const Condition& cond) const {
    if (t < 1 || t > ckpt->schedule().T)
      throw ValidationError("eps_predict: t out of [1,T]");
    ckpt->require_condition(cond);
    // forward-only evaluation; build_eps with train=false never writes
    return const_cast<UNet&>(ckpt->unet()).eps(x_t, t, cond);
  }
};

/// Conditional noise prediction from a checkpoint. Pure in (params, x_t, t,
/// cond): identical inputs give bitwise-identical outputs.
inline Image eps_predict(const ModelCheckpoint& ckpt, const Image& x_t, int t,
                         const Condition& cond) {
  return CheckpointModel{&ckpt}.eps(x_t, t, cond);
}

/// x_t = alpha[t] * x0 + sigma[t] * eps
inline Image forward_diffuse(const Image& x0, int t, const Image& eps,
                             const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_diffuse");
  if (t < 0 || t > sched.T)
    throw ValidationError("forward_diffuse: t out of [0,T]");
  const double a = sched.alpha[static_cast<std::size_t>(t)];
  const double s = sched.sigma[static_cast<std::size_t>(t)];
  Image out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * x0.data[i] + s * eps.data[i];
  return out;
}

/// Guidance settings: eps = eps(c) + lambda * (eps(c) - eps(c_NP)). The
/// classifier-free form is negative = None; no negative at all means plain
/// conditional prediction.
struct GuidanceConfig {
  Condition positive = Condition::none();
  std::optional<Condition> negative;
  double lambda_np = 0.0;

  void validate() const {
    if (!std::isfinite(lambda_np) || lambda_np < 0.0)
      throw ValidationError("GuidanceConfig: lambda_np must be finite and >= 0");
  }
};

inline GuidanceConfig plain_guidance(const Condition& c) {
  GuidanceConfig g;
  g.positive = c;
  return g;
}

inline GuidanceConfig cfg_guidance(const Condition& c, double lambda) {
  GuidanceConfig g;
  g.positive = c;
  g.negative = Condition::none();
  g.lambda_np = lambda;
  return g;
}

/// Negative-prompt guidance rule. When positive == negative the bracket is
/// identically zero, so the plain conditional prediction is returned
/// directly: the outputs are bitwise independent of lambda by construction.
template <class M>
  requires EpsModel<M>
Image guided_eps(const M& model, const Image& x_t, int t, const GuidanceConfig& g) {
  g.validate();
  const Image e_pos = model.eps(x_t, t, g.positive);
  if (!g.negative || *g.negative == g.positive || g.lambda_np == 0.0)
    return e_pos;
  const Image e_neg = model.eps(x_t, t, *g.negative);
  Image out = e_pos;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = e_pos.data[i] + g.lambda_np * (e_pos.data[i] - e_neg.data[i]);
  return out;
}

inline Image guided_eps(const ModelCheckpoint& ckpt, const Image& x_t, int t,
                        const GuidanceConfig& g) {
  return guided_eps(CheckpointModel{&ckpt}, x_t, t, g);
}

enum class TrajectoryDirection { kDiffusion, kGeneration };

/// Recorded x_t snapshots along a diffusion or generation pass (the data
/// behind the frequency-trajectory analysis).
struct TrajectoryRecord {
  std::vector<int> timesteps;
  std::vector<Image> snapshots;
  TrajectoryDirection direction = TrajectoryDirection::kGeneration;
};

enum class SamplerKind { kDdpm, kDdim };

inline SamplerKind sampler_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerKind::kDdpm;
  if (s == "ddim") return SamplerKind::kDdim;
  throw ValidationError("unknown sampler: " + s);
}

struct SampleOptions {
  SamplerKind sampler = SamplerKind::kDdim;
  int steps = 50;
  std::uint64_t seed = 0;
  bool record = false;
  int record_stride = 10;
  std::vector<int> shape = {3, 32, 32};
};

struct SampleResult {
  Image image;
  std::optional<TrajectoryRecord> trajectory;
};

inline Image gaussian_image(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor t(shape);
  GaussRng rng(seed);
  for (double& v : t.data) v = rng.next();
  return t;
}

namespace detail {

/// Decreasing timestep ladder T' = steps points ending at 0:
/// t_k = round(k * T / steps) for k = steps..0.
inline std::vector<int> timestep_ladder(int T, int steps) {
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = steps; k >= 0; --k) {
    const int t = static_cast<int>(std::lround(static_cast<double>(k) * T / steps));
    if (!ts.empty() && ts.back() == t) continue;  // collapse duplicates for steps > T
    ts.push_back(t);
  }
  return ts;
}

}  // namespace detail

/// Reverse-process sampling from externally supplied initial noise.
/// Deterministic given (model params, init noise, options): DDIM uses no
/// further randomness, DDPM draws per-step noise from the seeded stream in
/// step order. The final image is clamped to [-1,1]; recorded intermediate
/// snapshots are raw.
template <class M>
  requires EpsModel<M>
SampleResult sample_from_noise(const M& model, const NoiseSchedule& sched,
                               const GuidanceConfig& g, Image x,
                               const SampleOptions& opt) {
  if (opt.steps < 1) throw ValidationError("sample: steps must be >= 1");
  if (opt.steps > sched.T) throw ValidationError("sample: steps must be <= T");
  g.validate();

  const std::vector<int> ladder = detail::timestep_ladder(sched.T, opt.steps);
  GaussRng step_noise(mix_seed(opt.seed, seed_tag::kStepNoise));

  SampleResult result;
  TrajectoryRecord traj;
  traj.direction = TrajectoryDirection::kGeneration;
  const auto maybe_record = [&](int completed, int t, const Image& snap) {
    if (!opt.record) return;
    const bool last = t == 0;
    if (completed % opt.record_stride == 0 || last) {
      if (!traj.timesteps.empty() && traj.timesteps.back() == t) return;
      traj.timesteps.push_back(t);
      traj.snapshots.push_back(snap);
    }
  };

  maybe_record(0, ladder.front(), x);
  for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
    const int t = ladder[k];
    const int tn = ladder[k + 1];
    const double at = sched.alpha[static_cast<std::size_t>(t)];
    const double st = sched.sigma[static_cast<std::size_t>(t)];
    const double an = sched.alpha[static_cast<std::size_t>(tn)];
    const double sn = sched.sigma[static_cast<std::size_t>(tn)];

    const Image eps_hat = guided_eps(model, x, t, g);

    // the predicted clean image is clamped to the data range each step;
    // without it the 1/alpha factor at high t amplifies prediction bias
    // into runaway low-frequency content
    const auto x0_pred = [&](std::size_t i) {
      const double v = (x.data[i] - st * eps_hat.data[i]) / at;
      return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
    };

    if (opt.sampler == SamplerKind::kDdim) {
      for (std::size_t i = 0; i < x.data.size(); ++i)
        x.data[i] = an * x0_pred(i) + sn * eps_hat.data[i];
    } else {
      // generalized ancestral step over the strided ladder
      const double abar_t = at * at, abar_n = an * an;
      const double beta_eff = 1.0 - abar_t / abar_n;
      const double var_t = 1.0 - abar_t, var_n = 1.0 - abar_n;
      const double coef_x0 = an * beta_eff / var_t;
      const double coef_xt = std::sqrt(abar_t / abar_n) * var_n / var_t;
      const double post_var = var_n / var_t * beta_eff;
      const double post_std = post_var > 0.0 ? std::sqrt(post_var) : 0.0;
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        double v = coef_x0 * x0_pred(i) + coef_xt * x.data[i];
        if (post_std > 0.0) v += post_std * step_noise.next();
        x.data[i] = v;
      }
    }

    if (tn == 0) x = clamp_unit(std::move(x));
    maybe_record(static_cast<int>(k) + 1, tn, x);
  }

  result.image = std::move(x);
  if (opt.record) result.trajectory = std::move(traj);
  return result;
}

/// Seeded sampling: the initial x_T draw comes from the kInitNoise substream
/// of the seed, so DDIM results depend only on (params, guidance, seed).
template <class M>
  requires EpsModel<M>
SampleResult sample(const M& model, const NoiseSchedule& sched,
                    const GuidanceConfig& g, const SampleOptions& opt) {
  Image x = gaussian_image(opt.shape, mix_seed(opt.seed, seed_tag::kInitNoise));
  return sample_from_noise(model, sched, g, std::move(x), opt);
}

inline SampleResult sample(const ModelCheckpoint& ckpt, const GuidanceConfig& g,
                           SampleOptions opt) {
  const auto& cfg = ckpt.unet().config();
  opt.shape = {cfg.image_channels, cfg.image_size, cfg.image_size};
  return sample(CheckpointModel{&ckpt}, ckpt.schedule(), g, opt);
}

/// Monte-Carlo denoising loss: mean over the batch of per-element MSE between
/// the drawn eps and the model prediction at a uniformly drawn t in [1,T].
/// Draws are derived per-sample from (seed, index), reduction is sequential
/// in batch order.
template <class M>
  requires EpsModel<M>
double dm_loss(const M& model,
               const std::vector<std::pair<Image, Condition>>& batch,
               const NoiseSchedule& sched, std::uint64_t seed) {
  if (batch.empty()) throw ValidationError("dm_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    SplitMix64 tdraw(mix_seed(seed, seed_tag::kLossDraw, 2 * i));
    const int t = 1 + static_cast<int>(tdraw.bounded(static_cast<std::uint64_t>(sched.T)));
    const Image eps = gaussian_image(batch[i].first.shape,
                                     mix_seed(seed, seed_tag::kLossDraw, 2 * i + 1));
    const Image x_t = forward_diffuse(batch[i].first, t, eps, sched);
    const Image pred = model.eps(x_t, t, batch[i].second);
    double se = 0.0;
    for (std::size_t j = 0; j < eps.data.size(); ++j) {
      const double d = eps.data[j] - pred.data[j];
      se += d * d;
    }
    total += se / static_cast<double>(eps.numel());
  }
  return total / static_cast<double>(batch.size());
}

inline double dm_loss(const ModelCheckpoint& ckpt,
                      const std::vector<std::pair<Image, Condition>>& batch,
                      const NoiseSchedule& sched, std::uint64_t seed) {
  return dm_loss(CheckpointModel{&ckpt}, batch, sched, seed);
}

}  // namespace dgt
