#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "degentune/checkpoint.hpp"
#include "degentune/dataset.hpp"
#include "degentune/diffusion.hpp"
#include "degentune/errors.hpp"
#include "degentune/parallel.hpp"
#include "degentune/rng.hpp"

namespace dgt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a ParamStore. Entries can be masked out; masked entries keep
/// value, moments and step count untouched, so they stay bitwise identical.
class Adam {
 public:
  Adam(const ParamStore& store, const AdamConfig& cfg) : cfg_(cfg) {
    for (const auto& e : store.entries()) {
      m_.emplace_back(e.value.shape);
      v_.emplace_back(e.value.shape);
    }
    trainable_.assign(store.entries().size(), 1);
  }

  void set_trainable(const ParamStore& store,
                     const std::vector<std::string>& frozen_names,
                     const std::vector<std::string>& allowed_groups) {
    const auto& entries = store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      bool ok = allowed_groups.empty() ||
                std::find(allowed_groups.begin(), allowed_groups.end(),
                          entries[i].group) != allowed_groups.end();
      if (std::find(frozen_names.begin(), frozen_names.end(), entries[i].name) !=
          frozen_names.end())
        ok = false;
      trainable_[i] = ok ? 1 : 0;
    }
  }

  const std::vector<char>& trainable() const { return trainable_; }

  void step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& entries = store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!trainable_[i]) continue;
      auto& e = entries[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < e.value.data.size(); ++j) {
        const double g = e.grad.data[j];
        m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * g;
        v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m.data[j] / bc1;
        const double vh = v.data[j] / bc2;
        e.value.data[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
  std::vector<char> trainable_;
};

/// Loss + parameter gradients for one batch, with exactly the same (t, eps)
/// draw discipline as dm_loss, so the value here equals dm_loss evaluated at
/// the pre-step parameters. Gradients accumulate scaled by 1/batch. Net is
/// anything exposing build_eps(graph, x_t, t, cond, train, grad_sink) plus
/// params(). Each sample backprops into its own sink and sinks merge in
/// sample order, so losses AND gradients are bit-identical for any worker
/// count.
template <class Net>
double dm_loss_and_grad(Net& net, const NoiseSchedule& sched,
                        const std::vector<std::pair<Image, Condition>>& batch,
                        std::uint64_t seed, int workers = 1) {
  if (batch.empty()) throw ValidationError("dm_loss_and_grad: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::vector<Tensor>> sinks(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    SplitMix64 tdraw(mix_seed(seed, seed_tag::kLossDraw, 2 * i));
    const int t = 1 + static_cast<int>(tdraw.bounded(static_cast<std::uint64_t>(sched.T)));
    const Image eps = gaussian_image(batch[i].first.shape,
                                     mix_seed(seed, seed_tag::kLossDraw, 2 * i + 1));
    const Image x_t = forward_diffuse(batch[i].first, t, eps, sched);
    sinks[i] = make_grad_sink(net.params());
    ad::Graph g;
    const ad::Graph::Ref out =
        net.build_eps(g, x_t, t, batch[i].second, /*train=*/true, &sinks[i]);
    const ad::Graph::Ref loss = g.mse_vs(out, eps);
    g.backward(g.scale(loss, inv_b));
    losses[i] = g.val(loss).data[0];
  });
  double total = 0.0;
  auto& entries = net.params().entries();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += losses[i];
    for (std::size_t j = 0; j < entries.size(); ++j) {
      auto& dst = entries[j].grad;
      const auto& src = sinks[i][j];
      for (std::size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += src.data[k];
    }
  }
  return total * inv_b;
}

/// Seeded epoch shuffle (Fisher-Yates over splitmix64).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.bounded(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

struct BaseTrainConfig {
  UNetConfig arch;
  int schedule_T = 200;
  ScheduleKind schedule_kind = ScheduleKind::kLinearBeta;
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double cond_dropout = 0.1;  // classifier-free training
  std::uint64_t seed = 0;
  int workers = 1;  // results are worker-count invariant
};

/// Trains the base class-conditional model from scratch on a labeled dataset.
/// Single-controller, sequential reduction; bitwise reproducible per
/// (dataset, config).
inline ModelCheckpoint train_base(const LabeledDataset& data, const BaseTrainConfig& cfg) {
  if (data.concepts.size() < 2)
    throw ValidationError("train_base: need >= 2 registered concepts");
  for (const auto& c : data.concepts) {
    bool found = false;
    for (const auto& it : data.items)
      if (!it.second.is_none() && it.second.concept_id() == c.id) {
        found = true;
        break;
      }
    if (!found)
      throw ValidationError("train_base: invalid dataset, no samples for concept " +
                            std::to_string(c.id) + " (" + c.label + ")");
  }

  UNetConfig arch = cfg.arch;
  arch.num_concepts = static_cast<int>(data.concepts.size());
  ModelCheckpoint ckpt(arch, make_schedule(cfg.schedule_T, cfg.schedule_kind),
                       data.concepts);
  ckpt.unet().init_weights(cfg.seed);
  ckpt.train_meta().seeds = {cfg.seed};
  ckpt.train_meta().epochs = cfg.epochs;

  Adam opt(ckpt.unet().params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const NoiseSchedule& sched = ckpt.schedule();

  std::uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(
        data.items.size(), mix_seed(cfg.seed, seed_tag::kShuffle, static_cast<std::uint64_t>(epoch)));
    SplitMix64 dropout(mix_seed(cfg.seed, seed_tag::kDropout, static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    int epoch_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::pair<Image, Condition>> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& item = data.items[order[k]];
        Condition c = item.second;
        if (dropout.uniform() < cfg.cond_dropout) c = Condition::none();
        batch.emplace_back(item.first, c);
      }
      ckpt.unet().params().zero_grads();
      const double loss = dm_loss_and_grad(
          ckpt.unet(), sched, batch, mix_seed(cfg.seed, seed_tag::kLossDraw, step_counter),
          cfg.workers);
      if (!std::isfinite(loss))
        throw DivergedError("train_base: loss diverged at step " + std::to_string(step_counter));
      opt.step(ckpt.unet().params());
      epoch_loss += loss;
      ++epoch_batches;
      ++step_counter;
    }
    ckpt.train_meta().loss_history.push_back(epoch_loss / std::max(1, epoch_batches));
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation classifier training
// ---------------------------------------------------------------------------

struct ClassifierTrainConfig {
  ClassifierConfig arch;
  int epochs = 20;
  int batch_size = 32;
  double lr = 3e-3;
  double holdout_fraction = 0.1;
  double required_accuracy = 0.95;
  std::uint64_t seed = 0;
};

struct TrainedClassifier {
  ConceptClassifier net;
  double holdout_accuracy = 0.0;
  std::uint64_t seed = 0;
};

/// Trains the K-way concept classifier used by every metric. Fails loudly if
/// the held-out accuracy contract is not met.
inline TrainedClassifier train_concept_classifier(const LabeledDataset& data,
                                                  const ClassifierTrainConfig& cfg) {
  ClassifierConfig arch = cfg.arch;
  arch.num_classes = static_cast<int>(data.concepts.size());
  ConceptClassifier net(arch);
  net.init_weights(cfg.seed);

  const auto split_order =
      shuffled_indices(data.items.size(), mix_seed(cfg.seed, seed_tag::kHoldout));
  const std::size_t n_holdout = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(data.items.size())));
  std::vector<std::size_t> train_idx(split_order.begin(), split_order.end() - static_cast<std::ptrdiff_t>(n_holdout));
  std::vector<std::size_t> hold_idx(split_order.end() - static_cast<std::ptrdiff_t>(n_holdout), split_order.end());

  auto label_of = [&](std::size_t i) {
    const Condition& c = data.items[i].second;
    if (c.is_none()) throw ValidationError("classifier dataset must be fully labeled");
    return c.concept_id();
  };

  Adam opt(net.params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(
        train_idx.size(), mix_seed(cfg.seed, seed_tag::kShuffle, static_cast<std::uint64_t>(epoch)));
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      net.params().zero_grads();
      const double inv_b = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = train_idx[order[k]];
        ad::Graph g;
        const auto heads = net.build(g, data.items[i].first, /*train=*/true);
        const ad::Graph::Ref loss = g.softmax_ce(heads.logits, label_of(i));
        g.backward(g.scale(loss, inv_b));
      }
      opt.step(net.params());
    }
  }

  int correct = 0;
  for (const std::size_t i : hold_idx)
    if (net.argmax_class(data.items[i].first) == label_of(i)) ++correct;
  const double acc = static_cast<double>(correct) / static_cast<double>(hold_idx.size());
  if (acc < cfg.required_accuracy)
    throw TrainingFailedError(
        "classifier held-out accuracy " + std::to_string(acc) + " below " +
        std::to_string(cfg.required_accuracy) +
        "; re-run with a different seed or more data/epochs");
  return {std::move(net), acc, cfg.seed};
}

}  // namespace dgt
