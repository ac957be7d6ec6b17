#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "degentune/autodiff.hpp"
#include "degentune/params.hpp"
#include "degentune/rng.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

/// Small convnet used as the metric backbone: K-way concept classifier whose
/// penultimate activations double as the feature space for the distribution
/// distances.
struct ClassifierConfig {
  int image_channels = 3;
  int image_size = 32;
  int base_channels = 16;
  int feature_dim = 64;
  int num_classes = 6;

  bool operator==(const ClassifierConfig&) const = default;
};

class ConceptClassifier {
 public:
  explicit ConceptClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    const int c = cfg_.base_channels;
    add_conv("c1", cfg_.image_channels, c);
    add_conv("c2", c, 2 * c);
    add_conv("c3", 2 * c, 4 * c);
    // three pool-by-2 stages; the surviving spatial grid is flattened so
    // layout position stays visible to the head
    const int spatial = cfg_.image_size / 8;
    params_.add("fc1.w", "other", {4 * c * spatial * spatial, cfg_.feature_dim});
    params_.add("fc1.b", "other", {cfg_.feature_dim});
    params_.add("fc2.w", "other", {cfg_.feature_dim, cfg_.num_classes});
    params_.add("fc2.b", "other", {cfg_.num_classes});
  }

  const ClassifierConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void init_weights(std::uint64_t seed) {
    GaussRng rng(mix_seed(seed, seed_tag::kParamInit));
    for (auto& e : params_.entries()) {
      if (e.value.ndim() == 4) {
        const double fan_in = static_cast<double>(e.value.dim(1)) * e.value.dim(2) * e.value.dim(3);
        init_gaussian(e.value, rng, std::sqrt(2.0 / fan_in));
      } else if (e.value.ndim() == 2) {
        init_gaussian(e.value, rng, std::sqrt(2.0 / static_cast<double>(e.value.dim(0))));
      } else {
        e.value.fill(0.0);
      }
    }
  }

  struct Heads {
    ad::Graph::Ref features;  // {1, feature_dim}
    ad::Graph::Ref logits;    // {1, num_classes}
  };

  Heads build(ad::Graph& g, const Image& img, bool train) {
    ad::Graph::Ref h = g.input(img);
    h = g.conv2d(h, P(g, "c1.w", train), P(g, "c1.b", train), 1, 1);
    h = g.silu(h);
    h = g.avgpool(h, 2);
    h = g.conv2d(h, P(g, "c2.w", train), P(g, "c2.b", train), 1, 1);
    h = g.silu(h);
    h = g.avgpool(h, 2);
    h = g.conv2d(h, P(g, "c3.w", train), P(g, "c3.b", train), 1, 1);
    h = g.silu(h);
    h = g.avgpool(h, 2);
    const ad::Graph::Ref flat = g.flatten(h);
    ad::Graph::Ref f = g.linear(flat, P(g, "fc1.w", train), P(g, "fc1.b", train));
    f = g.silu(f);
    const ad::Graph::Ref logits = g.linear(f, P(g, "fc2.w", train), P(g, "fc2.b", train));
    return {f, logits};
  }

  /// Forward-only: penultimate features and class probabilities.
  void predict(const Image& img, Tensor* features, Tensor* probs) const {
    ad::Graph g;
    auto heads = const_cast<ConceptClassifier*>(this)->build(g, img, false);
    if (features) *features = g.val(heads.features);
    if (probs) {
      const Tensor& lv = g.val(heads.logits);
      const int k = lv.dim(1);
      Tensor p({1, k});
      double mx = -1e300;
      for (int j = 0; j < k; ++j) mx = std::max(mx, lv.data[static_cast<std::size_t>(j)]);
      double z = 0.0;
      for (int j = 0; j < k; ++j) z += std::exp(lv.data[static_cast<std::size_t>(j)] - mx);
      for (int j = 0; j < k; ++j)
        p.data[static_cast<std::size_t>(j)] = std::exp(lv.data[static_cast<std::size_t>(j)] - mx) / z;
      *probs = std::move(p);
    }
  }

  int argmax_class(const Image& img) const {
    Tensor probs;
    predict(img, nullptr, &probs);
    int best = 0;
    for (int j = 1; j < probs.dim(1); ++j)
      if (probs.data[static_cast<std::size_t>(j)] > probs.data[static_cast<std::size_t>(best)]) best = j;
    return best;
  }

 private:
  ad::Graph::Ref P(ad::Graph& g, const std::string& name, bool train) {
    auto& e = params_.at(name);
    return g.param(&e.value, train ? &e.grad : nullptr);
  }

  void add_conv(const std::string& p, int cin, int cout) {
    params_.add(p + ".w", "other", {cout, cin, 3, 3});
    params_.add(p + ".b", "other", {cout});
  }

  ClassifierConfig cfg_;
  ParamStore params_;
};

}  // namespace dgt
