#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "degentune/autodiff.hpp"
#include "degentune/condition.hpp"
#include "degentune/params.hpp"
#include "degentune/rng.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

/// Topology of the conditional noise-prediction U-Net: two down and two up
/// stages around a bottleneck, a resblock per stage, and one cross-attention
/// block per resolution below the input. Conditioning enters through a
/// learned per-concept embedding table (the None condition is its last row)
/// attended over a two-token context.
struct UNetConfig {
  int image_channels = 3;
  int image_size = 32;
  int base_channels = 16;
  int time_dim = 64;
  int cond_dim = 32;
  int num_concepts = 6;  // embedding table has num_concepts + 1 rows
  int gn_groups = 4;

  bool operator==(const UNetConfig&) const = default;
};

class UNet {
 public:
  explicit UNet(const UNetConfig& cfg) : cfg_(cfg) { build_params(); }

  const UNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  int none_row() const { return cfg_.num_concepts; }
  int cond_row(const Condition& c) const {
    return c.is_none() ? none_row() : c.concept_id();
  }

  /// Seeded Gaussian init. Output conv and per-resblock time projections
  /// start at zero so the initial prediction is the zero field.
  void init_weights(std::uint64_t seed) {
    GaussRng rng(mix_seed(seed, seed_tag::kParamInit));
    for (auto& e : params_.entries()) {
      const std::string& n = e.name;
      if (ends_with(n, ".gn1.g") || ends_with(n, ".gn2.g") || ends_with(n, ".gn.g")) {
        e.value.fill(1.0);
      } else if (ends_with(n, ".b") || ends_with(n, ".gn1.b") || ends_with(n, ".gn2.b") ||
                 ends_with(n, ".gn.b")) {
        e.value.fill(0.0);
      } else if (n == "out.conv.w" || ends_with(n, ".time.w")) {
        e.value.fill(0.0);
      } else if (n == "cond.table" || n == "cond.ctx_token") {
        // wide enough that concept rows start clearly separated; conditioning
        // is slow to emerge from near-identical embeddings
        init_gaussian(e.value, rng, 0.5);
      } else if (e.value.ndim() == 4) {  // conv weight {Cout,Cin,kh,kw}
        const double fan_in = static_cast<double>(e.value.dim(1)) * e.value.dim(2) * e.value.dim(3);
        init_gaussian(e.value, rng, std::sqrt(2.0 / fan_in));
      } else if (e.value.ndim() == 2) {  // linear weight {Din,Dout}
        init_gaussian(e.value, rng, std::sqrt(2.0 / static_cast<double>(e.value.dim(0))));
      } else {
        e.value.fill(0.0);
      }
    }
  }

  /// Builds the eps-prediction graph for one sample. With train=false all
  /// parameters enter as constants and backward() is a no-op on them.
  /// Gradient routing for one graph build: off (inference), the store's own
  /// buffers, or an external per-sample sink (parallel batches).
  struct GradCtx {
    bool train = false;
    std::vector<Tensor>* sink = nullptr;
  };

  ad::Graph::Ref build_eps(ad::Graph& g, const Image& x_t, int t,
                           const Condition& cond, bool train,
                           std::vector<Tensor>* grad_sink = nullptr) {
    const GradCtx ctx{train, grad_sink};
    const int b = cfg_.base_channels;

    const ad::Graph::Ref x = g.input(x_t);
    const ad::Graph::Ref temb_in = g.input(time_features(t));
    ad::Graph::Ref temb = g.linear(temb_in, P(g, "temb.fc1.w", ctx), P(g, "temb.fc1.b", ctx));
    temb = g.silu(temb);
    temb = g.linear(temb, P(g, "temb.fc2.w", ctx), P(g, "temb.fc2.b", ctx));

    // conditioning context: [concept embedding, shared token]
    const ad::Graph::Ref cctx = g.stack_rows(
        {g.embed_row(P(g, "cond.table", ctx), cond_row(cond)), P(g, "cond.ctx_token", ctx)});

    ad::Graph::Ref h = g.conv2d(x, P(g, "stem.w", ctx), P(g, "stem.b", ctx), 1, 1);
    const ad::Graph::Ref skip0 = resblock(g, "down0.rb", h, temb, b, b, ctx);
    h = g.conv2d(skip0, P(g, "down0.pool.w", ctx), P(g, "down0.pool.b", ctx), 2, 1);

    h = resblock(g, "down1.rb", h, temb, 2 * b, 2 * b, ctx);
    const ad::Graph::Ref skip1 = attention(g, "down1.xattn", h, cctx, 2 * b, ctx);
    h = g.conv2d(skip1, P(g, "down1.pool.w", ctx), P(g, "down1.pool.b", ctx), 2, 1);

    h = resblock(g, "mid.rb1", h, temb, 4 * b, 4 * b, ctx);
    h = attention(g, "mid.xattn", h, cctx, 4 * b, ctx);
    h = resblock(g, "mid.rb2", h, temb, 4 * b, 4 * b, ctx);

    h = g.upsample2x(h);
    h = g.conv2d(h, P(g, "up1.conv.w", ctx), P(g, "up1.conv.b", ctx), 1, 1);
    h = g.concat_channels(h, skip1);
    h = resblock(g, "up1.rb", h, temb, 4 * b, 2 * b, ctx);
    h = attention(g, "up1.xattn", h, cctx, 2 * b, ctx);

    h = g.upsample2x(h);
    h = g.conv2d(h, P(g, "up0.conv.w", ctx), P(g, "up0.conv.b", ctx), 1, 1);
    h = g.concat_channels(h, skip0);
    h = resblock(g, "up0.rb", h, temb, 2 * b, b, ctx);

    h = g.groupnorm(h, P(g, "out.gn.g", ctx), P(g, "out.gn.b", ctx), groups_for(b));
    h = g.silu(h);
    return g.conv2d(h, P(g, "out.conv.w", ctx), P(g, "out.conv.b", ctx), 1, 1);
  }

  /// Forward-only prediction; pure in (params, x_t, t, cond).
  Image eps(const Image& x_t, int t, const Condition& cond) {
    ad::Graph g;
    const ad::Graph::Ref out = build_eps(g, x_t, t, cond, /*train=*/false);
    return g.val(out);
  }

  /// Sinusoidal timestep features, dim = time_dim.
  Tensor time_features(int t) const {
    const int d = cfg_.time_dim;
    const int half = d / 2;
    Tensor f({1, d});
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      f.data[static_cast<std::size_t>(i)] = std::sin(t * freq);
      f.data[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
    }
    return f;
  }

  int groups_for(int channels) const {
    return static_cast<int>(std::gcd(cfg_.gn_groups, channels));
  }

 private:
  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  ad::Graph::Ref P(ad::Graph& g, const std::string& name, const GradCtx& ctx) {
    const int idx = params_.index_of(name);
    auto& e = params_.entries()[static_cast<std::size_t>(idx)];
    Tensor* gptr = nullptr;
    if (ctx.train)
      gptr = ctx.sink ? &(*ctx.sink)[static_cast<std::size_t>(idx)] : &e.grad;
    return g.param(&e.value, gptr);
  }

  ad::Graph::Ref resblock(ad::Graph& g, const std::string& p, ad::Graph::Ref x,
                          ad::Graph::Ref temb, int cin, int cout, const GradCtx& ctx) {
    ad::Graph::Ref h =
        g.groupnorm(x, P(g, p + ".gn1.g", ctx), P(g, p + ".gn1.b", ctx), groups_for(cin));
    h = g.silu(h);
    h = g.conv2d(h, P(g, p + ".conv1.w", ctx), P(g, p + ".conv1.b", ctx), 1, 1);
    // the {1,cout} time projection acts as a per-channel bias
    const ad::Graph::Ref tproj =
        g.linear(g.silu(temb), P(g, p + ".time.w", ctx), P(g, p + ".time.b", ctx));
    h = g.add_channel_bias(h, tproj);
    h = g.groupnorm(h, P(g, p + ".gn2.g", ctx), P(g, p + ".gn2.b", ctx), groups_for(cout));
    h = g.silu(h);
    h = g.conv2d(h, P(g, p + ".conv2.w", ctx), P(g, p + ".conv2.b", ctx), 1, 1);
    ad::Graph::Ref skip = x;
    if (cin != cout)
      skip = g.conv2d(x, P(g, p + ".skip.w", ctx), P(g, p + ".skip.b", ctx), 1, 0);
    return g.add(skip, h);
  }

  ad::Graph::Ref attention(ad::Graph& g, const std::string& p, ad::Graph::Ref x,
                           ad::Graph::Ref cond_ctx, int channels, const GradCtx& ctx) {
    const Tensor& xv = g.val(x);
    const int h = xv.dim(1), w = xv.dim(2);
    ad::Graph::Ref q =
        g.groupnorm(x, P(g, p + ".gn.g", ctx), P(g, p + ".gn.b", ctx), groups_for(channels));
    q = g.conv2d(q, P(g, p + ".q.w", ctx), P(g, p + ".q.b", ctx), 1, 0);
    const ad::Graph::Ref qrows = g.chw_to_rows(q);
    const ad::Graph::Ref k = g.linear(cond_ctx, P(g, p + ".k.w", ctx), P(g, p + ".k.b", ctx));
    const ad::Graph::Ref v = g.linear(cond_ctx, P(g, p + ".v.w", ctx), P(g, p + ".v.b", ctx));
    ad::Graph::Ref scores = g.matmul_nt(qrows, k);
    scores = g.scale(scores, 1.0 / std::sqrt(static_cast<double>(channels)));
    const ad::Graph::Ref attn = g.softmax_rows(scores);
    const ad::Graph::Ref ov = g.matmul(attn, v);
    ad::Graph::Ref o = g.rows_to_chw(ov, h, w);
    o = g.conv2d(o, P(g, p + ".o.w", ctx), P(g, p + ".o.b", ctx), 1, 0);
    return g.add(x, o);
  }

  void build_params() {
    const int b = cfg_.base_channels;
    const int td = cfg_.time_dim;
    const int cd = cfg_.cond_dim;

    params_.add("cond.table", "other", {cfg_.num_concepts + 1, cd});
    params_.add("cond.ctx_token", "cross_attention", {1, cd});
    params_.add("temb.fc1.w", "other", {td, td});
    params_.add("temb.fc1.b", "other", {td});
    params_.add("temb.fc2.w", "other", {td, td});
    params_.add("temb.fc2.b", "other", {td});
    params_.add("stem.w", "other", {b, cfg_.image_channels, 3, 3});
    params_.add("stem.b", "other", {b});

    add_resblock("down0.rb", b, b);
    add_conv("down0.pool", b, 2 * b, 3, "resblock");
    add_resblock("down1.rb", 2 * b, 2 * b);
    add_attention("down1.xattn", 2 * b);
    add_conv("down1.pool", 2 * b, 4 * b, 3, "resblock");
    add_resblock("mid.rb1", 4 * b, 4 * b);
    add_attention("mid.xattn", 4 * b);
    add_resblock("mid.rb2", 4 * b, 4 * b);
    add_conv("up1.conv", 4 * b, 2 * b, 3, "resblock");
    add_resblock("up1.rb", 4 * b, 2 * b);
    add_attention("up1.xattn", 2 * b);
    add_conv("up0.conv", 2 * b, b, 3, "resblock");
    add_resblock("up0.rb", 2 * b, b);

    params_.add("out.gn.g", "other", {b});
    params_.add("out.gn.b", "other", {b});
    params_.add("out.conv.w", "other", {cfg_.image_channels, b, 3, 3});
    params_.add("out.conv.b", "other", {cfg_.image_channels});
  }

  void add_conv(const std::string& p, int cin, int cout, int k, const std::string& group) {
    params_.add(p + ".w", group, {cout, cin, k, k});
    params_.add(p + ".b", group, {cout});
  }

  void add_resblock(const std::string& p, int cin, int cout) {
    params_.add(p + ".gn1.g", "resblock", {cin});
    params_.add(p + ".gn1.b", "resblock", {cin});
    add_conv(p + ".conv1", cin, cout, 3, "resblock");
    params_.add(p + ".time.w", "resblock", {cfg_.time_dim, cout});
    params_.add(p + ".time.b", "resblock", {cout});
    params_.add(p + ".gn2.g", "resblock", {cout});
    params_.add(p + ".gn2.b", "resblock", {cout});
    add_conv(p + ".conv2", cout, cout, 3, "resblock");
    if (cin != cout) add_conv(p + ".skip", cin, cout, 1, "resblock");
  }

  void add_attention(const std::string& p, int channels) {
    params_.add(p + ".gn.g", "cross_attention", {channels});
    params_.add(p + ".gn.b", "cross_attention", {channels});
    add_conv(p + ".q", channels, channels, 1, "cross_attention");
    params_.add(p + ".k.w", "cross_attention", {cfg_.cond_dim, channels});
    params_.add(p + ".k.b", "cross_attention", {channels});
    params_.add(p + ".v.w", "cross_attention", {cfg_.cond_dim, channels});
    params_.add(p + ".v.b", "cross_attention", {channels});
    add_conv(p + ".o", channels, channels, 1, "cross_attention");
  }

  UNetConfig cfg_;
  ParamStore params_;
};

}  // namespace dgt
