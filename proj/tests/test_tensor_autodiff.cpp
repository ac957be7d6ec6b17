#include <catch2/catch.hpp>

#include "degentune/autodiff.hpp"
#include "degentune/params.hpp"
#include "degentune/rng.hpp"
#include "degentune/tensor.hpp"

#include <cmath>
#include <functional>

using dgt::Tensor;
using dgt::ParamStore;
namespace ad = dgt::ad;

namespace {

// Central finite differences against the tape gradients, elementwise.
void check_grads(ParamStore& store,
                 const std::function<double(bool)>& run,  // true = accumulate grads
                 double h = 1e-5, double tol = 1e-5) {
  store.zero_grads();
  run(true);
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const double keep = e.value.data[i];
      e.value.data[i] = keep + h;
      const double up = run(false);
      e.value.data[i] = keep - h;
      const double dn = run(false);
      e.value.data[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = e.grad.data[i];
      // the floor absorbs central-difference cancellation noise (~1e-11)
      // on parameters whose true gradient is identically zero
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-4});
      INFO(e.name << "[" << i << "] fd=" << fd << " ad=" << an);
      CHECK(std::abs(fd - an) / scale < tol);
    }
  }
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  dgt::GaussRng g(seed);
  for (double& v : t.data) v = g.next() * scale;
  return t;
}

}  // namespace

TEST_CASE("gradients: conv / norm / activation stack") {
  ParamStore ps;
  ps.add("w1", "other", {3, 2, 3, 3});
  ps.add("b1", "other", {3});
  ps.add("gn.g", "other", {3});
  ps.add("gn.b", "other", {3});
  ps.add("w2", "other", {2, 3, 3, 3});
  ps.add("b2", "other", {2});
  dgt::GaussRng init(1);
  for (auto& e : ps.entries())
    for (double& v : e.value.data) v = init.next() * 0.5;
  ps.at("gn.g").value.fill(1.1);

  const Tensor x = random_tensor({2, 6, 6}, 7);
  const Tensor target = random_tensor({2, 3, 3}, 8);

  auto run = [&](bool train) {
    ad::Graph g;
    auto px = g.input(x);
    auto h = g.conv2d(px, g.param(&ps.at("w1").value, train ? &ps.at("w1").grad : nullptr),
                      g.param(&ps.at("b1").value, train ? &ps.at("b1").grad : nullptr), 1, 1);
    h = g.groupnorm(h, g.param(&ps.at("gn.g").value, train ? &ps.at("gn.g").grad : nullptr),
                    g.param(&ps.at("gn.b").value, train ? &ps.at("gn.b").grad : nullptr), 3);
    h = g.silu(h);
    h = g.conv2d(h, g.param(&ps.at("w2").value, train ? &ps.at("w2").grad : nullptr),
                 g.param(&ps.at("b2").value, train ? &ps.at("b2").grad : nullptr), 2, 1);
    const auto loss = g.mse_vs(h, target);
    if (train) g.backward(loss);
    return g.val(loss).data[0];
  };
  check_grads(ps, run);
}

TEST_CASE("gradients: attention-style block") {
  ParamStore ps;
  ps.add("table", "other", {3, 4});
  ps.add("tok", "other", {1, 4});
  ps.add("kw", "other", {4, 5});
  ps.add("kb", "other", {5});
  ps.add("vw", "other", {4, 5});
  ps.add("vb", "other", {5});
  ps.add("qw", "other", {5, 2, 1, 1});
  ps.add("qb", "other", {5});
  ps.add("ow", "other", {2, 5, 1, 1});
  ps.add("ob", "other", {2});
  dgt::GaussRng init(3);
  for (auto& e : ps.entries())
    for (double& v : e.value.data) v = init.next() * 0.6;

  const Tensor x = random_tensor({2, 3, 3}, 11);
  const Tensor target = random_tensor({2, 3, 3}, 12);

  auto P = [&](ad::Graph& g, const char* n, bool train) {
    auto& e = ps.at(n);
    return g.param(&e.value, train ? &e.grad : nullptr);
  };
  auto run = [&](bool train) {
    ad::Graph g;
    auto px = g.input(x);
    auto ctx = g.stack_rows({g.embed_row(P(g, "table", train), 1), P(g, "tok", train)});
    auto q = g.conv2d(px, P(g, "qw", train), P(g, "qb", train), 1, 0);
    auto qr = g.chw_to_rows(q);
    auto k = g.linear(ctx, P(g, "kw", train), P(g, "kb", train));
    auto v = g.linear(ctx, P(g, "vw", train), P(g, "vb", train));
    auto s = g.scale(g.matmul_nt(qr, k), 1.0 / std::sqrt(5.0));
    auto a = g.softmax_rows(s);
    auto o = g.matmul(a, v);
    auto oc = g.rows_to_chw(o, 3, 3);
    oc = g.conv2d(oc, P(g, "ow", train), P(g, "ob", train), 1, 0);
    auto y = g.add(px, oc);
    const auto loss = g.mse_vs(y, target);
    if (train) g.backward(loss);
    return g.val(loss).data[0];
  };
  check_grads(ps, run);
}

TEST_CASE("gradients: pooling, upsampling, channel bias, concat, classifier head") {
  ParamStore ps;
  ps.add("w", "other", {2, 2, 3, 3});
  ps.add("b", "other", {2});
  ps.add("bias", "other", {1, 2});
  ps.add("fw", "other", {2, 3});
  ps.add("fb", "other", {3});
  dgt::GaussRng init(5);
  for (auto& e : ps.entries())
    for (double& v : e.value.data) v = init.next() * 0.7;

  const Tensor x = random_tensor({1, 4, 4}, 21);
  const Tensor x2 = random_tensor({1, 8, 8}, 22);

  auto P = [&](ad::Graph& g, const char* n, bool train) {
    auto& e = ps.at(n);
    return g.param(&e.value, train ? &e.grad : nullptr);
  };
  auto run = [&](bool train) {
    ad::Graph g;
    auto up = g.upsample2x(g.input(x));       // {1,8,8}
    auto cat = g.concat_channels(up, g.input(x2));  // {2,8,8}
    auto h = g.conv2d(cat, P(g, "w", train), P(g, "b", train), 1, 1);
    h = g.add_channel_bias(h, P(g, "bias", train));
    h = g.silu(h);
    h = g.avgpool(h, 2);                      // {2,4,4}
    auto f = g.mean_hw(h);                    // {1,2}
    auto logits = g.linear(f, P(g, "fw", train), P(g, "fb", train));
    const auto loss = g.softmax_ce(logits, 1);
    if (train) g.backward(loss);
    return g.val(loss).data[0];
  };
  check_grads(ps, run);
}
