#include <catch2/catch.hpp>

#include "degentune/diffusion.hpp"
#include "test_helpers.hpp"

#include <cmath>

using dgt::Condition;
using dgt::Image;
using testutil::LinearToyModel;

namespace {

// hand-built schedule with exact endpoint coefficients
dgt::NoiseSchedule toy_schedule() {
  dgt::NoiseSchedule s;
  s.T = 2;
  s.alpha = {1.0, 0.6, 0.0};
  s.sigma = {0.0, 0.8, 1.0};
  return s;
}

Image const_image(double v) { return dgt::make_image(1, 4, 4, v); }

}  // namespace

TEST_CASE("forward_diffuse endpoints and hand-computed midpoint") {
  const auto s = toy_schedule();
  const Image x0 = const_image(0.5);
  const Image eps = const_image(-1.0);

  const Image at0 = dgt::forward_diffuse(x0, 0, eps, s);
  CHECK(dgt::bitwise_equal(at0, x0));  // alpha=1, sigma=0

  const Image atT = dgt::forward_diffuse(x0, 2, eps, s);
  CHECK(dgt::bitwise_equal(atT, eps));  // alpha=0, sigma=1

  const Image mid = dgt::forward_diffuse(x0, 1, eps, s);
  for (double v : mid.data) CHECK(v == Approx(0.3 - 0.8).epsilon(1e-15));
}

TEST_CASE("forward_diffuse validates shapes and timestep") {
  const auto s = toy_schedule();
  CHECK_THROWS_AS(dgt::forward_diffuse(const_image(0.0), 1, dgt::make_image(1, 2, 2), s),
                  dgt::ValidationError);
  CHECK_THROWS_AS(dgt::forward_diffuse(const_image(0.0), 3, const_image(0.0), s),
                  dgt::ValidationError);
}

TEST_CASE("forward_diffuse is linear in (x0, eps); exact for power-of-two scale") {
  const auto sched = dgt::make_schedule(50, dgt::ScheduleKind::kLinearBeta);
  dgt::GaussRng g(3);
  Image x0 = dgt::make_image(3, 8, 8);
  Image eps = dgt::make_image(3, 8, 8);
  for (double& v : x0.data) v = g.next();
  for (double& v : eps.data) v = g.next();

  for (const double a : {2.0, 0.5, 0.25}) {  // exact scaling
    Image ax0 = x0, aeps = eps;
    for (double& v : ax0.data) v *= a;
    for (double& v : aeps.data) v *= a;
    const Image lhs = dgt::forward_diffuse(ax0, 17, aeps, sched);
    Image rhs = dgt::forward_diffuse(x0, 17, eps, sched);
    for (double& v : rhs.data) v *= a;
    CHECK(dgt::bitwise_equal(lhs, rhs));
  }
  for (const double a : {1.7, -0.3}) {  // general scale within rounding
    Image ax0 = x0, aeps = eps;
    for (double& v : ax0.data) v *= a;
    for (double& v : aeps.data) v *= a;
    const Image lhs = dgt::forward_diffuse(ax0, 17, aeps, sched);
    const Image rhs = dgt::forward_diffuse(x0, 17, eps, sched);
    for (std::size_t i = 0; i < lhs.data.size(); ++i)
      CHECK(lhs.data[i] == Approx(a * rhs.data[i]).margin(1e-14));
  }
}

TEST_CASE("guided_eps scalar toy evaluation") {
  // eps(c) = 2, eps(c_NP) = 1, lambda = 3 -> 2 + 3*(2-1) = 5
  struct TwoValueModel {
    dgt::Image eps(const dgt::Image& x, int, const Condition& c) const {
      return dgt::make_image(x.dim(0), x.dim(1), x.dim(2), c.is_none() ? 1.0 : 2.0);
    }
  };
  TwoValueModel m;
  dgt::GuidanceConfig g;
  g.positive = Condition::for_concept(0);
  g.negative = Condition::none();
  g.lambda_np = 3.0;
  const Image out = dgt::guided_eps(m, const_image(0.0), 1, g);
  for (double v : out.data) CHECK(v == Approx(5.0));
}

TEST_CASE("guided_eps identities") {
  const auto ckpt = testutil::tiny_checkpoint();
  const Image x = dgt::gaussian_image({3, 16, 16}, 5);

  // lambda = 0 -> plain conditional
  dgt::GuidanceConfig g0;
  g0.positive = Condition::for_concept(1);
  g0.negative = Condition::none();
  g0.lambda_np = 0.0;
  CHECK(dgt::bitwise_equal(dgt::guided_eps(ckpt, x, 3, g0),
                           dgt::eps_predict(ckpt, x, 3, Condition::for_concept(1))));

  // positive == negative -> bitwise equal to plain prediction for any lambda
  for (const double lam : {0.5, 3.0, 7.5}) {
    dgt::GuidanceConfig g;
    g.positive = Condition::for_concept(2);
    g.negative = Condition::for_concept(2);
    g.lambda_np = lam;
    CHECK(dgt::bitwise_equal(dgt::guided_eps(ckpt, x, 7, g),
                             dgt::eps_predict(ckpt, x, 7, Condition::for_concept(2))));
  }

  CHECK_THROWS_AS(
      [&] {
        dgt::GuidanceConfig bad;
        bad.lambda_np = -1.0;
        return dgt::guided_eps(ckpt, x, 3, bad);
      }(),
      dgt::ValidationError);
}

TEST_CASE("eps_predict is pure and shape preserving") {
  const auto ckpt = testutil::tiny_checkpoint();
  const Image x = dgt::gaussian_image({3, 16, 16}, 8);
  const Image a = dgt::eps_predict(ckpt, x, 5, Condition::for_concept(0));
  const Image b = dgt::eps_predict(ckpt, x, 5, Condition::for_concept(0));
  CHECK(dgt::bitwise_equal(a, b));
  CHECK(a.shape == x.shape);

  CHECK_THROWS_AS(dgt::eps_predict(ckpt, x, 5, Condition::for_concept(99)),
                  dgt::UnknownConceptError);
  CHECK_THROWS_AS(dgt::eps_predict(ckpt, x, 0, Condition::for_concept(0)),
                  dgt::ValidationError);
}

TEST_CASE("eps_predict on the linear toy model equals w*x") {
  LinearToyModel m{0.37};
  const Image x = dgt::gaussian_image({1, 2, 2}, 3);
  const Image out = m.eps(x, 1, Condition::none());
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(out.data[i] == Approx(0.37 * x.data[i]));
}

TEST_CASE("dm_loss of a perfect predictor is zero") {
  // with x0 = 0 the noisy sample is sigma_t * eps, so eps = x_t / sigma_t
  const auto sched = dgt::make_schedule(50, dgt::ScheduleKind::kLinearBeta);
  struct PerfectModel {
    const dgt::NoiseSchedule* s;
    dgt::Image eps(const dgt::Image& x, int t, const Condition&) const {
      dgt::Image out = x;
      for (double& v : out.data) v /= s->sigma[static_cast<std::size_t>(t)];
      return out;
    }
  };
  PerfectModel m{&sched};
  std::vector<std::pair<Image, Condition>> batch;
  batch.emplace_back(dgt::make_image(3, 8, 8, 0.0), Condition::none());
  batch.emplace_back(dgt::make_image(3, 8, 8, 0.0), Condition::for_concept(0));
  CHECK(dgt::dm_loss(m, batch, sched, 9) < 1e-15);
}

TEST_CASE("dm_loss of the all-zeros model estimates the unit second moment") {
  const auto sched = dgt::make_schedule(100, dgt::ScheduleKind::kLinearBeta);
  struct ZeroModel {
    dgt::Image eps(const dgt::Image& x, int, const Condition&) const {
      return dgt::Image(x.shape, 0.0);
    }
  };
  ZeroModel m;
  std::vector<std::pair<Image, Condition>> batch;
  for (int i = 0; i < 2; ++i)  // 2 * 3*32*32 = 6144 elements >= 4096
    batch.emplace_back(dgt::gaussian_image({3, 32, 32}, 100 + i), Condition::none());
  const double loss = dgt::dm_loss(m, batch, sched, 31);
  CHECK(loss == Approx(1.0).margin(0.1));
}

TEST_CASE("dm_loss is deterministic and rejects empty batches") {
  const auto ckpt = testutil::tiny_checkpoint();
  std::vector<std::pair<Image, Condition>> batch;
  batch.emplace_back(dgt::gaussian_image({3, 16, 16}, 1), Condition::for_concept(0));
  batch.emplace_back(dgt::gaussian_image({3, 16, 16}, 2), Condition::none());
  const double a = dgt::dm_loss(ckpt, batch, ckpt.schedule(), 77);
  const double b = dgt::dm_loss(ckpt, batch, ckpt.schedule(), 77);
  CHECK(a == b);
  CHECK(a >= 0.0);

  batch.clear();
  CHECK_THROWS_AS(dgt::dm_loss(ckpt, batch, ckpt.schedule(), 1), dgt::ValidationError);
}
