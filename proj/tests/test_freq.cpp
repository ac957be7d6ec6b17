#include <catch2/catch.hpp>

#include "degentune/dataset.hpp"
#include "degentune/freq.hpp"
#include "degentune/rng.hpp"

#include <cmath>

using dgt::Image;

namespace {

Image gradient_image(int size, double angle, std::uint64_t /*seed*/) {
  Image img = dgt::make_image(3, size, size);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (ca * x + sa * y) / size;  // smooth global ramp
      for (int c = 0; c < 3; ++c) img.at3(c, y, x) = 1.6 * u - 0.8;
    }
  return img;
}

}  // namespace

TEST_CASE("band_split rejects bad cutoffs") {
  const Image img = dgt::make_image(1, 8, 8, 0.25);
  CHECK_THROWS_AS(dgt::band_split(img, 0.0), dgt::ValidationError);
  CHECK_THROWS_AS(dgt::band_split(img, 1.0), dgt::ValidationError);
}

TEST_CASE("constant image is entirely low band") {
  const Image img = dgt::make_image(3, 16, 16, 0.37);
  const auto bs = dgt::band_split(img, 0.125);
  CHECK(dgt::max_abs_diff(bs.low, img) < 1e-6);
  for (double v : bs.high.data) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("Nyquist checkerboard is entirely high band") {
  Image img = dgt::make_image(1, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) img.at3(0, y, x) = ((x + y) & 1) ? 0.5 : -0.1;
  const double m = dgt::mean(img);
  const auto bs = dgt::band_split(img, 0.9);
  for (double v : bs.low.data) CHECK(v == Approx(m).margin(1e-6));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      CHECK(bs.high.at3(0, y, x) == Approx(img.at3(0, y, x) - m).margin(1e-6));
}

TEST_CASE("low-frequency sinusoid lands entirely in the low band") {
  // analytic DFT oracle: a pure sinusoid at bin k sits at radial frequency
  // k/N, below cutoff * 0.5 for k=2, N=32, cutoff=0.25
  const int n = 32;
  Image img = dgt::make_image(1, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      img.at3(0, y, x) = std::sin(2.0 * 3.14159265358979323846 * 2.0 * x / n);
  const auto bs = dgt::band_split(img, 0.25);
  CHECK(dgt::max_abs_diff(bs.low, img) < 1e-4);
  for (double v : bs.high.data) CHECK(std::abs(v) < 1e-4);
}

TEST_CASE("low + high reconstructs the input (property)") {
  dgt::SplitMix64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Image img = dgt::make_image(3, 32, 32);
    for (double& v : img.data) v = rng.uniform() * 2.0 - 1.0;
    const double cutoff = 0.1 + 0.8 * rng.uniform();
    const auto bs = dgt::band_split(img, cutoff);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(bs.low.data[i] + bs.high.data[i] - img.data[i]) < 1e-5);
  }
}

TEST_CASE("band_split works on non-power-of-two sizes") {
  Image img = dgt::make_image(1, 12, 20, 0.2);
  img.at3(0, 5, 7) = 0.9;
  const auto bs = dgt::band_split(img, 0.5);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(bs.low.data[i] + bs.high.data[i] - img.data[i]) < 1e-5);
}

TEST_CASE("band energy report: constant image keeps zero AC low energy") {
  const std::vector<Image> imgs = {dgt::make_image(3, 32, 32, -0.3)};
  const auto rows = dgt::band_energy_report(imgs, {4, 4}, 5, 0.125);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].low_before == Approx(0.0).margin(1e-9));
  CHECK(rows[0].low_after == Approx(rows[0].low_before).margin(1e-9));
}

TEST_CASE("band energy report: scrambling a smooth gradient destroys low band") {
  std::vector<Image> imgs;
  for (int i = 0; i < 8; ++i) imgs.push_back(gradient_image(32, 0.35 * i, i));
  const auto rows = dgt::band_energy_report(imgs, {4, 4}, 11, 0.125);
  for (const auto& r : rows) {
    CHECK(r.low_before > 0.0);
    CHECK(r.low_after < r.low_before);
  }
}

TEST_CASE("band energy report: white noise keeps its high band") {
  dgt::GaussRng g(17);
  std::vector<Image> imgs;
  for (int i = 0; i < 6; ++i) {
    Image img = dgt::make_image(3, 32, 32);
    for (double& v : img.data) v = 0.4 * g.next();
    imgs.push_back(std::move(img));
  }
  const auto rows = dgt::band_energy_report(imgs, {4, 4}, 3, 0.125);
  for (const auto& r : rows) {
    const double ratio = r.high_after / r.high_before;
    CHECK(ratio > 0.9);
    CHECK(ratio < 1.1);
  }
}

TEST_CASE("finer grids retain no more low-band energy on smooth gradients") {
  std::vector<Image> imgs;
  for (int i = 0; i < 24; ++i) imgs.push_back(gradient_image(32, 0.26 * i + 0.1, i));

  auto mean_low_after = [&](const dgt::GridSpec& grid) {
    const auto rows = dgt::band_energy_report(imgs, grid, 77, 0.125);
    double s = 0.0;
    for (const auto& r : rows) s += r.low_after;
    return s / static_cast<double>(rows.size());
  };

  const double e2 = mean_low_after({2, 2});
  const double e4 = mean_low_after({4, 4});
  const double e8 = mean_low_after({8, 8});
  CHECK(e4 <= e2 * 1.0001);
  CHECK(e8 <= e4 * 1.0001);
}

TEST_CASE("spectral property over procedurally generated concept images") {
  // >= 100 concept renders at the default 4x4 grid: scrambling must cut mean
  // low-band energy to <= 0.6x while keeping the high band within [0.8, 1.2]
  const auto specs = dgt::default_concept_specs(6);
  std::vector<Image> imgs;
  for (int i = 0; i < 102; ++i) {
    const auto& s = specs[static_cast<std::size_t>(i % 6)];
    imgs.push_back(dgt::render_concept(s, {}, 32, dgt::mix_seed(900, 1, static_cast<std::uint64_t>(i))));
  }
  const auto rows = dgt::band_energy_report(imgs, {4, 4}, 13, 0.125);
  double lo_before = 0.0, lo_after = 0.0, hi_ratio = 0.0;
  for (const auto& r : rows) {
    lo_before += r.low_before;
    lo_after += r.low_after;
    hi_ratio += r.high_after / r.high_before;
  }
  hi_ratio /= static_cast<double>(rows.size());
  CHECK(lo_after <= 0.6 * lo_before);
  CHECK(hi_ratio >= 0.8);
  CHECK(hi_ratio <= 1.2);
}
