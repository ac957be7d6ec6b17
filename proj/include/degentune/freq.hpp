#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/rng.hpp"
#include "degentune/scramble.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// In-place radix-2 FFT for power-of-two n, naive DFT otherwise (images here
/// are 32x32, so the fallback only matters for odd-sized test inputs).
inline void fft1d(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n <= 1) return;
  const double sign = inverse ? 1.0 : -1.0;
  if (!is_pow2(n)) {
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      std::complex<double> acc(0.0, 0.0);
      for (int j = 0; j < n; ++j) {
        const double ang = sign * 2.0 * 3.14159265358979323846 * k * j / n;
        acc += a[static_cast<std::size_t>(j)] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out[static_cast<std::size_t>(k)] = acc;
    }
    a = std::move(out);
    return;
  }
  // bit-reversal
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * 3.14159265358979323846 / len;
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        const auto u = a[static_cast<std::size_t>(i + j)];
        const auto v = a[static_cast<std::size_t>(i + j + len / 2)] * w;
        a[static_cast<std::size_t>(i + j)] = u + v;
        a[static_cast<std::size_t>(i + j + len / 2)] = u - v;
        w *= wl;
      }
    }
  }
}

inline void fft2d(std::vector<std::complex<double>>& plane, int h, int w, bool inverse) {
  std::vector<std::complex<double>> line;
  line.resize(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) line[static_cast<std::size_t>(x)] = plane[static_cast<std::size_t>(y) * w + x];
    fft1d(line, inverse);
    for (int x = 0; x < w; ++x) plane[static_cast<std::size_t>(y) * w + x] = line[static_cast<std::size_t>(x)];
  }
  line.resize(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = plane[static_cast<std::size_t>(y) * w + x];
    fft1d(line, inverse);
    for (int y = 0; y < h; ++y) plane[static_cast<std::size_t>(y) * w + x] = line[static_cast<std::size_t>(y)];
  }
  if (inverse) {
    const double scale = 1.0 / (static_cast<double>(h) * w);
    for (auto& z : plane) z *= scale;
  }
}

/// Radial frequency of DFT bin (ky,kx) in cycles/pixel, folded to [0, 0.5]
/// per axis.
inline double radial_freq(int ky, int kx, int h, int w) {
  const int fy = ky <= h / 2 ? ky : h - ky;
  const int fx = kx <= w / 2 ? kx : w - kx;
  const double ry = static_cast<double>(fy) / h;
  const double rx = static_cast<double>(fx) / w;
  return std::sqrt(ry * ry + rx * rx);
}

}  // namespace detail

/// Complementary low/high frequency decomposition. low holds every DFT
/// coefficient with radial frequency <= cutoff * Nyquist (DC included);
/// high = img - low, so low + high reconstructs the input exactly.
struct BandSplit {
  Image low;
  Image high;
  double cutoff = 0.0;
};

inline BandSplit band_split(const Image& img, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0))
    throw ValidationError("band_split: cutoff must be in (0,1)");
  if (img.ndim() != 3) throw ValidationError("band_split: expected {C,H,W}");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double threshold = cutoff * 0.5;  // Nyquist = 0.5 cycles/pixel

  BandSplit out;
  out.cutoff = cutoff;
  out.low = make_image(c, h, w);
  out.high = make_image(c, h, w);

  std::vector<std::complex<double>> plane(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        plane[static_cast<std::size_t>(y) * w + x] = {img.at3(ch, y, x), 0.0};
    detail::fft2d(plane, h, w, false);
    for (int ky = 0; ky < h; ++ky)
      for (int kx = 0; kx < w; ++kx)
        if (detail::radial_freq(ky, kx, h, w) > threshold)
          plane[static_cast<std::size_t>(ky) * w + kx] = {0.0, 0.0};
    detail::fft2d(plane, h, w, true);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double lo = plane[static_cast<std::size_t>(y) * w + x].real();
        out.low.at3(ch, y, x) = lo;
        out.high.at3(ch, y, x) = img.at3(ch, y, x) - lo;
      }
  }
  return out;
}

/// Band energies with the DC term excluded. Tile permutations preserve the
/// pixel multiset, hence the mean, so including DC would mask how much of the
/// structured low-frequency content a scramble destroys.
struct BandEnergy {
  double low = 0.0;   // AC energy of the low band
  double high = 0.0;  // energy of the high band (mean-free by construction)
};

inline BandEnergy band_energy(const Image& img, double cutoff) {
  const BandSplit bs = band_split(img, cutoff);
  BandEnergy e;
  const double m = mean(bs.low);
  for (double v : bs.low.data) e.low += (v - m) * (v - m);
  e.high = sum_squares(bs.high);
  return e;
}

struct BandEnergyRow {
  std::size_t index = 0;
  std::uint64_t perm_seed = 0;
  double low_before = 0.0;
  double low_after = 0.0;
  double high_before = 0.0;
  double high_after = 0.0;
};

/// Scrambles each image with its own seeded permutation and reports band
/// energies before/after. CSV-ready rows.
inline std::vector<BandEnergyRow> band_energy_report(
    const std::vector<Image>& images, const GridSpec& grid, std::uint64_t seed,
    double cutoff) {
  std::vector<BandEnergyRow> rows;
  rows.reserve(images.size());
  const int n = grid.cells_y * grid.cells_x;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::uint64_t perm_seed = mix_seed(seed, seed_tag::kPermutation, i);
    const TilePermutation perm = make_permutation(perm_seed, n);
    const Image scrambled = scramble(images[i], grid, perm);
    BandEnergyRow row;
    row.index = i;
    row.perm_seed = perm_seed;
    const BandEnergy before = band_energy(images[i], cutoff);
    const BandEnergy after = band_energy(scrambled, cutoff);
    row.low_before = before.low;
    row.low_after = after.low;
    row.high_before = before.high;
    row.high_after = after.high;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dgt
