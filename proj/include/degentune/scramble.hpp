#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/rng.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

struct GridSpec {
  int cells_y = 4;
  int cells_x = 4;

  bool operator==(const GridSpec&) const = default;
};

inline std::string to_string(const GridSpec& g) {
  return std::to_string(g.cells_y) + "x" + std::to_string(g.cells_x);
}

/// Parses "RxC" (e.g. "4x4").
inline GridSpec parse_grid(const std::string& s) {
  const auto pos = s.find('x');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= s.size())
    throw ValidationError("grid must look like RxC, got '" + s + "'");
  GridSpec g;
  try {
    g.cells_y = std::stoi(s.substr(0, pos));
    g.cells_x = std::stoi(s.substr(pos + 1));
  } catch (const std::exception&) {
    throw ValidationError("grid must look like RxC, got '" + s + "'");
  }
  if (g.cells_y < 1 || g.cells_x < 1)
    throw ValidationError("grid cells must be >= 1, got '" + s + "'");
  return g;
}

/// A bijection on tile indices. mapping[k] gives the source tile for output
/// slot k.
struct TilePermutation {
  std::vector<int> mapping;

  bool is_identity() const {
    for (std::size_t i = 0; i < mapping.size(); ++i)
      if (mapping[i] != static_cast<int>(i)) return false;
    return true;
  }

  bool is_bijection() const {
    std::vector<char> seen(mapping.size(), 0);
    for (int v : mapping) {
      if (v < 0 || v >= static_cast<int>(mapping.size()) || seen[v]) return false;
      seen[v] = 1;
    }
    return true;
  }

  TilePermutation inverse() const {
    TilePermutation inv;
    inv.mapping.assign(mapping.size(), 0);
    for (std::size_t i = 0; i < mapping.size(); ++i)
      inv.mapping[static_cast<std::size_t>(mapping[i])] = static_cast<int>(i);
    return inv;
  }
};

/// Draws a non-identity permutation of n tiles: Fisher-Yates over splitmix64
/// with j = next() % (i+1), whole-permutation redraw (same stream) if identity
/// comes up. n = 1 has no non-identity permutation and is rejected.
inline TilePermutation make_permutation(std::uint64_t seed, int n) {
  if (n < 1) throw ValidationError("make_permutation: n must be >= 1");
  if (n == 1) throw DegenerateGridError();
  SplitMix64 rng(seed);
  TilePermutation perm;
  perm.mapping.resize(static_cast<std::size_t>(n));
  do {
    std::iota(perm.mapping.begin(), perm.mapping.end(), 0);
    for (int i = n - 1; i >= 1; --i) {
      const int j = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(i) + 1));
      std::swap(perm.mapping[static_cast<std::size_t>(i)],
                perm.mapping[static_cast<std::size_t>(j)]);
    }
  } while (perm.is_identity());
  return perm;
}

inline void check_grid(const Image& img, const GridSpec& grid) {
  if (img.ndim() != 3)
    throw InvalidGridError("scramble: expected a {C,H,W} image");
  if (grid.cells_y < 1 || grid.cells_x < 1)
    throw InvalidGridError("scramble: grid cells must be >= 1");
  if (img.dim(1) % grid.cells_y != 0 || img.dim(2) % grid.cells_x != 0)
    throw InvalidGridError("scramble: image " + std::to_string(img.dim(1)) +
                           "x" + std::to_string(img.dim(2)) +
                           " not divisible by grid " + to_string(grid));
}

/// Tile permutation: output tile k is input tile perm.mapping[k]. Pixel
/// multiset is preserved exactly.
inline Image scramble(const Image& img, const GridSpec& grid,
                      const TilePermutation& perm) {
  check_grid(img, grid);
  const int n = grid.cells_y * grid.cells_x;
  if (static_cast<int>(perm.mapping.size()) != n)
    throw InvalidGridError("scramble: permutation size " +
                           std::to_string(perm.mapping.size()) +
                           " does not match grid " + to_string(grid));
  if (!perm.is_bijection())
    throw InvalidGridError("scramble: mapping is not a bijection");

  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int th = h / grid.cells_y, tw = w / grid.cells_x;
  Image out = make_image(c, h, w);
  for (int k = 0; k < n; ++k) {
    const int src = perm.mapping[static_cast<std::size_t>(k)];
    const int dy = (k / grid.cells_x) * th, dx = (k % grid.cells_x) * tw;
    const int sy = (src / grid.cells_x) * th, sx = (src % grid.cells_x) * tw;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          out.at3(ch, dy + y, dx + x) = img.at3(ch, sy + y, sx + x);
  }
  return out;
}

/// Exact inverse of scramble with the same grid and permutation.
inline Image unscramble(const Image& img, const GridSpec& grid,
                        const TilePermutation& perm) {
  return scramble(img, grid, perm.inverse());
}

}  // namespace dgt
