#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "degentune/errors.hpp"

namespace dgt {

/// 64-byte-aligned allocator for tensor storage. Vectorized GEMM kernels
/// pick code paths by pointer alignment; pinning the alignment makes results
/// bit-identical across runs regardless of heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(T) + kAlign - 1) / kAlign) * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  // value-initialization is skipped; Tensor zeroes explicitly where needed,
  // and the hot ops overwrite their buffers entirely
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <class U>
  struct rebind {
    using other = AlignedAllocator<U>;
  };
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
  friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. Shapes are small vectors; images are
/// {C,H,W}, feature matrices {N,D}. All math in this project runs in double
/// and is only narrowed to f32 at the checkpoint boundary.
struct Tensor {
  std::vector<int> shape;
  AlignedDoubles data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  }

  /// Allocation without the zero fill, for buffers every element of which is
  /// about to be written.
  static Tensor uninit(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.resize(static_cast<std::size_t>(numel_of(t.shape)));
    return t;
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // {C,H,W} accessors
  double& at3(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  // {N,M} accessors
  double& at2(int r, int c) {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }
  double at2(int r, int c) const {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* where) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(where) + ": shape mismatch " +
                          shape_str(a.shape) + " vs " + shape_str(b.shape));
}

/// Images are {C,H,W} tensors with values nominally in [-1,1]; intermediate
/// diffusion states reuse the same type and are unbounded.
using Image = Tensor;

inline Image make_image(int channels, int height, int width, double fill = 0.0) {
  return Tensor({channels, height, width}, fill);
}

inline bool is_image(const Tensor& t) { return t.ndim() == 3; }

inline Image clamp_unit(Image img) {
  for (double& v : img.data) v = v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
  return img;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double sum_squares(const Tensor& a) { return dot(a, a); }

inline double mean(const Tensor& a) {
  if (a.data.empty()) return 0.0;
  double s = 0.0;
  for (double v : a.data) s += v;
  return s / static_cast<double>(a.data.size());
}

/// Pearson correlation over all elements; 0 when either side is constant.
inline double pearson(const Tensor& a, const Tensor& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double da = a.data[i] - ma, db = b.data[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

}  // namespace dgt
