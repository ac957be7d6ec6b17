#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "degentune/errors.hpp"

namespace dgt {

enum class ScheduleKind { kLinearBeta, kCosine };

inline std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kLinearBeta ? "linear_beta" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear_beta") return ScheduleKind::kLinearBeta;
  if (s == "cosine") return ScheduleKind::kCosine;
  throw ValidationError("unknown schedule kind: " + s);
}

/// Variance-preserving schedule: x_t = alpha[t] * x0 + sigma[t] * eps with
/// sigma[t] = sqrt(1 - alpha[t]^2). Index 0 is the clean endpoint
/// (alpha[0] = 1), index T the near-noise endpoint (alpha[T] < 0.05).
struct NoiseSchedule {
  int T = 0;
  ScheduleKind kind = ScheduleKind::kLinearBeta;
  std::vector<double> alpha;  // size T+1, strictly decreasing
  std::vector<double> sigma;  // size T+1, sigma[t] = sqrt(1 - alpha[t]^2)

  bool valid() const {
    if (T < 1 || alpha.size() != static_cast<std::size_t>(T + 1) ||
        sigma.size() != alpha.size())
      return false;
    if (!(alpha[0] > 0.999) || !(alpha[static_cast<std::size_t>(T)] < 0.05))
      return false;
    for (int t = 0; t < T; ++t)
      if (!(alpha[t + 1] < alpha[t])) return false;
    for (int t = 0; t <= T; ++t) {
      const double vp = sigma[t] * sigma[t] + alpha[t] * alpha[t];
      if (std::abs(vp - 1.0) > 1e-9) return false;
    }
    return true;
  }
};

namespace detail {

/// Linear beta ramp, 1e-4 -> 0.02 over 1000 steps. For other T the betas are
/// scaled by 1000/T so the terminal signal level stays in the same regime.
/// If T is so small that alpha[T] would not drop below 0.05, the betas are
/// further scaled up until it does.
inline std::vector<double> linear_betas(int T) {
  const double base_lo = 1e-4, base_hi = 0.02;
  const double scale0 = 1000.0 / static_cast<double>(T);
  std::vector<double> betas(static_cast<std::size_t>(T));
  auto fill = [&](double scale) {
    for (int t = 1; t <= T; ++t) {
      const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
      double b = (base_lo + (base_hi - base_lo) * frac) * scale;
      if (b > 0.999) b = 0.999;
      betas[static_cast<std::size_t>(t - 1)] = b;
    }
  };
  auto alpha_T = [&]() {
    double prod = 1.0;
    for (double b : betas) prod *= (1.0 - b);
    return std::sqrt(prod);
  };
  fill(scale0);
  double scale = scale0;
  while (alpha_T() >= 0.05 && scale < 1e7) {
    scale *= 1.5;
    fill(scale);
  }
  return betas;
}

}  // namespace detail

/// Builds a variance-preserving schedule of the requested kind.
inline NoiseSchedule make_schedule(int T, ScheduleKind kind) {
  if (T < 1) throw ValidationError("make_schedule: T must be >= 1");
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.alpha.assign(static_cast<std::size_t>(T + 1), 0.0);
  s.sigma.assign(static_cast<std::size_t>(T + 1), 0.0);
  s.alpha[0] = 1.0;

  if (kind == ScheduleKind::kLinearBeta) {
    const std::vector<double> betas = detail::linear_betas(T);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
      prod *= (1.0 - betas[static_cast<std::size_t>(t - 1)]);
      s.alpha[static_cast<std::size_t>(t)] = std::sqrt(prod);
    }
  } else {
    // Squared-cosine ramp on the cumulative signal power.
    const double kOffset = 0.008;
    auto f = [&](double t) {
      const double x = (t / T + kOffset) / (1.0 + kOffset) * (3.14159265358979323846 / 2.0);
      const double c = std::cos(x);
      return c * c;
    };
    const double f0 = f(0.0);
    for (int t = 1; t <= T; ++t) {
      double abar = f(static_cast<double>(t)) / f0;
      abar = std::max(abar, 1e-12);
      double a = std::sqrt(abar);
      // the floor above can flatten the tail; keep the sequence strictly
      // decreasing
      const double prev = s.alpha[static_cast<std::size_t>(t - 1)];
      if (a >= prev) a = prev * (1.0 - 1e-9);
      s.alpha[static_cast<std::size_t>(t)] = a;
    }
  }

  for (int t = 0; t <= T; ++t) {
    const double a = s.alpha[static_cast<std::size_t>(t)];
    s.sigma[static_cast<std::size_t>(t)] = std::sqrt(std::max(0.0, 1.0 - a * a));
  }
  if (!s.valid())
    throw RuntimeError("make_schedule: construction failed invariants (T=" +
                       std::to_string(T) + ")");
  return s;
}

inline ScheduleKind schedule_kind(const NoiseSchedule& s) { return s.kind; }

}  // namespace dgt
