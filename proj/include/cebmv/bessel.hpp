// Copyright 2026 The cebmv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// log I_v(x), the modified Bessel function of the first kind, evaluated in
// log space for v in [0, 512] and x in (0, 1e5].
//
// Two regimes:
//   * x < max(8, v/2): ascending power series, all terms positive.
//   * otherwise: Debye uniform asymptotic expansion at an order V >= 60,
//     followed (when v < 60) by the downward ratio recurrence
//         I_{k-1}/I_k = 2k/x + I_{k+1}/I_k
//     which is stable in the downward direction.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cebmv/common.hpp"

namespace cebmv {

namespace detail {

inline constexpr double kMaxBesselOrder = 512.0;
inline constexpr double kMaxBesselArg = 1e5;
inline constexpr double kDebyeMinOrder = 60.0;
inline constexpr int kDebyeTerms = 9;

/// Coefficients of the Debye polynomials U_k(p), k < kDebyeTerms, built from
///   U_{k+1}(p) = p^2 (1 - p^2) U_k'(p) / 2 + (1/8) int_0^p (1 - 5 t^2) U_k(t) dt.
inline const std::vector<std::vector<double>>& debye_polynomials() {
  static const std::vector<std::vector<double>> polys = [] {
    std::vector<std::vector<double>> u{{1.0}};
    for (int k = 0; k + 1 < kDebyeTerms; ++k) {
      const auto& prev = u.back();
      std::vector<double> next(prev.size() + 3, 0.0);
      // p^2 (1 - p^2) U'(p) / 2
      for (std::size_t i = 1; i < prev.size(); ++i) {
        const double d = static_cast<double>(i) * prev[i];
        next[i + 1] += 0.5 * d;
        next[i + 3] -= 0.5 * d;
      }
      // (1/8) int_0^p (1 - 5 t^2) U(t) dt
      for (std::size_t i = 0; i < prev.size(); ++i) {
        next[i + 1] += prev[i] / (8.0 * static_cast<double>(i + 1));
        next[i + 3] -= 5.0 * prev[i] / (8.0 * static_cast<double>(i + 3));
      }
      u.push_back(std::move(next));
    }
    return u;
  }();
  return polys;
}

inline double log_bessel_series(double v, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double tail = 0.0;  // series minus its leading 1
  for (int k = 0; k < 100000; ++k) {
    term *= q / ((k + 1.0) * (k + 1.0 + v));
    tail += term;
    if (term < (1.0 + tail) * 1e-17) break;
  }
  return v * std::log(0.5 * x) - std::lgamma(v + 1.0) + std::log1p(tail);
}

inline double log_bessel_debye(double v, double x) {
  const double z = x / v;
  const double root = std::sqrt(1.0 + z * z);
  const double p = 1.0 / root;
  // eta = sqrt(1 + z^2) + log(z / (1 + sqrt(1 + z^2)))
  const double eta = root + std::log(z) - std::log1p(root);
  const auto& polys = debye_polynomials();
  double series = 0.0;
  double vpow = 1.0;
  for (const auto& poly : polys) {
    double u = 0.0;
    for (auto it = poly.rbegin(); it != poly.rend(); ++it) u = u * p + *it;
    series += u / vpow;
    vpow *= v;
  }
  return v * eta - 0.5 * std::log(2.0 * M_PI * v) + 0.5 * std::log(p) + std::log(series);
}

}  // namespace detail

/// log I_v(x) with relative error around 1e-12 over v in [0, 512], x in (0, 1e5].
inline double log_bessel_i(double v, double x) {
  if (!(v >= 0.0 && v <= detail::kMaxBesselOrder) || !(x > 0.0 && x <= detail::kMaxBesselArg)) {
    throw NumericError("log_bessel_i: argument out of range (v=" + std::to_string(v) +
                       ", x=" + std::to_string(x) + ")");
  }
  if (x < std::max(8.0, 0.5 * v)) return detail::log_bessel_series(v, x);
  if (v >= detail::kDebyeMinOrder) return detail::log_bessel_debye(v, x);

  const int steps = static_cast<int>(std::ceil(detail::kDebyeMinOrder - v));
  const double top = v + steps;
  const double log_top = detail::log_bessel_debye(top, x);
  // ratio = I_{k+1}/I_k, starting at k = top.
  double ratio = std::exp(detail::log_bessel_debye(top + 1.0, x) - log_top);
  double log_sum = 0.0;
  for (int i = steps; i >= 1; --i) {
    const double k = v + i;
    ratio = 1.0 / (2.0 * k / x + ratio);  // now I_k / I_{k-1}
    log_sum += std::log(ratio);
  }
  return log_top - log_sum;
}

/// Mean resultant length A_n(kappa) = I_{n/2}(kappa) / I_{n/2-1}(kappa).
inline double bessel_ratio(int dim, double kappa) {
  const double v = 0.5 * dim - 1.0;
  return std::exp(log_bessel_i(v + 1.0, kappa) - log_bessel_i(v, kappa));
}

}  // namespace cebmv
