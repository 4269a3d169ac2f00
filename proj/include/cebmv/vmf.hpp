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

// von Mises-Fisher distribution on the unit sphere S^{n-1} in R^n with fixed
// concentration:
//
//   f(z; mu, kappa) = C_n(kappa) exp(kappa mu^T z),
//   C_n(kappa) = kappa^{n/2-1} / ((2 pi)^{n/2} I_{n/2-1}(kappa)).
//
// Sampling uses Wood's rejection sampler for the component w = mu^T z and a
// uniform tangent direction, both drawn in the frame of e_1 and rotated onto
// mu by a Householder reflection. Since kappa is a constant, the draws in the
// e_1 frame do not depend on mu and the reflection carries the whole pathwise
// gradient.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cebmv/bessel.hpp"
#include "cebmv/common.hpp"
#include "cebmv/tensor.hpp"

namespace cebmv {

/// log C_n(kappa).
inline double log_normalizer(int dim, double kappa) {
  if (dim < 2) throw ConfigError("log_normalizer: dimension must be >= 2");
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw NumericError("log_normalizer: kappa must be positive");
  const double v = 0.5 * dim - 1.0;
  return v * std::log(kappa) - 0.5 * dim * std::log(2.0 * M_PI) - log_bessel_i(v, kappa);
}

class VonMisesFisher {
 public:
  VonMisesFisher(std::vector<double> mean_direction, double kappa)
      : mean_(std::move(mean_direction)), kappa_(kappa) {
    if (mean_.size() < 2) throw ConfigError("VonMisesFisher: dimension must be >= 2");
    if (!(kappa_ > 0.0) || !std::isfinite(kappa_)) throw ConfigError("VonMisesFisher: kappa must be positive and finite");
    double s = 0.0;
    for (double m : mean_) s += m * m;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-10) throw NumericError("VonMisesFisher: mean direction is not unit norm");
    log_norm_ = cebmv::log_normalizer(dim(), kappa_);
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  double kappa() const { return kappa_; }
  std::span<const double> mean_direction() const { return mean_; }
  double log_normalizer() const { return log_norm_; }

  /// E[mu^T z] = A_n(kappa).
  double mean_resultant_length() const { return bessel_ratio(dim(), kappa_); }

  double log_prob(std::span<const double> z) const {
    if (z.size() != mean_.size()) throw ShapeError("log_prob: dimension mismatch");
    double norm2 = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      norm2 += z[i] * z[i];
      dot += mean_[i] * z[i];
    }
    const double norm = std::sqrt(norm2);
    if (!(norm > 1e-12)) throw NumericError("log_prob: z has zero norm");
    if (std::abs(norm - 1.0) > 1e-8) {
      log_warning("log_prob: z norm drifted to " + std::to_string(norm) + ", renormalizing");
      dot /= norm;
    }
    return log_norm_ + kappa_ * dot;
  }

 private:
  std::vector<double> mean_;
  double kappa_;
  double log_norm_;
};

/// KL[p || q] = (kappa_p mu_p - kappa_q mu_q)^T A_n(kappa_p) mu_p + log C_n(kappa_p) - log C_n(kappa_q).
inline double kl(const VonMisesFisher& p, const VonMisesFisher& q) {
  if (p.dim() != q.dim()) throw ShapeError("kl: dimension mismatch");
  const auto mp = p.mean_direction();
  const auto mq = q.mean_direction();
  // kappa_p - kappa_q cos = (kappa_p - kappa_q) + kappa_q |mu_p - mu_q|^2 / 2 for unit means;
  // the distance form is exact at p == q and avoids cancellation nearby.
  double sqdist = 0.0;
  for (std::size_t i = 0; i < mp.size(); ++i) sqdist += (mp[i] - mq[i]) * (mp[i] - mq[i]);
  const double a = p.mean_resultant_length();
  const double value = a * ((p.kappa() - q.kappa()) + 0.5 * q.kappa() * sqdist) + p.log_normalizer() - q.log_normalizer();
  // Tiny negative values are rounding.
  return value > 0.0 ? value : 0.0;
}

/// KL between two vMFs with the same kappa, from the cosine of their means.
inline double kl_same_kappa(int dim, double kappa, double cos_means) {
  const double v = kappa * bessel_ratio(dim, kappa) * (1.0 - cos_means);
  return v > 0.0 ? v : 0.0;
}

/// Same-kappa KL from the squared distance between unit means; avoids the
/// cancellation in 1 - cos for nearby means (1 - cos = |mu - mu'|^2 / 2).
inline double kl_same_kappa_sqdist(int dim, double kappa, double sqdist) {
  const double v = 0.5 * kappa * bessel_ratio(dim, kappa) * sqdist;
  return v > 0.0 ? v : 0.0;
}

/// Wood's rejection sampler for w = mu^T z. Returns w; `one_minus_w` receives
/// 1 - w computed without cancellation.
inline double sample_vmf_w(int dim, double kappa, Rng& rng, double* one_minus_w = nullptr) {
  const double m1 = dim - 1.0;
  const double b = m1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double log_one_minus_x0sq = std::log(4.0 * b) - 2.0 * std::log1p(b);
  const double c = kappa * x0 + m1 * log_one_minus_x0sq;
  std::gamma_distribution<double> gamma(0.5 * m1, 1.0);
  for (int iter = 0; iter < 1000; ++iter) {
    const double g1 = gamma(rng);
    const double g2 = gamma(rng);
    const double beta = g1 / (g1 + g2);
    const double denom = 1.0 - (1.0 - b) * beta;
    const double w = (1.0 - (1.0 + b) * beta) / denom;
    // 1 - x0 w = 2b / ((1 + b) denom)
    const double log_one_minus_x0w = std::log(2.0 * b) - std::log1p(b) - std::log(denom);
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    if (kappa * w + m1 * log_one_minus_x0w - c >= std::log(u)) {
      if (one_minus_w) *one_minus_w = 2.0 * b * beta / denom;
      return w;
    }
  }
  throw NumericError("sample_vmf_w: rejection loop exceeded 1000 iterations");
}

/// A draw in the frame of the north pole e_1: [w, sqrt(1 - w^2) v] with v
/// uniform on the unit sphere orthogonal to e_1.
inline std::vector<double> sample_vmf_north(int dim, double kappa, Rng& rng) {
  double one_minus_w = 0.0;
  const double w = sample_vmf_w(dim, kappa, rng, &one_minus_w);
  std::vector<double> v(dim - 1);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = standard_normal(rng);
      norm += x * x;
    }
  } while (norm < 1e-300);
  norm = std::sqrt(norm);
  const double radial = std::sqrt(std::max(0.0, one_minus_w * (1.0 + w)));
  std::vector<double> out(dim);
  out[0] = w;
  for (int i = 1; i < dim; ++i) out[i] = radial * v[i - 1] / norm;
  return out;
}

/// Reparameterized draws z[i] ~ vMF(mu[i], kappa) for every row of `mu`.
/// Gradients flow into `mu` through the Householder reflection only.
inline Tensor sample_vmf_rows(const Tensor& mu, double kappa, Rng& rng) {
  if (mu.rank() != 2) throw ShapeError("sample_vmf_rows: expected [B, n]");
  const std::size_t rows = mu.rows(), dim = mu.cols();
  std::vector<double> base;
  base.reserve(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    auto row = sample_vmf_north(static_cast<int>(dim), kappa, rng);
    base.insert(base.end(), row.begin(), row.end());
  }
  return householder_apply(mu, Tensor::matrix(rows, dim, std::move(base)));
}

/// Single draw from `dist`.
inline std::vector<double> sample(const VonMisesFisher& dist, Rng& rng) {
  const auto mean = dist.mean_direction();
  Tensor mu = Tensor::matrix(1, mean.size(), std::vector<double>(mean.begin(), mean.end()));
  Tensor z = sample_vmf_rows(mu, dist.kappa(), rng);
  return {z.values().begin(), z.values().end()};
}

/// Row-wise log densities log C_n(kappa) + kappa mu[i]^T z[i], differentiable
/// in both arguments.
inline Tensor vmf_log_prob_rows(const Tensor& mu, const Tensor& z, double kappa) {
  const double log_c = log_normalizer(static_cast<int>(mu.cols()), kappa);
  return add_scalar(scale(dot_rows(mu, z), kappa), log_c);
}

}  // namespace cebmv
