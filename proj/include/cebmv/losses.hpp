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

// Self-supervised objectives.
//
//   simclr    bidirectional InfoNCE with temperature tau = 1 / kappa_b
//   c_simclr  per direction: z ~ vMF(r_x, kappa_e), loss = beta I(X;Z|Y) - I(Y;Z)
//             with the CatGen decoder over the batch using vMF(r_y, kappa_b)
//   byol      w_byol ||mu_e - y'||^2 against a stop-gradient target
//   c_byol    w_byol ||l(z) - y'||^2 + beta I(X;Z|Y), z ~ vMF(mu_e, kappa_e)
//
// The residual information I(X;Z|Y) is estimated per sample by
// log e(z|x) - log b(z|y) at a single reparameterized draw z.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cebmv/common.hpp"
#include "cebmv/tensor.hpp"
#include "cebmv/vmf.hpp"

namespace cebmv {

enum class Variant { kSimclr, kCSimclr, kByol, kCByol };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kSimclr: return "simclr";
    case Variant::kCSimclr: return "c_simclr";
    case Variant::kByol: return "byol";
    case Variant::kCByol: return "c_byol";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "simclr") return Variant::kSimclr;
  if (s == "c_simclr") return Variant::kCSimclr;
  if (s == "byol") return Variant::kByol;
  if (s == "c_byol") return Variant::kCByol;
  throw ConfigError("unknown variant '" + s + "' (expected simclr, c_simclr, byol, c_byol)");
}

inline bool is_byol_family(Variant v) { return v == Variant::kByol || v == Variant::kCByol; }
inline bool is_compressed(Variant v) { return v == Variant::kCSimclr || v == Variant::kCByol; }

struct LossConfig {
  Variant variant = Variant::kCSimclr;
  double beta = 1.0;
  double kappa_e = 1024.0;
  double kappa_b = 10.0;
  double kappa_d = 4.0;
  /// z := mean direction instead of a vMF draw.
  bool deterministic = false;

  double w_byol() const { return kappa_d / 2.0; }
  double tau() const { return 1.0 / kappa_b; }

  /// Defaults per variant: kappa_e = 1024 for the SimCLR family and 16384
  /// for the BYOL family, kappa_b = 10, beta = 1, w_byol = 2.
  static LossConfig defaults(Variant v) {
    LossConfig c;
    c.variant = v;
    c.kappa_e = is_byol_family(v) ? 16384.0 : 1024.0;
    return c;
  }

  void validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("loss.beta must be >= 0");
    if (!(kappa_e > 0.0) || !(kappa_b > 0.0) || !(kappa_d > 0.0)) {
      throw ConfigError("loss kappas must be positive");
    }
  }
};

/// Batch-level loss with its components. Scalars are batch means summed over
/// both directions; per-sample vectors are likewise summed over directions.
struct LossBreakdown {
  Tensor total;
  double total_value = 0.0;
  double i_xzy = 0.0;
  /// i_yz for the SimCLR family, the weighted regression term for BYOL.
  double second_term = 0.0;
  std::vector<double> per_sample_i_xzy;
  std::vector<double> per_sample_second;
};

namespace detail {

inline void require_unit_rows(const Tensor& t, const char* what) {
  const std::size_t r = t.rows(), c = t.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += t[i * c + j] * t[i * c + j];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6) {
      throw NumericError(std::string(what) + ": row " + std::to_string(i) + " is not unit norm");
    }
  }
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline void add_into(std::vector<double>& acc, const Tensor& t) {
  if (acc.empty()) acc.assign(t.size(), 0.0);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
}

}  // namespace detail

struct InfoNce {
  Tensor h_yz;  // [B] cross-entropy of the positive under the batch softmax
  Tensor i_yz;  // [B] log B - h_yz
};

/// CatGen / InfoNCE over the batch: logits[i][j] = kappa_b z_i^T m_j.
inline InfoNce info_nce(const Tensor& z, const Tensor& mean_dirs, double kappa_b) {
  detail::require_rank(z, 2, "info_nce");
  detail::require_same(z, mean_dirs, "info_nce");
  detail::require_unit_rows(z, "info_nce");
  detail::require_unit_rows(mean_dirs, "info_nce");
  const double log_b = std::log(static_cast<double>(z.rows()));
  Tensor logits = scale(matmul(z, transpose(mean_dirs)), kappa_b);
  Tensor h = scale(diagonal(log_softmax_rows(logits)), -1.0);
  Tensor i = add_scalar(scale(h, -1.0), log_b);
  return {h, i};
}

/// Bidirectional SimCLR objective: mean_i [L_NCE(r_x -> r_y) + L_NCE(r_y -> r_x)].
inline Tensor simclr_loss(const Tensor& r_x, const Tensor& r_y, double tau) {
  const double kappa = 1.0 / tau;
  return add(mean(info_nce(r_x, r_y, kappa).h_yz), mean(info_nce(r_y, r_x, kappa).h_yz));
}

/// Bidirectional C-SimCLR objective. One fresh z per view and direction.
inline LossBreakdown c_simclr_loss(const Tensor& r_x, const Tensor& r_y, const LossConfig& cfg, Rng& rng) {
  detail::require_same(r_x, r_y, "c_simclr_loss");
  LossBreakdown out;
  std::vector<Tensor> directions;
  auto one_direction = [&](const Tensor& a, const Tensor& b) {
    Tensor z = cfg.deterministic ? a : sample_vmf_rows(a, cfg.kappa_e, rng);
    Tensor i_xzy = sub(vmf_log_prob_rows(a, z, cfg.kappa_e), vmf_log_prob_rows(b, z, cfg.kappa_b));
    InfoNce nce = info_nce(z, b, cfg.kappa_b);
    detail::add_into(out.per_sample_i_xzy, i_xzy);
    detail::add_into(out.per_sample_second, nce.i_yz);
    directions.push_back(mean(sub(scale(i_xzy, cfg.beta), nce.i_yz)));
  };
  one_direction(r_x, r_y);
  one_direction(r_y, r_x);
  out.total = add(directions[0], directions[1]);
  out.total_value = out.total.item();
  const double n = static_cast<double>(r_x.rows());
  for (double v : out.per_sample_i_xzy) out.i_xzy += v / n;
  for (double v : out.per_sample_second) out.second_term += v / n;
  return out;
}

/// Mean over rows of w_byol ||mu_e - y'||^2. `y_prime` must not carry a gradient.
inline Tensor byol_loss(const Tensor& mu_e, const Tensor& y_prime, double w_byol) {
  detail::require_same(mu_e, y_prime, "byol_loss");
  if (y_prime.requires_grad()) throw Error("byol_loss: target must be produced under stop_gradient");
  detail::require_unit_rows(mu_e, "byol_loss");
  detail::require_unit_rows(y_prime, "byol_loss");
  return scale(mean(sum_rows(square(sub(mu_e, y_prime)))), w_byol);
}

/// simclr_loss with its i_yz diagnostics, for the training loop.
inline LossBreakdown simclr_breakdown(const Tensor& r_x, const Tensor& r_y, double tau) {
  LossBreakdown out;
  const double kappa = 1.0 / tau;
  InfoNce fwd = info_nce(r_x, r_y, kappa);
  InfoNce bwd = info_nce(r_y, r_x, kappa);
  out.total = add(mean(fwd.h_yz), mean(bwd.h_yz));
  out.total_value = out.total.item();
  out.per_sample_i_xzy.assign(r_x.rows(), 0.0);
  detail::add_into(out.per_sample_second, fwd.i_yz);
  detail::add_into(out.per_sample_second, bwd.i_yz);
  for (double v : out.per_sample_second) out.second_term += v / static_cast<double>(r_x.rows());
  return out;
}

/// Symmetric BYOL objective byol_loss(x -> x') + byol_loss(x' -> x).
inline LossBreakdown byol_breakdown(const Tensor& mu_e, const Tensor& y_prime, const Tensor& mu_e_swapped,
                                    const Tensor& y_swapped, double w_byol) {
  LossBreakdown out;
  out.total = add(byol_loss(mu_e, y_prime, w_byol), byol_loss(mu_e_swapped, y_swapped, w_byol));
  out.total_value = out.total.item();
  out.second_term = out.total_value;
  out.per_sample_i_xzy.assign(mu_e.rows(), 0.0);
  detail::add_into(out.per_sample_second, scale(sum_rows(square(sub(mu_e, y_prime))), w_byol));
  detail::add_into(out.per_sample_second, scale(sum_rows(square(sub(mu_e_swapped, y_swapped))), w_byol));
  return out;
}

/// -log d(y'|z) for the vMF decoder d(y'|z) = vMF(y'; y_hat, kappa_d), per row.
inline Tensor decoder_nll(const Tensor& y_hat, const Tensor& y_prime, double kappa_d) {
  return scale(vmf_log_prob_rows(y_hat, y_prime, kappa_d), -1.0);
}

/// Inputs for one direction of C-BYOL (Fig. 2 wiring). `mu_b` and `y_prime`
/// come from stop-gradient target outputs; `mu_b` may still carry gradients
/// into the m head.
struct ByolDirection {
  Tensor mu_e;     // normalize(q(f(x)))
  Tensor mu_b;     // normalize(m(sg(normalize(f_target(x)))))
  Tensor y_prime;  // sg(normalize(f_target(x')))
};

using HeadFn = std::function<Tensor(const Tensor&)>;

/// Bidirectional C-BYOL objective: sum over the two directions of
/// mean_i [w_byol ||normalize(l(z_i)) - y'_i||^2 + beta (log e(z_i|x) - log b(z_i|y))].
inline LossBreakdown c_byol_loss(const ByolDirection& forward, const ByolDirection& backward,
                                 const HeadFn& l_head, const LossConfig& cfg, Rng& rng) {
  LossBreakdown out;
  std::vector<Tensor> directions;
  for (const ByolDirection* d : {&forward, &backward}) {
    detail::require_unit_rows(d->mu_e, "c_byol_loss");
    detail::require_unit_rows(d->mu_b, "c_byol_loss");
    if (d->y_prime.requires_grad()) throw Error("c_byol_loss: y' must be produced under stop_gradient");
    Tensor z = cfg.deterministic ? d->mu_e : sample_vmf_rows(d->mu_e, cfg.kappa_e, rng);
    Tensor y_hat = l2_normalize(l_head(z));
    Tensor regression = scale(sum_rows(square(sub(y_hat, d->y_prime))), cfg.w_byol());
    Tensor i_xzy = sub(vmf_log_prob_rows(d->mu_e, z, cfg.kappa_e), vmf_log_prob_rows(d->mu_b, z, cfg.kappa_b));
    detail::add_into(out.per_sample_i_xzy, i_xzy);
    detail::add_into(out.per_sample_second, regression);
    directions.push_back(mean(add(regression, scale(i_xzy, cfg.beta))));
  }
  out.total = add(directions[0], directions[1]);
  out.total_value = out.total.item();
  const double n = static_cast<double>(forward.mu_e.rows());
  for (double v : out.per_sample_i_xzy) out.i_xzy += v / n;
  for (double v : out.per_sample_second) out.second_term += v / n;
  return out;
}

}  // namespace cebmv
