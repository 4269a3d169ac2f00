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

// Local smoothness of the stochastic encoder e(z|x) = vMF(mu(x), kappa).
//
// For a pair (x, x + dx) the log-density ratio log e(z|x) - log e(z|x + dx)
// is kappa (mu(x) - mu(x + dx))^T z; its mean under z ~ e(.|x) is the KL
// divergence, so KL / |dx| is the z-averaged local estimate and
// max(KL_fwd, KL_bwd) / |dx|^2 lower-bounds the squared local constant.
//
// One analysis kappa is used for every checkpoint, so encoders trained with
// different (or no) kappa are compared on the same scale.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cebmv/common.hpp"
#include "cebmv/data.hpp"
#include "cebmv/encoders.hpp"
#include "cebmv/vmf.hpp"

namespace cebmv {

struct SmoothnessRecord {
  std::size_t pair_id = 0;
  double dx_norm = 0.0;
  /// KL[e(.|x) || e(.|x + dx)] / |dx|.
  double local_estimate = 0.0;
  /// The log-density ratio at one z ~ e(.|x), divided by |dx|.
  double single_sample = 0.0;
  double kl_forward = 0.0;
  double kl_backward = 0.0;
  double squared_bound = 0.0;
};

/// Mean directions mu(x) of the stack's encoder e(z|x), eval mode: r for the
/// SimCLR family, normalize(q(projection)) for the BYOL family.
inline Tensor encoder_mean(EncoderStack& stack, const Tensor& x) {
  Encoding e = stack.encode(x, Mode::kEval);
  if (is_byol_family(stack.variant())) return l2_normalize(stack.predict(e.projection, Mode::kEval));
  return e.r;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double perturbation_norm(std::span<const double> x, std::span<const double> x_perturbed) {
  if (x.size() != x_perturbed.size()) throw ShapeError("perturbation: dimension mismatch");
  const double n = std::sqrt(squared_distance(x, x_perturbed));
  if (!(n > 1e-9)) throw NumericError("perturbation norm must exceed 1e-9");
  return n;
}

/// Monte-Carlo mean of kappa (mu - mu')^T z over z ~ vMF(mu, kappa), divided
/// by dx_norm.
inline double local_log_ratio(std::span<const double> mu, std::span<const double> mu_perturbed, double dx_norm,
                              double kappa, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ConfigError("local_log_ratio: n_samples must be >= 1");
  if (!(dx_norm > 1e-9)) throw NumericError("local_log_ratio: perturbation norm must exceed 1e-9");
  const int dim = static_cast<int>(mu.size());
  std::vector<double> diff(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) diff[i] = mu[i] - mu_perturbed[i];
  Tensor mean = Tensor::matrix(1, mu.size(), std::vector<double>(mu.begin(), mu.end()));
  double total = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    Tensor z = householder_apply(mean, Tensor::matrix(1, mu.size(), sample_vmf_north(dim, kappa, rng)));
    double dot = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) dot += diff[i] * z[i];
    total += kappa * dot;
  }
  return total / n_samples / dx_norm;
}

inline double local_log_ratio(EncoderStack& stack, std::span<const double> x, std::span<const double> x_perturbed,
                              double kappa, int n_samples, Rng& rng) {
  const double dx = perturbation_norm(x, x_perturbed);
  std::vector<double> both(x.begin(), x.end());
  both.insert(both.end(), x_perturbed.begin(), x_perturbed.end());
  Tensor mu = encoder_mean(stack, Tensor::matrix(2, x.size(), std::move(both)));
  const auto v = mu.values();
  const std::size_t n = mu.cols();
  return local_log_ratio(v.subspan(0, n), v.subspan(n, n), dx, kappa, n_samples, rng);
}

/// Record from two mean directions. With `kappa_cross`, the second
/// distribution uses that concentration instead (e against b).
inline SmoothnessRecord smoothness_record(std::size_t pair_id, std::span<const double> mu,
                                          std::span<const double> mu_perturbed, double dx_norm, double kappa,
                                          std::optional<double> kappa_cross = std::nullopt) {
  if (!(dx_norm > 1e-9)) throw NumericError("squared_bound: perturbation norm must exceed 1e-9");
  SmoothnessRecord r;
  r.pair_id = pair_id;
  r.dx_norm = dx_norm;
  if (kappa_cross) {
    VonMisesFisher p({mu.begin(), mu.end()}, kappa), q({mu_perturbed.begin(), mu_perturbed.end()}, *kappa_cross);
    VonMisesFisher p2({mu_perturbed.begin(), mu_perturbed.end()}, kappa), q2({mu.begin(), mu.end()}, *kappa_cross);
    r.kl_forward = kl(p, q);
    r.kl_backward = kl(p2, q2);
  } else {
    r.kl_forward = kl_same_kappa_sqdist(static_cast<int>(mu.size()), kappa, squared_distance(mu, mu_perturbed));
    r.kl_backward = r.kl_forward;
  }
  r.local_estimate = r.kl_forward / dx_norm;
  r.squared_bound = std::max(r.kl_forward, r.kl_backward) / (dx_norm * dx_norm);
  return r;
}

inline SmoothnessRecord squared_bound(EncoderStack& stack, std::span<const double> x,
                                      std::span<const double> x_perturbed, double kappa,
                                      std::optional<double> kappa_cross = std::nullopt) {
  const double dx = perturbation_norm(x, x_perturbed);
  std::vector<double> both(x.begin(), x.end());
  both.insert(both.end(), x_perturbed.begin(), x_perturbed.end());
  Tensor mu = encoder_mean(stack, Tensor::matrix(2, x.size(), std::move(both)));
  const auto v = mu.values();
  const std::size_t n = mu.cols();
  return smoothness_record(0, v.subspan(0, n), v.subspan(n, n), dx, kappa, kappa_cross);
}

// ---------------------------------------------------------------------------
// Perturbation families: one fixed-magnitude change along one axis of the
// input, in both directions.

enum class Perturbation {
  kGainUp, kGainDown, kContrastUp, kContrastDown, kContentUp, kContentDown, kNuisanceUp, kNuisanceDown
};

inline const std::vector<Perturbation>& all_perturbations() {
  static const std::vector<Perturbation> all{Perturbation::kGainUp,     Perturbation::kGainDown,
                                             Perturbation::kContrastUp, Perturbation::kContrastDown,
                                             Perturbation::kContentUp,  Perturbation::kContentDown,
                                             Perturbation::kNuisanceUp, Perturbation::kNuisanceDown};
  return all;
}

inline std::string to_string(Perturbation p) {
  switch (p) {
    case Perturbation::kGainUp: return "gain+";
    case Perturbation::kGainDown: return "gain-";
    case Perturbation::kContrastUp: return "contrast+";
    case Perturbation::kContrastDown: return "contrast-";
    case Perturbation::kContentUp: return "content+";
    case Perturbation::kContentDown: return "content-";
    case Perturbation::kNuisanceUp: return "nuisance+";
    case Perturbation::kNuisanceDown: return "nuisance-";
  }
  return "?";
}

inline Perturbation parse_perturbation(const std::string& s) {
  for (Perturbation p : all_perturbations())
    if (to_string(p) == s) return p;
  throw ConfigError("unknown perturbation family '" + s + "'");
}

/// Magnitudes: gain x(1 +- 0.1); contrast about the row mean by 1 +- 0.1;
/// content / nuisance blocks shifted by +-0.1 training std per coordinate.
inline std::vector<double> perturb(std::span<const double> x, Perturbation p, const GeneratorConfig& gen,
                                   const std::vector<double>& train_std) {
  constexpr double kStep = 0.1;
  std::vector<double> out(x.begin(), x.end());
  const double sign = (p == Perturbation::kGainUp || p == Perturbation::kContrastUp ||
                       p == Perturbation::kContentUp || p == Perturbation::kNuisanceUp)
                          ? 1.0
                          : -1.0;
  switch (p) {
    case Perturbation::kGainUp:
    case Perturbation::kGainDown:
      for (double& v : out) v *= 1.0 + sign * kStep;
      break;
    case Perturbation::kContrastUp:
    case Perturbation::kContrastDown: {
      const double m = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
      for (double& v : out) v = m + (1.0 + sign * kStep) * (v - m);
      break;
    }
    case Perturbation::kContentUp:
    case Perturbation::kContentDown:
      for (int i = 0; i < gen.content_dim; ++i) out[i] += sign * kStep * train_std[i];
      break;
    case Perturbation::kNuisanceUp:
    case Perturbation::kNuisanceDown:
      for (int i = gen.content_dim; i < gen.content_dim + gen.nuisance_dim; ++i) out[i] += sign * kStep * train_std[i];
      break;
  }
  return out;
}

struct LipschitzOptions {
  int n_pairs = 2000;
  int bins = 64;
  double kappa = 1024.0;
  /// When set, KLs compare e(.|x) at `kappa` against b(.|x') at this value.
  std::optional<double> kappa_cross;
  std::vector<Perturbation> families = all_perturbations();

  void validate() const {
    if (n_pairs < 1) throw ConfigError("lipschitz.n_pairs must be >= 1");
    if (bins < 1) throw ConfigError("lipschitz.bins must be >= 1");
    if (!(kappa > 0.0)) throw ConfigError("lipschitz.kappa must be positive");
    if (kappa_cross && !(*kappa_cross > 0.0)) throw ConfigError("lipschitz.kappa_cross must be positive");
    if (families.empty()) throw ConfigError("lipschitz.families must be non-empty");
  }
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};

/// Equal-width bins on [0, max]; [0, 1] when every value is 0.
inline Histogram histogram(const std::vector<double>& values, int bins) {
  double hi = 0.0;
  for (double v : values) hi = std::max(hi, v);
  if (!(hi > 0.0)) hi = 1.0;
  Histogram h;
  h.counts.assign(bins, 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(hi * i / bins);
  for (double v : values) {
    auto b = static_cast<int>(std::floor(v / hi * bins));
    h.counts[std::clamp(b, 0, bins - 1)]++;
  }
  return h;
}

struct FamilyReport {
  std::string family;
  std::vector<SmoothnessRecord> records;
  double mean = 0.0;
  Histogram histogram;
};

struct SmoothnessReport {
  std::vector<FamilyReport> families;
};

/// Evaluates every family on the same n_pairs records, drawn without
/// replacement by a seeded permutation. Single-sample estimates use one z per
/// pair from a per-(family, pair) stream.
inline SmoothnessReport smoothness_report(EncoderStack& stack, const Dataset& data, const GeneratorConfig& gen,
                                          const std::vector<double>& train_std, const LipschitzOptions& opts,
                                          std::uint64_t seed) {
  opts.validate();
  if (data.dim != stack.dims().input_dim) throw ShapeError("smoothness_report: dataset dimension mismatch");
  if (data.size() == 0) throw ConfigError("smoothness_report: empty dataset");
  const std::size_t n = std::min<std::size_t>(opts.n_pairs, data.size());
  if (n < static_cast<std::size_t>(opts.n_pairs)) {
    log_warning("smoothness_report: dataset has only " + std::to_string(n) + " records");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng pick = make_rng(seed, 0x6c6970);
  std::shuffle(order.begin(), order.end(), pick);
  order.resize(n);
  std::sort(order.begin(), order.end());

  std::vector<double> clean;
  clean.reserve(n * data.dim);
  for (std::size_t i : order) clean.insert(clean.end(), data.row(i).begin(), data.row(i).end());
  const Tensor mu = encoder_mean(stack, Tensor::matrix(n, data.dim, clean));
  const std::size_t k = mu.cols();

  SmoothnessReport report;
  for (std::size_t f = 0; f < opts.families.size(); ++f) {
    const Perturbation p = opts.families[f];
    std::vector<double> shifted;
    shifted.reserve(n * data.dim);
    std::vector<double> dx(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto x = std::span<const double>(clean).subspan(j * data.dim, data.dim);
      auto xp = perturb(x, p, gen, train_std);
      dx[j] = perturbation_norm(x, xp);
      shifted.insert(shifted.end(), xp.begin(), xp.end());
    }
    const Tensor mu_p = encoder_mean(stack, Tensor::matrix(n, data.dim, std::move(shifted)));
    FamilyReport fr;
    fr.family = to_string(p);
    std::vector<double> estimates;
    for (std::size_t j = 0; j < n; ++j) {
      const auto a = mu.values().subspan(j * k, k);
      const auto b = mu_p.values().subspan(j * k, k);
      SmoothnessRecord r = smoothness_record(order[j], a, b, dx[j], opts.kappa, opts.kappa_cross);
      Rng rng = make_rng(seed, 0x7a00 + f, order[j]);
      r.single_sample = local_log_ratio(a, b, dx[j], opts.kappa, 1, rng);
      estimates.push_back(r.local_estimate);
      fr.mean += r.local_estimate / static_cast<double>(n);
      fr.records.push_back(r);
    }
    fr.histogram = histogram(estimates, opts.bins);
    report.families.push_back(std::move(fr));
  }
  return report;
}

inline void write_smoothness_csv(const SmoothnessReport& report, std::ostream& out) {
  out << "family,pair_id,dx_norm,local_estimate,single_sample,kl_forward,kl_backward,squared_bound\n";
  char buf[512];
  for (const auto& f : report.families) {
    for (const auto& r : f.records) {
      std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", f.family.c_str(), r.pair_id,
                    r.dx_norm, r.local_estimate, r.single_sample, r.kl_forward, r.kl_backward, r.squared_bound);
      out << buf;
    }
  }
}

inline nlohmann::json smoothness_summary(const SmoothnessReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : report.families) {
    j[f.family] = {{"mean", f.mean},
                   {"n", f.records.size()},
                   {"histogram_edges", f.histogram.edges},
                   {"histogram_counts", f.histogram.counts}};
  }
  return j;
}

struct FamilyComparison {
  std::string family;
  double mean_a = 0.0;
  double mean_b = 0.0;
};

/// Per-family means of two reports over the same families and pairs.
inline std::vector<FamilyComparison> compare_reports(const SmoothnessReport& a, const SmoothnessReport& b) {
  if (a.families.size() != b.families.size()) throw ShapeError("compare_reports: family lists differ");
  std::vector<FamilyComparison> out;
  for (std::size_t i = 0; i < a.families.size(); ++i) {
    if (a.families[i].family != b.families[i].family) throw ShapeError("compare_reports: family lists differ");
    out.push_back({a.families[i].family, a.families[i].mean, b.families[i].mean});
  }
  return out;
}

inline nlohmann::json comparison_summary(const std::vector<FamilyComparison>& cmp, const std::string& name_a,
                                         const std::string& name_b) {
  nlohmann::json fams = nlohmann::json::array();
  std::size_t a_le_b = 0;
  for (const auto& c : cmp) {
    fams.push_back({{"family", c.family}, {"mean_" + name_a, c.mean_a}, {"mean_" + name_b, c.mean_b},
                    {name_a + "_le_" + name_b, c.mean_a <= c.mean_b}});
    if (c.mean_a <= c.mean_b) ++a_le_b;
  }
  return {{"a", name_a},
          {"b", name_b},
          {"families", fams},
          {"fraction_a_le_b", cmp.empty() ? 0.0 : static_cast<double>(a_le_b) / static_cast<double>(cmp.size())}};
}

}  // namespace cebmv
