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

// Synthetic multiview data.
//
// A record is laid out as [content | nuisance | spurious]:
//   content   class prototype on the unit sphere plus per-record jitter; shared
//             by both views up to small noise
//   nuisance  Gaussian; redrawn independently for every view
//   spurious  a per-class sign code scaled by spurious_scale, taken from the
//             record's own class with probability spurious_correlation and
//             from a uniformly drawn class otherwise
//
// Every record is a pure function of (config, split, index).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cebmv/common.hpp"

namespace cebmv {

struct GeneratorConfig {
  int n_classes = 10;
  int content_dim = 8;
  int nuisance_dim = 16;
  int spurious_dim = 8;
  double class_separation = 0.6;
  double within_class_jitter = 0.35;
  double nuisance_scale = 0.3;
  double spurious_scale = 0.5;
  double spurious_correlation = 0.9;
  int n_train = 20000;
  int n_test = 4000;
  std::uint64_t seed = 0;

  int input_dim() const { return content_dim + nuisance_dim + spurious_dim; }

  void validate() const {
    if (n_classes < 2) throw ConfigError("data.n_classes must be >= 2");
    if (content_dim < 1 || nuisance_dim < 0 || spurious_dim < 0) throw ConfigError("data dims must be >= 0, content_dim >= 1");
    if (!(class_separation >= 0.0)) throw ConfigError("data.class_separation must be >= 0");
    if (!(spurious_correlation >= 0.0 && spurious_correlation <= 1.0)) {
      throw ConfigError("data.spurious_correlation must lie in [0, 1]");
    }
    if (within_class_jitter < 0.0 || nuisance_scale < 0.0 || spurious_scale < 0.0) {
      throw ConfigError("data scales must be >= 0");
    }
    if (n_train < 1 || n_test < 0) throw ConfigError("data.n_train must be >= 1 and n_test >= 0");
  }
};

/// Row-major [N, dim] feature matrix with integer labels.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {x.data() + i * dim, dim}; }
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

enum class Split : std::uint64_t { kTrain = 1, kTest = 2 };

/// Fixed per-configuration structure: class prototypes and spurious codes.
struct ClassStructure {
  std::vector<std::vector<double>> prototypes;
  std::vector<std::vector<double>> spurious_codes;
};

inline ClassStructure make_class_structure(const GeneratorConfig& cfg) {
  cfg.validate();
  if (cfg.class_separation > 2.0) throw ConfigError("class_separation above 2 is infeasible on the unit sphere");
  if (cfg.content_dim == 1 && cfg.n_classes > 2 && cfg.class_separation > 0.0) {
    throw ConfigError("class_separation infeasible: a 1-dimensional sphere holds only two points");
  }
  ClassStructure s;
  Rng rng = make_rng(cfg.seed, 0x70726f746f);
  const int d = cfg.content_dim;
  auto random_unit = [&] {
    std::vector<double> v(d);
    double n = 0.0;
    do {
      n = 0.0;
      for (double& x : v) {
        x = standard_normal(rng);
        n += x * x;
      }
    } while (n < 1e-12);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };
  auto far_enough = [&](const std::vector<double>& c) {
    for (const auto& p : s.prototypes) {
      double dist2 = 0.0;
      for (int i = 0; i < d; ++i) dist2 += (c[i] - p[i]) * (c[i] - p[i]);
      if (std::sqrt(dist2) < cfg.class_separation - 1e-12) return false;
    }
    return true;
  };
  constexpr int kAttempts = 20000;
  while (static_cast<int>(s.prototypes.size()) < cfg.n_classes) {
    bool placed = false;
    // Antipodes of existing prototypes are tried first; they realize the
    // maximal separation of 2.
    for (std::size_t k = 0; k < s.prototypes.size() && !placed; ++k) {
      std::vector<double> c = s.prototypes[k];
      for (double& x : c) x = -x;
      if (far_enough(c)) {
        s.prototypes.push_back(std::move(c));
        placed = true;
      }
    }
    for (int a = 0; a < kAttempts && !placed; ++a) {
      auto c = random_unit();
      if (far_enough(c)) {
        s.prototypes.push_back(std::move(c));
        placed = true;
      }
    }
    if (!placed) {
      throw ConfigError("class_separation " + std::to_string(cfg.class_separation) + " infeasible for " +
                        std::to_string(cfg.n_classes) + " classes in " + std::to_string(d) + " dimensions");
    }
  }
  Rng code_rng = make_rng(cfg.seed, 0x636f6465);
  for (int c = 0; c < cfg.n_classes; ++c) {
    std::vector<double> code(cfg.spurious_dim);
    for (double& x : code) x = (code_rng() & 1) ? 1.0 : -1.0;
    s.spurious_codes.push_back(std::move(code));
  }
  return s;
}

/// Class whose spurious code a record carries, drawn with the given correlation.
inline int draw_spurious_class(int label, int n_classes, double correlation, Rng& rng) {
  if (uniform01(rng) < correlation) return label;
  return static_cast<int>(rng() % static_cast<std::uint64_t>(n_classes));
}

inline void write_spurious(std::span<double> dst, const std::vector<double>& code, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = scale * code[i];
}

/// Record `index` of `split`: clean canonical view with its own nuisance draw.
inline std::vector<double> generate_record(const GeneratorConfig& cfg, const ClassStructure& s, Split split,
                                           std::uint64_t index, int* label_out) {
  Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(split), index);
  const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_classes));
  std::vector<double> x(cfg.input_dim());
  for (int i = 0; i < cfg.content_dim; ++i) {
    x[i] = s.prototypes[label][i] + cfg.within_class_jitter * standard_normal(rng);
  }
  for (int i = 0; i < cfg.nuisance_dim; ++i) x[cfg.content_dim + i] = cfg.nuisance_scale * standard_normal(rng);
  const int spurious_class = draw_spurious_class(label, cfg.n_classes, cfg.spurious_correlation, rng);
  write_spurious(std::span<double>(x).subspan(cfg.content_dim + cfg.nuisance_dim), s.spurious_codes[spurious_class],
                 cfg.spurious_scale);
  if (label_out) *label_out = label;
  return x;
}

inline Dataset generate_split(const GeneratorConfig& cfg, const ClassStructure& s, Split split, int n) {
  Dataset d;
  d.dim = static_cast<std::size_t>(cfg.input_dim());
  d.x.reserve(d.dim * n);
  d.labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    int label = 0;
    auto row = generate_record(cfg, s, split, static_cast<std::uint64_t>(i), &label);
    d.x.insert(d.x.end(), row.begin(), row.end());
    d.labels.push_back(label);
  }
  return d;
}

inline SplitDataset generate_dataset(const GeneratorConfig& cfg) {
  const ClassStructure s = make_class_structure(cfg);
  return {generate_split(cfg, s, Split::kTrain, cfg.n_train), generate_split(cfg, s, Split::kTest, cfg.n_test)};
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  /// Expected norm of the noise added to the content block of each view.
  double content_noise = 0.1;
  /// Masked fraction is uniform in [0, 1 - area_lower_bound].
  double area_lower_bound = 0.08;
  /// Gain uniform in [1 - gain_strength, 1 + gain_strength].
  double gain_strength = 0.4;
  /// Std of additive noise on every coordinate.
  double noise_std = 0.05;

  void validate() const {
    if (!(area_lower_bound >= 0.0 && area_lower_bound <= 1.0)) throw ConfigError("augment.area_lower_bound must lie in [0, 1]");
    if (content_noise < 0.0 || noise_std < 0.0) throw ConfigError("augment noise scales must be >= 0");
    if (!(gain_strength >= 0.0 && gain_strength < 1.0)) throw ConfigError("augment.gain_strength must lie in [0, 1)");
  }

  static AugmentConfig identity() { return {0.0, 1.0, 0.0, 0.0}; }
};

/// One augmented view of a record.
inline std::vector<double> augment(std::span<const double> record, const GeneratorConfig& gen, const AugmentConfig& aug,
                                   Rng& rng) {
  if (static_cast<int>(record.size()) != gen.input_dim()) throw ShapeError("augment: record has wrong dimension");
  std::vector<double> v(record.begin(), record.end());
  const double per_coord = aug.content_noise / std::sqrt(static_cast<double>(gen.content_dim));
  for (int i = 0; i < gen.content_dim; ++i) v[i] += per_coord * standard_normal(rng);
  for (int i = 0; i < gen.nuisance_dim; ++i) v[gen.content_dim + i] = gen.nuisance_scale * standard_normal(rng);

  const std::size_t dim = v.size();
  const double max_fraction = 1.0 - aug.area_lower_bound;
  if (max_fraction > 0.0) {
    const double fraction = max_fraction * uniform01(rng);
    const auto n_mask = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(dim)));
    if (n_mask > 0) {
      std::vector<std::size_t> idx(dim);
      std::iota(idx.begin(), idx.end(), 0);
      // Partial Fisher-Yates: the first n_mask entries are a uniform subset.
      for (std::size_t i = 0; i < n_mask; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (dim - i));
        std::swap(idx[i], idx[j]);
        v[idx[i]] = 0.0;
      }
    }
  }
  if (aug.gain_strength > 0.0) {
    const double gain = 1.0 + aug.gain_strength * (2.0 * uniform01(rng) - 1.0);
    for (double& x : v) x *= gain;
  }
  if (aug.noise_std > 0.0) {
    for (double& x : v) x += aug.noise_std * standard_normal(rng);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Distribution-shift suites

enum class ShiftFamily { kGaussianNoise, kFeatureMask, kScaleDrift, kNuisanceShift, kSpuriousFlip };

inline const std::vector<ShiftFamily>& all_shift_families() {
  static const std::vector<ShiftFamily> f{ShiftFamily::kGaussianNoise, ShiftFamily::kFeatureMask,
                                          ShiftFamily::kScaleDrift, ShiftFamily::kNuisanceShift,
                                          ShiftFamily::kSpuriousFlip};
  return f;
}

inline std::string to_string(ShiftFamily f) {
  switch (f) {
    case ShiftFamily::kGaussianNoise: return "gaussian_noise";
    case ShiftFamily::kFeatureMask: return "feature_mask";
    case ShiftFamily::kScaleDrift: return "scale_drift";
    case ShiftFamily::kNuisanceShift: return "nuisance_shift";
    case ShiftFamily::kSpuriousFlip: return "spurious_flip";
  }
  return "?";
}

inline ShiftFamily parse_shift_family(const std::string& s) {
  for (ShiftFamily f : all_shift_families())
    if (to_string(f) == s) return f;
  throw ConfigError("unknown shift family '" + s + "'");
}

struct ShiftSuite {
  ShiftFamily family = ShiftFamily::kGaussianNoise;
  int severity = 1;
};

/// Perturbation magnitude, in units of the training feature std.
inline double severity_magnitude(int severity) {
  static constexpr double kTable[] = {0.1, 0.25, 0.5, 1.0, 2.0};
  if (severity < 1 || severity > 5) throw ConfigError("shift severity must lie in 1..5");
  return kTable[severity - 1];
}

/// Per-feature standard deviation over a dataset.
inline std::vector<double> feature_std(const Dataset& d) {
  std::vector<double> mean(d.dim, 0.0), var(d.dim, 0.0);
  const double n = static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.dim; ++j) mean[j] += d.x[i * d.dim + j] / n;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.dim; ++j) {
      const double c = d.x[i * d.dim + j] - mean[j];
      var[j] += c * c / n;
    }
  for (double& v : var) v = std::sqrt(v);
  return var;
}

/// Applies a shift to every row. `train_std` is the per-feature std of the
/// training split; `seed` keys the perturbation randomness.
inline Dataset shift_suite(const Dataset& data, const ShiftSuite& suite, const GeneratorConfig& gen,
                           const std::vector<double>& train_std, std::uint64_t seed) {
  const double m = severity_magnitude(suite.severity);
  if (train_std.size() != data.dim) throw ShapeError("shift_suite: train_std has wrong length");
  Dataset out = data;
  const auto family_key = static_cast<std::uint64_t>(suite.family) + 1;
  const std::uint64_t suite_seed = derive_seed(seed, 0x7368696674, family_key * 16 + suite.severity);
  // Fixed per-suite directions (one per feature).
  Rng dir_rng(derive_seed(suite_seed, 0));
  std::vector<double> direction(data.dim);
  for (double& d : direction) d = (dir_rng() & 1) ? 1.0 : -1.0;

  const ClassStructure structure = suite.family == ShiftFamily::kSpuriousFlip ? make_class_structure(gen) : ClassStructure{};
  const std::size_t spurious_begin = static_cast<std::size_t>(gen.content_dim + gen.nuisance_dim);
  std::vector<double> mean(data.dim, 0.0);
  if (suite.family == ShiftFamily::kScaleDrift) {
    for (std::size_t i = 0; i < data.size(); ++i)
      for (std::size_t j = 0; j < data.dim; ++j) mean[j] += data.x[i * data.dim + j] / static_cast<double>(data.size());
  }

  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(suite_seed, 1, i));
    auto row = out.row(i);
    switch (suite.family) {
      case ShiftFamily::kGaussianNoise:
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += m * train_std[j] * standard_normal(rng);
        break;
      case ShiftFamily::kFeatureMask: {
        const double fraction = m / 2.5;
        for (double& x : row)
          if (uniform01(rng) < fraction) x = 0.0;
        break;
      }
      case ShiftFamily::kScaleDrift:
        for (std::size_t j = 0; j < row.size(); ++j) {
          row[j] = mean[j] + (row[j] - mean[j]) * (1.0 + 0.5 * m * direction[j]);
        }
        break;
      case ShiftFamily::kNuisanceShift:
        for (int j = 0; j < gen.nuisance_dim; ++j) {
          const std::size_t k = static_cast<std::size_t>(gen.content_dim + j);
          row[k] += m * train_std[k] * direction[k];
        }
        break;
      case ShiftFamily::kSpuriousFlip: {
        const double corr = (1.0 - suite.severity / 5.0) * gen.spurious_correlation;
        const int cls = draw_spurious_class(out.labels[i], gen.n_classes, corr, rng);
        write_spurious(row.subspan(spurious_begin), structure.spurious_codes[cls], gen.spurious_scale);
        break;
      }
    }
  }
  return out;
}

}  // namespace cebmv
