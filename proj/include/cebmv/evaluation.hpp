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

// Frozen-representation evaluation. Features are the trunk output h in eval
// mode; the probe is an l2-regularized multinomial logistic regression fit by
// full-batch gradient descent on standardized features.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cebmv/common.hpp"
#include "cebmv/data.hpp"
#include "cebmv/encoders.hpp"

namespace cebmv {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// h for every row of `data`.
inline Matrix extract_features(const EncoderStack& stack, const Dataset& data, std::size_t chunk = 2048) {
  if (data.dim != stack.dims().input_dim) throw ShapeError("extract_features: dataset dimension mismatch");
  Matrix out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(stack.dims().repr_dim));
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, data.size() - begin);
    std::vector<double> rows(data.x.begin() + begin * data.dim, data.x.begin() + (begin + n) * data.dim);
    Tensor h = stack.represent(Tensor::matrix(n, data.dim, std::move(rows)));
    std::copy(h.values().begin(), h.values().end(), out.data() + begin * out.cols());
  }
  return out;
}

/// Mean over samples of sum_c (p_c - [c == label])^2, in [0, 2].
inline double brier(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw ShapeError("brier: row count mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double s = probs.row(i).sum();
    if (std::abs(s - 1.0) > 1e-6) throw NumericError("brier: probability row does not sum to 1");
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double target = c == labels[i] ? 1.0 : 0.0;
      total += (probs(i, c) - target) * (probs(i, c) - target);
    }
  }
  return total / static_cast<double>(probs.rows());
}

struct ProbeResult {
  double top1 = 0.0;
  double brier = 0.0;
  double label_fraction = 1.0;
  std::size_t n_eval = 0;
  double l2 = 0.0;
};

struct ProbeRecipe {
  int iterations = 500;
  double lr = 0.5;
  std::vector<double> l2_grid{1e-6, 1e-4, 1e-2};
  double validation_fraction = 0.1;
};

/// Multinomial logistic regression on standardized features.
class LinearProbe {
 public:
  LinearProbe() = default;

  static LinearProbe fit(const Matrix& features, std::span<const int> labels, int n_classes, double l2,
                         const ProbeRecipe& recipe) {
    LinearProbe p;
    const auto n = features.rows(), d = features.cols();
    p.mean_ = features.colwise().mean();
    p.inv_std_ = ((features.rowwise() - p.mean_).array().square().colwise().mean().sqrt() + 1e-8).inverse();
    const Matrix x = ((features.rowwise() - p.mean_).array().rowwise() * p.inv_std_.array()).matrix();
    Matrix onehot = Matrix::Zero(n, n_classes);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[i]) = 1.0;
    p.weight_ = Matrix::Zero(d, n_classes);
    p.bias_ = Eigen::RowVectorXd::Zero(n_classes);
    // The gradient is evaluated in single precision (it dominates the probe's
    // cost); the weights themselves accumulate in double.
    const Eigen::MatrixXf xf = x.cast<float>();
    const Eigen::MatrixXf onehot_f = onehot.cast<float>();
    Eigen::MatrixXf logits(n, n_classes);
    for (int it = 0; it < recipe.iterations; ++it) {
      const double lr = recipe.lr * (std::cos(M_PI * it / recipe.iterations) + 1.0) / 2.0;
      logits.noalias() = xf * p.weight_.cast<float>();
      logits.rowwise() += p.bias_.cast<float>();
      const Eigen::VectorXf mx = logits.rowwise().maxCoeff();
      logits = (logits.colwise() - mx).array().exp().matrix();
      const Eigen::ArrayXf inv = logits.rowwise().sum().array().inverse();
      logits.array().colwise() *= inv;
      logits -= onehot_f;
      logits /= static_cast<float>(n);
      const Matrix xtg = (xf.transpose() * logits).cast<double>();
      p.weight_ -= lr * (xtg + 2.0 * l2 * p.weight_);
      p.bias_ -= lr * logits.colwise().sum().cast<double>();
    }
    return p;
  }

  Matrix predict_proba(const Matrix& features) const {
    const Matrix x = ((features.rowwise() - mean_).array().rowwise() * inv_std_.array()).matrix();
    return softmax((x * weight_).rowwise() + bias_);
  }

  int n_classes() const { return static_cast<int>(weight_.cols()); }

 private:
  static Matrix softmax(Matrix logits) {
    const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
    logits = (logits.colwise() - mx).array().exp().matrix();
    const Eigen::ArrayXd inv = logits.rowwise().sum().array().inverse();
    logits.array().colwise() *= inv;
    return logits;
  }

  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd inv_std_;
  Matrix weight_;
  Eigen::RowVectorXd bias_;
};

/// top1 and Brier from one probability matrix.
inline ProbeResult score(const Matrix& probs, std::span<const int> labels) {
  ProbeResult r;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    if (arg == labels[i]) ++correct;
  }
  r.n_eval = labels.size();
  r.top1 = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  r.brier = labels.empty() ? 0.0 : brier(probs, labels);
  return r;
}

/// Stratified subset: per class, a seeded permutation truncated to
/// round(fraction * class count), at least one. Subsets for smaller fractions
/// at the same seed are prefixes of those for larger fractions.
inline std::vector<std::size_t> stratified_subset(std::span<const int> labels, int n_classes, double fraction,
                                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw ConfigError("label out of range");
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> out;
  for (int c = 0; c < n_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw ConfigError("linear_probe: class " + std::to_string(c) + " has no examples");
    Rng rng = make_rng(seed, 0x70726f6265, static_cast<std::uint64_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * idx.size())));
    out.insert(out.end(), idx.begin(), idx.begin() + std::min(take, idx.size()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ProbeOutcome {
  ProbeResult result;
  LinearProbe probe;
};

inline Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Fits on a stratified `label_fraction` subset of the training features
/// (l2 chosen on a held-out 10% of that subset, then refit on all of it) and
/// scores on the test features.
inline ProbeOutcome linear_probe(const Matrix& train_features, std::span<const int> train_labels,
                                 const Matrix& test_features, std::span<const int> test_labels, int n_classes,
                                 double label_fraction, std::uint64_t seed, const ProbeRecipe& recipe = {}) {
  const auto subset = stratified_subset(train_labels, n_classes, label_fraction, seed);
  std::vector<std::size_t> fit_idx, val_idx;
  {
    std::vector<std::size_t> perm = subset;
    Rng rng = make_rng(seed, 0x76616c);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(recipe.validation_fraction * perm.size()));
    val_idx.assign(perm.begin(), perm.begin() + n_val);
    fit_idx.assign(perm.begin() + n_val, perm.end());
  }
  auto labels_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> l;
    for (std::size_t i : idx) l.push_back(train_labels[i]);
    return l;
  };

  double best_l2 = recipe.l2_grid.front();
  if (recipe.l2_grid.size() > 1 && !val_idx.empty()) {
    const Matrix fit_x = take_rows(train_features, fit_idx);
    const Matrix val_x = take_rows(train_features, val_idx);
    const auto fit_y = labels_of(fit_idx);
    const auto val_y = labels_of(val_idx);
    double best = -1.0;
    for (double l2 : recipe.l2_grid) {
      const auto p = LinearProbe::fit(fit_x, fit_y, n_classes, l2, recipe);
      const double acc = score(p.predict_proba(val_x), val_y).top1;
      if (acc > best) {
        best = acc;
        best_l2 = l2;
      }
    }
  }
  ProbeOutcome out;
  out.probe = LinearProbe::fit(take_rows(train_features, subset), labels_of(subset), n_classes, best_l2, recipe);
  out.result = score(out.probe.predict_proba(test_features), test_labels);
  out.result.label_fraction = label_fraction;
  out.result.l2 = best_l2;
  return out;
}

struct RobustnessRow {
  std::string family;  // "clean" for the unshifted test set
  int severity = 0;
  double top1 = 0.0;
  std::size_t n = 0;
};

/// Frozen encoder + frozen probe over every suite, preceded by a clean row.
inline std::vector<RobustnessRow> robustness_eval(const EncoderStack& stack, const LinearProbe& probe, const Dataset& test,
                                                  const GeneratorConfig& gen, const std::vector<double>& train_std,
                                                  const std::vector<ShiftSuite>& suites, std::uint64_t seed) {
  std::vector<RobustnessRow> rows;
  const auto clean = score(probe.predict_proba(extract_features(stack, test)), test.labels);
  rows.push_back({"clean", 0, clean.top1, clean.n_eval});
  for (const ShiftSuite& s : suites) {
    const Dataset shifted = shift_suite(test, s, gen, train_std, seed);
    const auto r = score(probe.predict_proba(extract_features(stack, shifted)), shifted.labels);
    rows.push_back({to_string(s.family), s.severity, r.top1, r.n_eval});
  }
  return rows;
}

inline std::vector<ShiftSuite> all_suites(const std::vector<int>& severities = {1, 2, 3, 4, 5}) {
  std::vector<ShiftSuite> out;
  for (ShiftFamily f : all_shift_families())
    for (int s : severities) out.push_back({f, s});
  return out;
}

}  // namespace cebmv
