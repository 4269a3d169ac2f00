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

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cebmv/common.hpp"
#include "cebmv/data.hpp"
#include "cebmv/encoders.hpp"
#include "cebmv/losses.hpp"
#include "cebmv/tensor.hpp"

namespace cebmv {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  double base_lr = 0.2;
  double warmup_epochs = 2.0;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  double alpha_base = 0.99;
  std::uint64_t seed = 0;
  LossConfig loss;
  StackDims dims;
  AugmentConfig augment;

  /// base_lr scaled linearly by batch_size / 256.
  double peak_lr() const { return base_lr * batch_size / 256.0; }

  void validate() const {
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
    if (warmup_epochs < 0.0 || (epochs > 0 && !(warmup_epochs < epochs))) {
      throw ConfigError("train.warmup_epochs must be >= 0 and below epochs");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (!(alpha_base > 0.0 && alpha_base < 1.0)) throw ConfigError("train.alpha_base must lie in (0, 1)");
    loss.validate();
    augment.validate();
  }
};

/// Linear warmup 0 -> peak over warmup_steps, then half-cosine decay to 0 at
/// total_steps.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double peak_lr) {
  if (warmup_steps < 0 || warmup_steps >= total_steps) throw ConfigError("cosine_lr: need 0 <= warmup < total");
  if (step < 0 || step > total_steps) throw ConfigError("cosine_lr: step out of range");
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * (std::cos(M_PI * progress) + 1.0) / 2.0;
}

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double i_xzy_mean = 0.0;
  /// i_yz for SimCLR variants, the weighted regression term for BYOL variants.
  double second_term = 0.0;
  double lr = 0.0;
  std::optional<double> alpha;
};

struct CollapseRecord {
  int epoch = 0;
  std::int64_t step = 0;
  std::string reason;
};

struct TrainResult {
  EncoderStack stack;
  std::vector<EpochMetrics> metrics;
  std::optional<CollapseRecord> collapse;
};

/// Mean over features of the across-batch variance of unit rows.
inline double batch_variance(const Tensor& r) {
  const std::size_t n = r.rows(), d = r.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += r[i * d + j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (r[i * d + j] - m) * (r[i * d + j] - m);
    total += v / static_cast<double>(n);
  }
  return total / static_cast<double>(d);
}

/// SGD with momentum; decoupled weight decay p <- p (1 - lr wd) precedes the
/// momentum step and skips parameters flagged decay = false.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<NamedParam>& params, double lr) {
    if (buffers_.size() != params.size()) {
      buffers_.clear();
      for (const auto& p : params) buffers_.emplace_back(p.tensor.size(), 0.0);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& t = params[k].tensor;
      std::vector<double>& buf = buffers_[k];
      const bool has_grad = t.has_grad();
      const auto grad = t.grad();
      const double shrink = params[k].decay ? 1.0 - lr * weight_decay_ : 1.0;
      t.update([&](std::span<double> p) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          buf[i] = momentum_ * buf[i] + (has_grad ? grad[i] : 0.0);
          p[i] = p[i] * shrink - lr * buf[i];
          if (!std::isfinite(p[i])) throw NumericError("parameter " + params[k].name + " became non-finite");
        }
      });
      t.zero_grad();
    }
  }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> buffers_;
};

/// Loss for one batch of paired views. Exposed for gradient checks.
inline LossBreakdown batch_loss(EncoderStack& stack, const LossConfig& cfg, const Tensor& x, const Tensor& x_prime,
                                Rng& rng, Tensor* r_out = nullptr) {
  Encoding a = stack.encode(x, Mode::kTrain);
  Encoding b = stack.encode(x_prime, Mode::kTrain);
  if (r_out) *r_out = a.r;
  switch (cfg.variant) {
    case Variant::kSimclr:
      return simclr_breakdown(a.r, b.r, cfg.tau());
    case Variant::kCSimclr:
      return c_simclr_loss(a.r, b.r, cfg, rng);
    case Variant::kByol:
    case Variant::kCByol: {
      Tensor mu_a = l2_normalize(stack.predict(a.projection, Mode::kTrain));
      Tensor mu_b = l2_normalize(stack.predict(b.projection, Mode::kTrain));
      Tensor t_a = stop_gradient(stack.encode_target(x, Mode::kTrain).r);
      Tensor t_b = stop_gradient(stack.encode_target(x_prime, Mode::kTrain).r);
      if (cfg.variant == Variant::kByol) return byol_breakdown(mu_a, t_b, mu_b, t_a, cfg.w_byol());
      ByolDirection fwd{mu_a, l2_normalize(stack.b_head(t_a, Mode::kTrain)), t_b};
      ByolDirection bwd{mu_b, l2_normalize(stack.b_head(t_b, Mode::kTrain)), t_a};
      return c_byol_loss(fwd, bwd, [&](const Tensor& z) { return stack.d_head(z); }, cfg, rng);
    }
  }
  throw ConfigError("unknown variant");
}

/// Builds the two augmented views for a list of record indices.
inline std::pair<Tensor, Tensor> make_views(const Dataset& data, std::span<const std::size_t> idx,
                                            const GeneratorConfig& gen, const AugmentConfig& aug,
                                            std::uint64_t seed, std::uint64_t epoch) {
  std::vector<double> a, b;
  a.reserve(idx.size() * data.dim);
  b.reserve(idx.size() * data.dim);
  for (std::size_t i : idx) {
    Rng ra(derive_seed(seed, 0x76696577 + epoch * 4, i * 2));
    Rng rb(derive_seed(seed, 0x76696577 + epoch * 4, i * 2 + 1));
    auto va = augment(data.row(i), gen, aug, ra);
    auto vb = augment(data.row(i), gen, aug, rb);
    a.insert(a.end(), va.begin(), va.end());
    b.insert(b.end(), vb.begin(), vb.end());
  }
  return {Tensor::matrix(idx.size(), data.dim, std::move(a)), Tensor::matrix(idx.size(), data.dim, std::move(b))};
}

inline constexpr double kCollapseVariance = 1e-6;

/// Trains a fresh stack. A non-finite loss or a collapsed batch of r stops
/// training and returns the partial result with `collapse` set.
inline TrainResult train(const TrainConfig& cfg, const GeneratorConfig& gen, const Dataset& data,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (data.size() < 2) throw ConfigError("train: dataset needs at least two records");
  if (static_cast<int>(data.dim) != gen.input_dim() || data.dim != cfg.dims.input_dim) {
    throw ConfigError("train: dataset dimension does not match configuration");
  }
  TrainResult result{EncoderStack(cfg.dims, cfg.loss.variant, cfg.seed), {}, std::nullopt};
  EncoderStack& stack = result.stack;
  if (cfg.epochs == 0) return result;

  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, data.size());
  std::size_t steps_per_epoch = data.size() / batch;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
  const auto warmup_steps = static_cast<std::int64_t>(std::llround(cfg.warmup_epochs * steps_per_epoch));
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  std::vector<NamedParam> params = stack.params();

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, 0x73687566, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics m;
    m.epoch = epoch + 1;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const double lr = cosine_lr(step, total_steps, warmup_steps, cfg.peak_lr());
      auto idx = std::span<const std::size_t>(order).subspan(s * batch, batch);
      auto [x, x_prime] = make_views(data, idx, gen, cfg.augment, cfg.seed, static_cast<std::uint64_t>(epoch));
      Rng loss_rng = make_rng(cfg.seed, 0x6c6f7373, static_cast<std::uint64_t>(step));
      LossBreakdown lb;
      Tensor r;
      try {
        lb = batch_loss(stack, cfg.loss, x, x_prime, loss_rng, &r);
      } catch (const NumericError& e) {
        result.collapse = CollapseRecord{epoch + 1, step, std::string("non-finite value: ") + e.what()};
        return result;
      }
      if (!std::isfinite(lb.total_value)) {
        result.collapse = CollapseRecord{epoch + 1, step, "non-finite loss"};
        return result;
      }
      if (batch_variance(r) < kCollapseVariance) {
        result.collapse = CollapseRecord{epoch + 1, step, "representation variance below 1e-6"};
        return result;
      }
      m.loss += lb.total_value / static_cast<double>(steps_per_epoch);
      m.i_xzy_mean += lb.i_xzy / static_cast<double>(steps_per_epoch);
      m.second_term += lb.second_term / static_cast<double>(steps_per_epoch);
      m.lr = lr;

      try {
        lb.total.backward();
        opt.step(params, lr);
      } catch (const NumericError& e) {
        result.collapse = CollapseRecord{epoch + 1, step, std::string("non-finite update: ") + e.what()};
        return result;
      }
      if (stack.has_target()) {
        const double alpha = ema_alpha({cfg.alpha_base, step + 1, total_steps});
        stack.ema_update(alpha);
        m.alpha = alpha;
      }
    }
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace cebmv
