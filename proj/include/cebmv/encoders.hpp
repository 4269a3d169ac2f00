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
#include <optional>
#include <string>
#include <vector>

#include "cebmv/common.hpp"
#include "cebmv/losses.hpp"
#include "cebmv/tensor.hpp"

namespace cebmv {

struct StackDims {
  std::size_t input_dim = 32;
  std::vector<std::size_t> trunk_hidden{256};
  std::size_t repr_dim = 128;
  std::size_t proj_hidden = 256;
  std::size_t proj_dim = 32;

  bool operator==(const StackDims&) const = default;
};

enum class Mode { kTrain, kEval };

/// x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : w) v = dist(rng);
    weight = Tensor::matrix(in, out, std::move(w), true);
    bias = Tensor::zeros({out}, true);
  }

  Tensor operator()(const Tensor& x) const { return add_row_bias(matmul(x, weight), bias); }
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

/// Batch standardization followed by a learned per-feature gain and bias.
struct BatchNorm {
  Tensor gain;
  Tensor bias;
  BatchStats stats;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t features)
      : gain(Tensor::from({features}, std::vector<double>(features, 1.0), true)),
        bias(Tensor::zeros({features}, true)),
        stats(features) {}

  Tensor operator()(const Tensor& x, Mode mode) {
    return affine_cols(batch_standardize(x, stats, mode == Mode::kTrain), gain, bias);
  }
};

/// in -> hidden (batch standardization, relu) -> out. No normalization after
/// the output layer.
struct TwoLayerMlp {
  Linear fc1;
  BatchNorm norm;
  Linear fc2;

  TwoLayerMlp() = default;
  TwoLayerMlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : fc1(in, hidden, rng), norm(hidden), fc2(hidden, out, rng) {}

  Tensor operator()(const Tensor& x, Mode mode) { return fc2(relu(norm(fc1(x), mode))); }
};

/// Linear + relu layers input -> hidden... -> repr_dim.
struct Trunk {
  std::vector<Linear> layers;

  Trunk() = default;
  Trunk(const StackDims& dims, Rng& rng) {
    std::size_t in = dims.input_dim;
    for (std::size_t h : dims.trunk_hidden) {
      layers.emplace_back(in, h, rng);
      in = h;
    }
    layers.emplace_back(in, dims.repr_dim, rng);
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = x;
    for (const Linear& l : layers) h = relu(l(h));
    return h;
  }
};

/// Trunk + projection; the part of the online network mirrored by the target.
struct Backbone {
  Trunk trunk;
  TwoLayerMlp projection;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

struct NamedStats {
  std::string name;
  BatchStats* stats;
};

struct Encoding {
  Tensor h;           // [B, repr_dim], the downstream representation
  Tensor projection;  // [B, proj_dim], before normalization
  Tensor r;           // unit rows of `projection`
};

inline Encoding encode_backbone(Backbone& net, const Tensor& x, Mode mode) {
  if (x.rank() != 2 || x.cols() != net.trunk.layers.front().in()) {
    throw ShapeError("encode: input has shape " + shape_string(x.shape()));
  }
  Encoding e;
  e.h = net.trunk(x);
  e.projection = net.projection(e.h, mode);
  e.r = l2_normalize(e.projection);
  return e;
}

class EncoderStack {
 public:
  EncoderStack() = default;

  /// Fresh stack; the target starts as an exact copy of the online backbone.
  EncoderStack(const StackDims& dims, Variant variant, std::uint64_t seed) : dims_(dims), variant_(variant) {
    if (dims.input_dim == 0 || dims.repr_dim == 0 || dims.proj_hidden == 0 || dims.proj_dim < 2) {
      throw ConfigError("invalid encoder dimensions");
    }
    Rng rng = make_rng(seed, 0x656e63);
    online_.trunk = Trunk(dims, rng);
    online_.projection = TwoLayerMlp(dims.repr_dim, dims.proj_hidden, dims.proj_dim, rng);
    if (is_byol_family(variant)) {
      predictor_ = TwoLayerMlp(dims.proj_dim, dims.proj_hidden, dims.proj_dim, rng);
    }
    if (variant == Variant::kCByol) {
      b_head_ = TwoLayerMlp(dims.proj_dim, dims.proj_hidden, dims.proj_dim, rng);
      d_head_ = Linear(dims.proj_dim, dims.proj_dim, rng);
    }
    if (is_byol_family(variant)) copy_online_to_target();
  }

  const StackDims& dims() const { return dims_; }
  Variant variant() const { return variant_; }
  bool has_target() const { return target_.has_value(); }

  Encoding encode(const Tensor& x, Mode mode) { return encode_backbone(online_, x, mode); }

  /// Trunk output h only.
  Tensor represent(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != dims_.input_dim) throw ShapeError("represent: input has shape " + shape_string(x.shape()));
    return online_.trunk(x);
  }

  /// Target forward pass; outputs never require gradients.
  Encoding encode_target(const Tensor& x, Mode mode) {
    if (!target_) throw Error("encode_target: stack has no target network");
    return encode_backbone(*target_, x, mode);
  }

  Tensor predict(const Tensor& projection, Mode mode) { return predictor()(projection, mode); }
  Tensor b_head(const Tensor& y, Mode mode) { return require(b_head_, "b head")(y, mode); }
  Tensor d_head(const Tensor& z) const {
    if (!d_head_) throw Error("stack has no d head");
    return (*d_head_)(z);
  }

  /// All trainable parameters of the online path.
  std::vector<NamedParam> params() {
    std::vector<NamedParam> out;
    visit_online([&](const std::string& n, Tensor& t, bool decay) { out.push_back({n, t, decay}); });
    return out;
  }

  /// Target parameters in the same order as the online backbone's parameters.
  std::vector<NamedParam> target_params() {
    std::vector<NamedParam> out;
    if (target_) visit_backbone(*target_, "target.", [&](const std::string& n, Tensor& t, bool d) { out.push_back({n, t, d}); });
    return out;
  }

  std::vector<NamedParam> online_backbone_params() {
    std::vector<NamedParam> out;
    visit_backbone(online_, "online.", [&](const std::string& n, Tensor& t, bool d) { out.push_back({n, t, d}); });
    return out;
  }

  /// Every parameter tensor (online, then target) by reference.
  template <typename F>
  void visit_all(F&& f) {
    visit_online(f);
    if (target_) visit_backbone(*target_, "target.", f);
  }

  std::vector<NamedStats> stats() {
    std::vector<NamedStats> out;
    out.push_back({"online.projection.norm", &online_.projection.norm.stats});
    if (predictor_) out.push_back({"predictor.norm", &predictor_->norm.stats});
    if (b_head_) out.push_back({"b_head.norm", &b_head_->norm.stats});
    if (target_) out.push_back({"target.projection.norm", &target_->projection.norm.stats});
    return out;
  }

  /// Independent copy: no tensor is shared with this stack.
  EncoderStack clone() const {
    EncoderStack copy = *this;
    copy.visit_all([](const std::string&, Tensor& t, bool) { t = t.detach(t.requires_grad()); });
    return copy;
  }

  /// target <- alpha target + (1 - alpha) online, over trunk and projection.
  void ema_update(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: alpha must lie in [0, 1]");
    if (!target_) return;
    auto online = online_backbone_params();
    auto target = target_params();
    if (online.size() != target.size()) throw ShapeError("ema_update: parameter count mismatch");
    for (std::size_t k = 0; k < online.size(); ++k) {
      const Tensor& src = online[k].tensor;
      if (src.shape() != target[k].tensor.shape()) throw ShapeError("ema_update: shape mismatch");
      target[k].tensor.update([&](std::span<double> t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * src[i];
      });
    }
  }

 private:
  static TwoLayerMlp& require(std::optional<TwoLayerMlp>& m, const char* what) {
    if (!m) throw Error(std::string("stack has no ") + what);
    return *m;
  }
  TwoLayerMlp& predictor() { return require(predictor_, "predictor"); }

  void copy_online_to_target() {
    Backbone copy = online_;
    visit_backbone(copy, "", [](const std::string&, Tensor& t, bool) { t = t.detach(false); });
    target_ = std::move(copy);
  }

  template <typename F>
  void visit_online(F&& f) {
    visit_backbone(online_, "online.", f);
    if (predictor_) visit_mlp(*predictor_, "predictor.", f);
    if (b_head_) visit_mlp(*b_head_, "b_head.", f);
    if (d_head_) visit_linear(*d_head_, "d_head.", f);
  }

  template <typename F>
  static void visit_linear(Linear& l, const std::string& prefix, F&& f) {
    f(prefix + "weight", l.weight, true);
    f(prefix + "bias", l.bias, true);
  }
  template <typename F>
  static void visit_mlp(TwoLayerMlp& m, const std::string& prefix, F&& f) {
    visit_linear(m.fc1, prefix + "fc1.", f);
    f(prefix + "norm.gain", m.norm.gain, false);
    f(prefix + "norm.bias", m.norm.bias, false);
    visit_linear(m.fc2, prefix + "fc2.", f);
  }
  template <typename F>
  static void visit_backbone(Backbone& b, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < b.trunk.layers.size(); ++i) {
      visit_linear(b.trunk.layers[i], prefix + "trunk." + std::to_string(i) + ".", f);
    }
    visit_mlp(b.projection, prefix + "projection.", f);
  }

  StackDims dims_;
  Variant variant_ = Variant::kSimclr;
  Backbone online_;
  std::optional<TwoLayerMlp> predictor_;
  std::optional<TwoLayerMlp> b_head_;
  std::optional<Linear> d_head_;
  std::optional<Backbone> target_;
};

struct EmaSchedule {
  double alpha_base = 0.99;
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
};

/// alpha(k) = 1 - (1 - alpha_base) (cos(pi k / K) + 1) / 2.
inline double ema_alpha(const EmaSchedule& s) {
  if (s.step < 0 || s.total_steps <= 0) throw ConfigError("ema_alpha: need 0 <= k and K > 0");
  if (s.step > s.total_steps) throw ConfigError("ema_alpha: step exceeds total steps");
  const double frac = static_cast<double>(s.step) / static_cast<double>(s.total_steps);
  return 1.0 - (1.0 - s.alpha_base) * (std::cos(M_PI * frac) + 1.0) / 2.0;
}

}  // namespace cebmv
