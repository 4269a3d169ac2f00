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

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Every operation below creates
// a new node that remembers its parents and a closure that pushes the node's
// adjoint into them; Tensor::backward() walks the graph in reverse
// topological order. Nodes whose parents do not require gradients are
// recorded without parents, so forward-only passes (target networks,
// evaluation) leave no graph behind.
//
// Only rank-0, rank-1 and rank-2 tensors are used. Broadcasting is limited to
// adding a row bias and per-column affine scaling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cebmv/common.hpp"

namespace cebmv {

using Shape = std::vector<std::size_t>;

enum class Op {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddRowBias,
  kScale,
  kAddScalar,
  kRelu,
  kSum,
  kMean,
  kSumRows,
  kSquare,
  kConcatRows,
  kBatchStandardize,
  kAffineCols,
  kHouseholderApply,
  kStopGradient,
  kLogSoftmaxRows,
  kDotRows,
  kL2Normalize,
  kDiagonal,
};

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Op op = Op::kLeaf;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t version = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::uint64_t> parent_versions;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

inline void check_finite(const std::vector<double>& v, Op op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value produced by tensor op " +
                         std::to_string(static_cast<int>(op)));
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw ShapeError("shape " + shape_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    detail::check_finite(values, Op::kLeaf);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return from({rows, cols}, std::move(values), requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rank() < 2 ? 1 : node_->shape[1]; }
  Op op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->op == Op::kLeaf; }

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Overwrites a leaf's values. Any graph built from the old values is
  /// invalidated: backward() on it raises an error.
  void assign(std::span<const double> values) {
    require_leaf("assign");
    if (values.size() != size()) throw ShapeError("assign: size mismatch");
    std::vector<double> v(values.begin(), values.end());
    detail::check_finite(v, Op::kLeaf);
    node_->value = std::move(v);
    ++node_->version;
  }

  /// In-place update of a leaf through a callback on its value buffer.
  template <typename F>
  void update(F&& f) {
    require_leaf("update");
    f(std::span<double>(node_->value));
    ++node_->version;
  }

  /// Fresh leaf holding a copy of the values, outside any graph.
  Tensor detach(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls until zero_grad(); intermediate adjoints are recomputed each call.
  void backward() const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

 private:
  void require_leaf(const char* what) const {
    if (!is_leaf()) throw Error(std::string(what) + " is only valid on leaf tensors");
  }

  detail::NodePtr node_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_mat(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MutMap as_mat(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

/// Builds a node. When no parent requires a gradient the parents and the
/// backward closure are dropped.
inline Tensor make(Op op, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const Tensor& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    for (const Tensor& p : parents) {
      n->parents.push_back(p.node());
      n->parent_versions.push_back(p.node()->version);
    }
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void accumulate(Node& parent, const std::vector<double>& delta) {
  if (!parent.requires_grad) return;
  auto& g = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

inline void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar output, got " + shape_string(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next].get();
      if (n->parents[next]->version != n->parent_versions[next]) {
        throw Error("backward(): a tensor was modified after the graph was built");
      }
      ++next;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (n->op != Op::kLeaf) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (detail::Node* n : order) {
    if (n->op != Op::kLeaf) n->grad.clear();
  }
}

// ---------------------------------------------------------------------------
// Primitives

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.node()->value, m, k) * detail::as_mat(b.node()->value, k, n);
  return detail::make(Op::kMatMul, {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto g = detail::as_mat(self.grad, m, n);
    if (pa.requires_grad) {
      detail::as_mat(pa.grad_buffer(), m, k).noalias() += g * detail::as_mat(pb.value, k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::as_mat(pb.grad_buffer(), k, n).noalias() += detail::as_mat(pa.value, m, k).transpose() * g;
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  detail::as_mat(out, c, r) = detail::as_mat(a.node()->value, r, c).transpose();
  return detail::make(Op::kTranspose, {c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    detail::as_mat(p.grad_buffer(), r, c) += detail::as_mat(self.grad, c, r).transpose();
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make(Op::kAdd, a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make(Op::kSub, a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Elementwise product of equal shapes.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make(Op::kMul, a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

/// x[B,n] + bias[n] broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_row_bias");
  detail::require_rank(bias, 1, "add_row_bias");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c) throw ShapeError("add_row_bias: bias length does not match columns");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
  return detail::make(Op::kAddRowBias, x.shape(), std::move(out), {x, bias}, [r, c](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i];
  return detail::make(Op::kScale, x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return detail::make(Op::kAddScalar, x.shape(), std::move(out), {x}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make(Op::kRelu, x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0.0) g[i] += self.grad[i];
  });
}

inline Tensor square(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return detail::make(Op::kSquare, x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.value[i] * self.grad[i];
  });
}

/// Sum of all elements -> scalar.
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make(Op::kSum, {}, {s}, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

/// Mean of all elements -> scalar.
inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.size());
  return detail::make(Op::kMean, {}, {s / n}, {x}, [n](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& v : g) v += self.grad[0] / n;
  });
}

/// [B,n] -> [B], summing each row.
inline Tensor sum_rows(const Tensor& x) {
  detail::require_rank(x, 2, "sum_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  return detail::make(Op::kSumRows, {r}, std::move(out), {x}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

/// Stacks rank-2 tensors with equal column counts along the row axis.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const Tensor& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return detail::make(Op::kConcatRows, {r, c}, std::move(out), parts,
                      [offsets](detail::Node& self) {
                        for (std::size_t k = 0; k < self.parents.size(); ++k) {
                          auto& p = *self.parents[k];
                          if (!p.requires_grad) continue;
                          auto& g = p.grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                        }
                      });
}

/// Running statistics owned by a batch-standardization layer.
struct BatchStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchStats() = default;
  explicit BatchStats(std::size_t features)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

/// Per-feature standardization. Train mode uses batch statistics and folds
/// them into `stats`; eval mode uses the running statistics unchanged.
inline Tensor batch_standardize(const Tensor& x, BatchStats& stats, bool train) {
  detail::require_rank(x, 2, "batch_standardize");
  const std::size_t r = x.rows(), c = x.cols();
  if (stats.running_mean.size() != c) throw ShapeError("batch_standardize: feature count mismatch");
  std::vector<double> out(x.size());
  std::vector<double> inv_std(c);
  if (train) {
    if (r < 2) throw ShapeError("batch_standardize: train mode needs batch size >= 2");
    // Row-major sweeps throughout; the per-column loops stride badly.
    std::vector<double> m(c, 0.0), v(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) m[j] += x[i * c + j];
    for (double& mj : m) mj /= static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x[i * c + j] - m[j];
        v[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      v[j] /= static_cast<double>(r);
      inv_std[j] = 1.0 / std::sqrt(v[j] + stats.eps);
      const double unbiased = v[j] * static_cast<double>(r) / static_cast<double>(r - 1);
      stats.running_mean[j] = stats.momentum * stats.running_mean[j] + (1.0 - stats.momentum) * m[j];
      stats.running_var[j] = stats.momentum * stats.running_var[j] + (1.0 - stats.momentum) * unbiased;
    }
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (x[i * c + j] - m[j]) * inv_std[j];
    return detail::make(Op::kBatchStandardize, x.shape(), std::move(out), {x},
                        [r, c, inv_std](detail::Node& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          const auto& y = self.value;
                          const double n = static_cast<double>(r);
                          std::vector<double> sg(c, 0.0), sgy(c, 0.0);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                              sg[j] += self.grad[i * c + j];
                              sgy[j] += self.grad[i * c + j] * y[i * c + j];
                            }
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                              g[i * c + j] += inv_std[j] / n * (n * self.grad[i * c + j] - sg[j] - y[i * c + j] * sgy[j]);
                            }
                        });
  }
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + stats.eps);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = (x[i * c + j] - stats.running_mean[j]) * inv_std[j];
  return detail::make(Op::kBatchStandardize, x.shape(), std::move(out), {x},
                      [r, c, inv_std](detail::Node& self) {
                        auto& g = self.parents[0]->grad_buffer();
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * inv_std[j];
                      });
}

/// x[B,n] * gain[n] + bias[n].
inline Tensor affine_cols(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  detail::require_rank(x, 2, "affine_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) throw ShapeError("affine_cols: parameter length mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * gain[j] + bias[j];
  return detail::make(Op::kAffineCols, x.shape(), std::move(out), {x, gain, bias}, [r, c](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * pg.value[j];
    }
    if (pg.requires_grad) {
      auto& g = pg.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * px.value[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

/// Row-wise Householder reflection sending e_1 to mu[i], applied to base[i].
/// Below ||e_1 - mu[i]|| < 1e-9 the reflection is the identity. `base` is
/// treated as a constant (no adjoint flows into it).
inline Tensor householder_apply(const Tensor& mu, const Tensor& base) {
  detail::require_rank(mu, 2, "householder_apply");
  detail::require_same(mu, base, "householder_apply");
  const std::size_t r = mu.rows(), c = mu.cols();
  std::vector<double> out(base.values().begin(), base.values().end());
  std::vector<char> active(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* m = mu.values().data() + i * c;
    const double* b = base.values().data() + i * c;
    double q = 0.0, s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = (j == 0 ? 1.0 : 0.0) - m[j];
      q += d * d;
      s += d * b[j];
    }
    if (std::sqrt(q) < 1e-9) continue;
    active[i] = 1;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = (j == 0 ? 1.0 : 0.0) - m[j];
      out[i * c + j] -= 2.0 * d * s / q;
    }
  }
  Tensor base_const = base.requires_grad() ? base.detach() : base;
  return detail::make(Op::kHouseholderApply, mu.shape(), std::move(out), {mu, base_const},
                      [r, c, active](detail::Node& self) {
                        auto& pm = *self.parents[0];
                        const auto& b = self.parents[1]->value;
                        auto& g = pm.grad_buffer();
                        std::vector<double> d(c);
                        for (std::size_t i = 0; i < r; ++i) {
                          if (!active[i]) continue;
                          const double* up = self.grad.data() + i * c;
                          double q = 0.0, s = 0.0, gd = 0.0;
                          for (std::size_t j = 0; j < c; ++j) {
                            d[j] = (j == 0 ? 1.0 : 0.0) - pm.value[i * c + j];
                            q += d[j] * d[j];
                            s += d[j] * b[i * c + j];
                            gd += up[j] * d[j];
                          }
                          // z = b - 2 d s / q, and mu = e_1 - d.
                          for (std::size_t j = 0; j < c; ++j) {
                            const double dz_dd = -2.0 * (up[j] * s / q + gd * b[i * c + j] / q -
                                                         2.0 * gd * s * d[j] / (q * q));
                            g[i * c + j] -= dz_dd;
                          }
                        }
                      });
}

/// Forwards x; nothing flows back through the result.
inline Tensor stop_gradient(const Tensor& x) {
  auto n = std::make_shared<detail::Node>();
  n->op = Op::kStopGradient;
  n->shape = x.shape();
  n->value.assign(x.values().begin(), x.values().end());
  return Tensor(std::move(n));
}

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "log_softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.values().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return detail::make(Op::kLogSoftmaxRows, x.shape(), std::move(out), {x}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] - std::exp(y[i * c + j]) * s;
    }
  });
}

/// [B,n] . [B,n] -> [B] row-wise inner products.
inline Tensor dot_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "dot_rows");
  detail::require_same(a, b, "dot_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a[i * c + j] * b[i * c + j];
  return detail::make(Op::kDotRows, {r}, std::move(out), {a, b}, [r, c](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * pb.value[i * c + j];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * pa.value[i * c + j];
    }
  });
}

/// Scales every row to unit Euclidean norm. Rows with norm <= 1e-12 are an
/// error. A rank-1 input is treated as a single row.
inline Tensor l2_normalize(const Tensor& v) {
  if (v.rank() != 1 && v.rank() != 2) throw ShapeError("l2_normalize: expected rank 1 or 2");
  const std::size_t r = v.rank() == 1 ? 1 : v.rows();
  const std::size_t c = v.rank() == 1 ? v.size() : v.cols();
  std::vector<double> out(v.size());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * v[i * c + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 1e-12)) throw NumericError("l2_normalize: row norm below 1e-12");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v[i * c + j] / norms[i];
  }
  return detail::make(Op::kL2Normalize, v.shape(), std::move(out), {v}, [r, c, norms](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t i = 0; i < r; ++i) {
      double yg = 0.0;
      for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += (self.grad[i * c + j] - y[i * c + j] * yg) / norms[i];
    }
  });
}

/// Diagonal of a square matrix -> [n].
inline Tensor diagonal(const Tensor& x) {
  detail::require_rank(x, 2, "diagonal");
  const std::size_t n = x.rows();
  if (x.cols() != n) throw ShapeError("diagonal: matrix is not square");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i * n + i];
  return detail::make(Op::kDiagonal, {n}, std::move(out), {x}, [n](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference checking

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|)
/// for the gradient of a scalar function w.r.t. a set of leaf tensors. `f`
/// must rebuild its graph from the current leaf values and be deterministic
/// (reseed any randomness inside). Leaves are restored on return.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double step = 1e-5) {
  for (Tensor& t : leaves) t.zero_grad();
  Tensor out = f();
  out.backward();
  double worst = 0.0;
  for (Tensor& t : leaves) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    std::vector<double> base(t.values().begin(), t.values().end());
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<double> v = base;
        v[i] += delta;
        t.assign(v);
        const double y = f().item();
        if (!std::isfinite(y)) throw NumericError("grad_check: non-finite f at probe point");
        return y;
      };
      const double numeric = (probe(step) - probe(-step)) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    t.assign(base);
    t.zero_grad();
  }
  return worst;
}

/// Single-input convenience form.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step = 1e-5) {
  Tensor leaf = x.detach(true);
  return grad_check([&] { return f(leaf); }, {leaf}, step);
}

}  // namespace cebmv
