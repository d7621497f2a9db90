// Copyright 2026 The EmbSum Authors.
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

// Dense row-major f64 tensors with a dynamic reverse-mode tape.
//
// Every op records its inputs and a backward closure on the output node when
// any input requires a gradient and grad mode is enabled. backward() sorts the
// reachable subgraph topologically and replays the closures in reverse order,
// accumulating additively into parent gradient buffers.

#ifndef EMBSUM_TENSOR_HPP_
#define EMBSUM_TENSOR_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace embsum {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

inline thread_local bool grad_enabled = true;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    check_finite("tensor constructor");
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }
  template <class Rng>
  static Tensor randn(Shape shape, double stddev, Rng& rng,
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(shape_numel(shape));
    for (auto& x : d) x = dist(rng);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const {
    require_2d("rows");
    return node_->shape[0];
  }
  std::size_t cols() const {
    require_2d("cols");
    return node_->shape[1];
  }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access for optimizers and initializers; never call while a
  /// recorded graph still depends on this tensor's value.
  std::span<double> mutable_data() { return node_->value; }
  double item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing has been accumulated yet.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// A leaf copy of the current value with no history.
  Tensor detach() const {
    return Tensor(shape(), node_->value, false);
  }

  void check_finite(const char* where) const {
    for (double v : node_->value) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value produced by ") + where);
      }
    }
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Reverse-mode sweep from a scalar. Populates grads of every reachable
  /// requires_grad tensor. A given loss may be swept only once.
  void backward() const;

 private:
  friend Tensor make_result(Shape, std::vector<double>,
                            std::vector<Tensor> const&,
                            std::function<void(detail::Node&)>, const char*);

  void require_2d(const char* what) const {
    if (node_->shape.size() != 2) {
      throw DimensionError(std::string(what) + " requires a 2-D tensor, got " +
                           shape_str(node_->shape));
    }
  }

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output. The closure receives the output node (whose grad is
/// populated) and must accumulate into the captured parents.
inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> const& inputs,
                          std::function<void(detail::Node&)> backward_fn,
                          const char* op_name) {
  Tensor out;
  out.node_ = std::make_shared<detail::Node>();
  out.node_->shape = std::move(shape);
  out.node_->value = std::move(value);
  out.check_finite(op_name);
  bool needs = false;
  if (detail::grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->is_leaf = false;
    for (const auto& in : inputs) out.node_->parents.push_back(in.node_ptr());
    out.node_->backward_fn = std::move(backward_fn);
  }
  return out;
}

inline void Tensor::backward() const {
  if (numel() != 1) {
    throw GraphError("backward() requires a scalar loss, got shape " +
                     shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw GraphError("backward() on a tensor detached from any parameter");
  }
  if (node_->backward_done) {
    throw GraphError("backward() called twice on the same loss");
  }
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      for (auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backward_fn(*n);
    }
  }
  // Intermediate buffers are no longer needed; leaves keep theirs.
  for (detail::Node* n : order) {
    if (!n->is_leaf && n != node_.get()) n->grad.clear();
  }
  node_->backward_done = true;
}

// ---------------------------------------------------------------------------
// Dense kernels. Row-major Eigen maps back the GEMMs.

namespace detail {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline MapC cmap(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return MapC(v.data(), static_cast<Eigen::Index>(r),
              static_cast<Eigen::Index>(c));
}
inline Map mmap(std::vector<double>& v, std::size_t r, std::size_t c) {
  return Map(v.data(), static_cast<Eigen::Index>(r),
             static_cast<Eigen::Index>(c));
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " +
                         shape_str(a.shape()));
  }
}

inline std::size_t last_dim(const Tensor& x) {
  return x.ndim() == 0 ? 1 : x.shape().back();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[r×k] · b[k×c].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  std::vector<double> out(r * c);
  detail::mmap(out, r, c).noalias() =
      detail::cmap(a.node()->value, r, k) * detail::cmap(b.node()->value, k, c);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(
      {r, c}, std::move(out), {a, b},
      [an, bn, r, k, c](detail::Node& o) {
        auto dc = detail::cmap(o.grad, r, c);
        if (an->requires_grad) {
          detail::mmap(an->grad, r, k).noalias() +=
              dc * detail::cmap(bn->value, k, c).transpose();
        }
        if (bn->requires_grad) {
          detail::mmap(bn->grad, k, c).noalias() +=
              detail::cmap(an->value, r, k).transpose() * dc;
        }
      },
      "matmul");
}

/// a[r×k] · b[c×k]ᵀ.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " +
                         shape_str(a.shape()) + " · " + shape_str(b.shape()) +
                         "ᵀ");
  }
  const std::size_t r = a.rows(), k = a.cols(), c = b.rows();
  std::vector<double> out(r * c);
  detail::mmap(out, r, c).noalias() =
      detail::cmap(a.node()->value, r, k) *
      detail::cmap(b.node()->value, c, k).transpose();
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(
      {r, c}, std::move(out), {a, b},
      [an, bn, r, k, c](detail::Node& o) {
        auto dc = detail::cmap(o.grad, r, c);
        if (an->requires_grad) {
          detail::mmap(an->grad, r, k).noalias() +=
              dc * detail::cmap(bn->value, c, k);
        }
        if (bn->requires_grad) {
          detail::mmap(bn->grad, c, k).noalias() +=
              dc.transpose() * detail::cmap(an->value, r, k);
        }
      },
      "matmul_nt");
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  detail::mmap(out, c, r) = detail::cmap(a.node()->value, r, c).transpose();
  auto an = a.node_ptr();
  return make_result(
      {c, r}, std::move(out), {a},
      [an, r, c](detail::Node& o) {
        detail::mmap(an->grad, r, c) += detail::cmap(o.grad, c, r).transpose();
      },
      "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](detail::Node& o) {
        for (auto* p : {an.get(), bn.get()}) {
          if (!p->requires_grad) continue;
          for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
        }
      },
      "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](detail::Node& o) {
        if (an->requires_grad) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
      },
      "sub");
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](detail::Node& o) {
        if (an->requires_grad) {
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            an->grad[i] += o.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            bn->grad[i] += o.grad[i] * an->value[i];
        }
      },
      "mul");
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  auto an = a.node_ptr();
  return make_result(
      a.shape(), std::move(out), {a},
      [an, s](detail::Node& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * s;
      },
      "scale");
}

/// x[r×c] + bias broadcast over rows; bias has c elements (any shape).
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_2d(x, "add_bias");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.node()->value);
  const auto& bv = bias.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  auto xn = x.node_ptr(), bn = bias.node_ptr();
  return make_result(
      {r, c}, std::move(out), {x, bias},
      [xn, bn, r, c](detail::Node& o) {
        if (xn->requires_grad) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) bn->grad[j] += o.grad[i * c + j];
        }
      },
      "add_bias");
}

inline Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  auto xn = x.node_ptr();
  auto result = make_result(x.shape(), std::move(out), {x}, nullptr, "tanh");
  if (result.requires_grad()) {
    result.node()->backward_fn = [xn](detail::Node& o) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double t = o.value[i];
        xn->grad[i] += o.grad[i] * (1.0 - t * t);
      }
    };
  }
  return result;
}

namespace detail {
inline constexpr double kGeluCoeff = 0.044715;
inline const double kSqrt2OverPi = std::sqrt(2.0 / 3.14159265358979323846);
}  // namespace detail

/// Scalar tanh-approximation GELU.
inline double gelu_scalar(double x) {
  const double u = detail::kSqrt2OverPi * (x + detail::kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(xv[i]);
  auto xn = x.node_ptr();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn](detail::Node& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double v = xn->value[i];
          const double u =
              detail::kSqrt2OverPi * (v + detail::kGeluCoeff * v * v * v);
          const double t = std::tanh(u);
          const double du =
              detail::kSqrt2OverPi * (1.0 + 3.0 * detail::kGeluCoeff * v * v);
          const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
          xn->grad[i] += o.grad[i] * d;
        }
      },
      "gelu");
}

/// Inverted dropout; identity when rate == 0.
template <class Rng>
Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  std::vector<double> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  auto xn = x.node_ptr();
  return make_result(
      x.shape(), std::move(out), {x},
      [xn, mask = std::move(mask)](detail::Node& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          xn->grad[i] += o.grad[i] * mask[i];
      },
      "dropout");
}

// ---------------------------------------------------------------------------
// Softmax family (last axis)

namespace detail {

// keep == nullptr means every position participates.
inline Tensor softmax_impl(const Tensor& x, const std::vector<std::uint8_t>* keep,
                           const char* op) {
  const std::size_t L = last_dim(x);
  if (x.ndim() > 0 && L == 0) {
    throw DimensionError(std::string(op) + ": empty last axis");
  }
  const std::size_t rows = x.numel() / L;
  const auto& xv = x.node()->value;
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * L;
    double* o = out.data() + r * L;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < L; ++j)
      if (!keep || (*keep)[r * L + j]) mx = std::max(mx, in[j]);
    if (!std::isfinite(mx)) {
      throw DimensionError(std::string(op) + ": row " + std::to_string(r) +
                           " has no unmasked entries");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (!keep || (*keep)[r * L + j]) {
        o[j] = std::exp(in[j] - mx);
        z += o[j];
      }
    }
    for (std::size_t j = 0; j < L; ++j) o[j] /= z;
  }
  auto xn = x.node_ptr();
  auto result = make_result(x.shape(), std::move(out), {x}, nullptr, op);
  if (result.requires_grad()) {
    result.node()->backward_fn = [xn, L, rows](Node& o) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o.value.data() + r * L;
        const double* g = o.grad.data() + r * L;
        double dot = 0.0;
        for (std::size_t j = 0; j < L; ++j) dot += y[j] * g[j];
        double* gx = xn->grad.data() + r * L;
        for (std::size_t j = 0; j < L; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return result;
}

}  // namespace detail

inline Tensor softmax(const Tensor& x) {
  return detail::softmax_impl(x, nullptr, "softmax");
}

/// Softmax over the last axis where keep[i] == 0 positions receive exactly
/// zero probability. keep is laid out like x.
inline Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& keep) {
  if (keep.size() != x.numel()) {
    throw DimensionError("masked_softmax: mask has " +
                         std::to_string(keep.size()) + " entries for shape " +
                         shape_str(x.shape()));
  }
  return detail::softmax_impl(x, &keep, "masked_softmax");
}

/// Mean over rows of −log softmax(logits[i])[targets[i]].
inline Tensor cross_entropy(const Tensor& logits,
                            std::span<const std::size_t> targets) {
  detail::require_2d(logits, "cross_entropy");
  const std::size_t t = logits.rows(), V = logits.cols();
  if (targets.size() != t || t == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + shape_str(logits.shape()));
  }
  const auto& lv = logits.node()->value;
  std::vector<double> probs(t * V);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] >= V) throw DimensionError("cross_entropy: target out of range");
    const double* row = lv.data() + i * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      probs[i * V + j] = std::exp(row[j] - mx);
      z += probs[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] /= z;
    total += -(row[targets[i]] - mx - std::log(z));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  auto ln = logits.node_ptr();
  return make_result(
      {}, {total / static_cast<double>(t)}, {logits},
      [ln, probs = std::move(probs), tg = std::move(tg), t, V](detail::Node& o) {
        const double g = o.grad[0] / static_cast<double>(t);
        for (std::size_t i = 0; i < t; ++i) {
          for (std::size_t j = 0; j < V; ++j) {
            ln->grad[i * V + j] +=
                g * (probs[i * V + j] - (j == tg[i] ? 1.0 : 0.0));
          }
        }
      },
      "cross_entropy");
}

/// Row-wise layer normalization with learned gain and offset (each d long).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::require_2d(x, "layer_norm");
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias do not match width " +
                         std::to_string(d));
  }
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> xhat(r * d), inv_std(r), out(r * d);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
  return make_result(
      {r, d}, std::move(out), {x, gain, bias},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
       d](detail::Node& o) {
        for (std::size_t i = 0; i < r; ++i) {
          const double* g = o.grad.data() + i * d;
          const double* xh = xhat.data() + i * d;
          if (gn->requires_grad)
            for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[j] * xh[j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[j];
          if (xn->requires_grad) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[j] * gn->value[j];
              s1 += gh;
              s2 += gh * xh[j];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[j] * gn->value[j];
              xn->grad[i * d + j] +=
                  inv_std[i] * (gh - inv_d * s1 - xh[j] * inv_d * s2);
            }
          }
        }
      },
      "layer_norm");
}

/// Scaled dot-product attention over n_heads column blocks of q[tq×d],
/// k[tk×d], v[tk×d]. keep is tq×tk (row-major); each query row must keep at
/// least one key. Returns the concatenated head outputs, tq×d.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::size_t n_heads, const std::vector<std::uint8_t>& keep) {
  detail::require_2d(q, "multi_head_attention");
  detail::require_2d(k, "multi_head_attention");
  detail::require_2d(v, "multi_head_attention");
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk) {
    throw DimensionError("multi_head_attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("multi_head_attention: width not divisible by heads");
  }
  if (keep.size() != tq * tk) throw DimensionError("multi_head_attention: mask size mismatch");
  const std::size_t dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = detail::cmap(q.node()->value, tq, d);
  const auto K = detail::cmap(k.node()->value, tk, d);
  const auto V = detail::cmap(v.node()->value, tk, d);
  std::vector<double> out(tq * d);
  auto O = detail::mmap(out, tq, d);
  // probs[h] is tq×tk.
  auto probs = std::make_shared<std::vector<double>>(n_heads * tq * tk);
  detail::RowMat S(tq, tk);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h * dh);
    const auto w = static_cast<Eigen::Index>(dh);
    S.noalias() = Q.middleCols(c0, w) * K.middleCols(c0, w).transpose();
    auto P = detail::Map(probs->data() + h * tq * tk, static_cast<Eigen::Index>(tq),
                         static_cast<Eigen::Index>(tk));
    for (std::size_t i = 0; i < tq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tk; ++j)
        if (keep[i * tk + j]) mx = std::max(mx, S(i, j) * sc);
      if (!std::isfinite(mx)) {
        throw DimensionError("multi_head_attention: query row " + std::to_string(i) +
                             " has no visible keys");
      }
      double z = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        const double e = keep[i * tk + j] ? std::exp(S(i, j) * sc - mx) : 0.0;
        P(i, j) = e;
        z += e;
      }
      P.row(static_cast<Eigen::Index>(i)) /= z;
    }
    O.middleCols(c0, w).noalias() = P * V.middleCols(c0, w);
  }
  auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  return make_result(
      {tq, d}, std::move(out), {q, k, v},
      [qn, kn, vn, probs, n_heads, tq, tk, d, dh, sc](detail::Node& o) {
        const auto dO = detail::cmap(o.grad, tq, d);
        const auto Q = detail::cmap(qn->value, tq, d);
        const auto K = detail::cmap(kn->value, tk, d);
        const auto V = detail::cmap(vn->value, tk, d);
        detail::RowMat dP(tq, tk), dS(tq, tk);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const auto c0 = static_cast<Eigen::Index>(h * dh);
          const auto w = static_cast<Eigen::Index>(dh);
          const auto P = detail::MapC(probs->data() + h * tq * tk, static_cast<Eigen::Index>(tq),
                                      static_cast<Eigen::Index>(tk));
          if (vn->requires_grad) {
            detail::mmap(vn->grad, tk, d).middleCols(c0, w).noalias() +=
                P.transpose() * dO.middleCols(c0, w);
          }
          if (!qn->requires_grad && !kn->requires_grad) continue;
          dP.noalias() = dO.middleCols(c0, w) * V.middleCols(c0, w).transpose();
          for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(tq); ++i) {
            const double dot = P.row(i).dot(dP.row(i));
            dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix()) * sc;
          }
          if (qn->requires_grad) {
            detail::mmap(qn->grad, tq, d).middleCols(c0, w).noalias() +=
                dS * K.middleCols(c0, w);
          }
          if (kn->requires_grad) {
            detail::mmap(kn->grad, tk, d).middleCols(c0, w).noalias() +=
                dS.transpose() * Q.middleCols(c0, w);
          }
        }
      },
      "multi_head_attention");
}

// ---------------------------------------------------------------------------
// Structural

/// Rows of table[V×d] picked by ids (gather).
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_2d(table, "embedding");
  const std::size_t V = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= V) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) +
                           " out of range for table of " + std::to_string(V));
    }
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  auto tn = table.node_ptr();
  return make_result(
      {ids.size(), d}, std::move(out), {table},
      [tn, idv = std::move(idv), d](detail::Node& o) {
        for (std::size_t i = 0; i < idv.size(); ++i)
          for (std::size_t j = 0; j < d; ++j)
            tn->grad[idv[i] * d + j] += o.grad[i * d + j];
      },
      "embedding");
}

/// Same as embedding(); named for selecting hidden-state rows.
inline Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  return embedding(x, rows);
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  detail::require_2d(x, "slice_rows");
  if (start + len > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " +
                         shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(start * c),
                          xv.begin() + static_cast<std::ptrdiff_t>((start + len) * c));
  auto xn = x.node_ptr();
  return make_result(
      {len, c}, std::move(out), {x},
      [xn, start, c](detail::Node& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          xn->grad[start * c + i] += o.grad[i];
      },
      "slice_rows");
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  detail::require_2d(x, "slice_cols");
  if (start + len > x.cols()) {
    throw DimensionError("slice_cols: out of range for " + shape_str(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  const auto& xv = x.node()->value;
  std::vector<double> out(r * len);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.data() + i * c + start, len, out.data() + i * len);
  auto xn = x.node_ptr();
  return make_result(
      {r, len}, std::move(out), {x},
      [xn, start, len, r, c](detail::Node& o) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < len; ++j)
            xn->grad[i * c + start + j] += o.grad[i * len + j];
      },
      "slice_cols");
}

/// Vertical concatenation of 2-D tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " +
                           shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_result(
      {total, c}, std::move(out), parts,
      [nodes](detail::Node& o) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
          if (n->requires_grad) {
            for (std::size_t i = 0; i < n->value.size(); ++i)
              n->grad[i] += o.grad[off + i];
          }
          off += n->value.size();
        }
      },
      "concat_rows");
}

/// Horizontal concatenation of 2-D tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k],
                  out.data() + i * total + off);
    off += widths[k];
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_result(
      {r, total}, std::move(out), parts,
      [nodes, widths, r, total](detail::Node& o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k]->requires_grad) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                nodes[k]->grad[i * widths[k] + j] += o.grad[i * total + off + j];
          }
          off += widths[k];
        }
      },
      "concat_cols");
}

/// Same data, new shape (row-major order is preserved).
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  }
  auto xn = x.node_ptr();
  return make_result(
      std::move(shape), x.node()->value, {x},
      [xn](detail::Node& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
      },
      "reshape");
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node_ptr();
  return make_result(
      {}, {s}, {x},
      [xn](detail::Node& o) {
        for (auto& g : xn->grad) g += o.grad[0];
      },
      "sum");
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Sum of a list of scalars.
inline Tensor add_all(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("add_all: no inputs");
  Tensor acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

}  // namespace embsum

#endif  // EMBSUM_TENSOR_HPP_
