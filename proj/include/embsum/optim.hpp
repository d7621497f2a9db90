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

#ifndef EMBSUM_OPTIM_HPP_
#define EMBSUM_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "embsum/tensor.hpp"

namespace embsum {

/// Named trainable leaves, iterated in name order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (params_.count(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    if (!t.requires_grad()) {
      t = Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
    }
    return params_.emplace(name, std::move(t)).first->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  /// Value snapshot, e.g. for best-checkpoint retention.
  std::map<std::string, std::vector<double>> snapshot() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : params_) out[name] = {t.data().begin(), t.data().end()};
    return out;
  }
  void restore(const std::map<std::string, std::vector<double>>& snap) {
    for (auto& [name, t] : params_) {
      const auto& v = snap.at(name);
      if (v.size() != t.numel()) throw DimensionError("restore: size mismatch for " + name);
      std::copy(v.begin(), v.end(), t.mutable_data().begin());
    }
  }

 private:
  std::map<std::string, Tensor> params_;
};

/// Multiplies every gradient by s.
inline void scale_grads(ParamStore& params, double s) {
  for (auto& [_, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (double& g : t.mutable_grad()) g *= s;
  }
}

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.mutable_grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) scale_grads(params, max_norm / norm);
  return norm;
}

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  void step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.items()) {
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(p.numel(), 0.0);
        st.v.assign(p.numel(), 0.0);
      }
      if (st.m.size() != p.numel()) {
        throw DimensionError("adam: state size mismatch for " + name);
      }
      auto val = p.mutable_data();
      const bool has = p.has_grad();
      auto grad = has ? p.mutable_grad() : std::span<double>{};
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = has ? grad[i] : 0.0;
        st.m[i] = opt_.beta1 * st.m[i] + (1.0 - opt_.beta1) * g;
        st.v[i] = opt_.beta2 * st.v[i] + (1.0 - opt_.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        val[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
    }
  }

  long steps() const { return t_; }
  const std::vector<double>& first_moment(const std::string& n) const { return state_.at(n).m; }
  const std::vector<double>& second_moment(const std::string& n) const { return state_.at(n).v; }
  void set_lr(double lr) { opt_.lr = lr; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamOptions opt_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Plain gradient descent.
class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParamStore& params) {
    for (auto& [_, p] : params.items()) {
      if (!p.has_grad()) continue;
      auto val = p.mutable_data();
      auto grad = p.mutable_grad();
      for (std::size_t i = 0; i < val.size(); ++i) val[i] -= lr_ * grad[i];
    }
  }

 private:
  double lr_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckEntry {
  std::string name;
  std::size_t numel = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t non_finite = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  bool passed() const {
    for (const auto& e : entries)
      if (e.non_finite > 0 || e.max_rel_err > tol) return false;
    return true;
  }
  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Gradients smaller than this are compared absolutely; it sits above the
  // central-difference noise floor (~1e-16 / eps) for O(1) losses.
  double abs_floor = 1e-7;
  // Stride between checked coordinates within each tensor (1 = all).
  std::size_t stride = 1;
};

/// Compares analytic gradients of loss_fn() with central differences for
/// every tensor in params. loss_fn must rebuild the graph on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                                  ParamStore& params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  params.zero_grad();
  loss_fn().backward();
  GradCheckReport report;
  report.tol = opt.tol;
  for (auto& [name, p] : params.items()) {
    GradCheckEntry e;
    e.name = name;
    e.numel = p.numel();
    const std::vector<double> analytic = p.grad();
    auto val = p.mutable_data();
    const std::size_t stride = std::max<std::size_t>(1, opt.stride);
    for (std::size_t i = 0; i < val.size(); i += stride) {
      const double orig = val[i];
      double fp = 0.0, fm = 0.0;
      bool ok = true;
      {
        NoGradGuard ng;
        try {
          val[i] = orig + opt.eps;
          fp = loss_fn().item();
          val[i] = orig - opt.eps;
          fm = loss_fn().item();
        } catch (const NumericError&) {
          ok = false;
        }
      }
      val[i] = orig;
      if (!ok || !std::isfinite(fp) || !std::isfinite(fm)) {
        ++e.non_finite;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * opt.eps);
      const double abs_err = std::abs(fd - analytic[i]);
      const double denom =
          std::max({std::abs(fd), std::abs(analytic[i]), opt.abs_floor});
      const double rel = abs_err / denom;
      if (rel > e.max_rel_err) {
        e.max_rel_err = rel;
        e.worst_index = i;
      }
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
    }
    report.entries.push_back(e);
  }
  params.zero_grad();
  return report;
}

}  // namespace embsum

#endif  // EMBSUM_OPTIM_HPP_
