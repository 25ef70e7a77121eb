#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "amom/tensor.hpp"

namespace amom {

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One bias-corrected Adam update of `params` from their grad buffers
// (parameters without a gradient are treated as having a zero gradient).
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  if (!(lr > 0)) throw Error("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T{0});
      state.second_moment.emplace_back(p.numel(), T{0});
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) throw ShapeError("adam_step: parameter shape changed");
    for (const T g : params[i].grad())
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto w = params[i].data();
    auto g = params[i].grad();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const T gj = g.empty() ? T{0} : g[j];
      m[j] = b1 * m[j] + (T{1} - b1) * gj;
      v[j] = b2 * v[j] + (T{1} - b2) * gj * gj;
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (const T g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

// Linear warmup then inverse-square-root decay; lr(warmup) == base_lr.
struct LrSchedule {
  double base_lr = 5e-4;
  std::uint64_t warmup_steps = 10000;

  double at(std::uint64_t step) const {
    if (step < 1) throw Error("LrSchedule: step must be >= 1");
    const double s = static_cast<double>(step), w = static_cast<double>(warmup_steps);
    return base_lr * std::min(std::sqrt(w / s), s / w);
  }
};

inline double lr_at_step(const LrSchedule& sched, std::uint64_t step) { return sched.at(step); }

}  // namespace amom
