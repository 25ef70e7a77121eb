#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "amom/tensor.hpp"

namespace amom {

namespace detail {

// Derivative at x[i] = orig from central differences at steps h and h/2,
// combined by Richardson extrapolation (fourth order). `eval(v)` returns f
// with that element set to v; `f0` is f at orig. Second differences at
// steps h, h/2, h/4 are combined the same way pairwise: for smooth f that is
// O(h^3), while a kink (relu) inside a stencil leaves a jump that does not
// shrink with h. One pair alone is blind to a kink at distance h/3, the pair
// below it is not. On a jump the step shrinks tenfold, at most three times.
template <class T, class Eval>
double central_difference(const Eval& eval, T orig, double h, double f0) {
  const double eps = std::numeric_limits<T>::epsilon();
  double numeric = 0;
  for (int attempt = 0; attempt < 4; ++attempt, h /= 10) {
    double up[3], down[3];
    for (int k = 0; k < 3; ++k) {
      up[k] = eval(static_cast<T>(orig + h / (1 << k)));
      down[k] = eval(static_cast<T>(orig - h / (1 << k)));
    }
    const double d1 = (up[0] - down[0]) / (2 * h), d2 = (up[1] - down[1]) / h;
    numeric = (4 * d2 - d1) / 3;
    if (!std::isfinite(numeric)) throw NumericError("gradient_check: non-finite numeric estimate");
    auto jump = [&](int k) {
      return (up[k] + down[k] - 4 * (up[k + 1] + down[k + 1]) + 6 * f0) / (h / (1 << k));
    };
    const double bound = 1e-4 * std::max(std::abs(numeric), 1e-8) + 64 * eps * std::max(std::abs(f0), 1.0) / h;
    if (std::abs(jump(0)) <= bound && std::abs(jump(1)) <= bound) break;
  }
  return numeric;
}

inline double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

}  // namespace detail

// Max over components of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with extrapolated central differences of step h (see above). `f`
// must return a scalar tensor and be deterministic.
template <class T>
double gradient_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double h) {
  if (!(h > 0.0 && h <= 0.1)) throw Error("gradient_check: step must lie in (0, 0.1]");
  Tensor<T> probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<T> analytic;
  {
    Tape<T> tape;
    Tensor<T> y = f(probe);
    if (y.numel() != 1) throw ShapeError("gradient_check: f must be scalar-valued");
    if (y.requires_grad()) {
      tape.backprop(y);
      analytic.assign(probe.grad().begin(), probe.grad().end());
    }
  }
  if (analytic.empty()) analytic.assign(x.numel(), T{0});

  double worst = 0;
  Tensor<T> shifted = x.clone();
  const double f0 = static_cast<double>(f(shifted).item());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T orig = x[i];
    auto eval = [&](T v) {
      shifted[i] = v;
      const double r = static_cast<double>(f(shifted).item());
      shifted[i] = orig;
      return r;
    };
    worst = std::max(worst, detail::relative_error(analytic[i], detail::central_difference(eval, orig, h, f0)));
  }
  return worst;
}

// Same measure over every element of `params`, which `loss` must read
// through their shared storage: analytic gradients from one backprop, numeric
// ones by perturbing each element in place.
template <class T>
double parameter_gradient_check(std::vector<Tensor<T>> params, const std::function<Tensor<T>()>& loss, double h) {
  if (!(h > 0.0 && h <= 0.1)) throw Error("gradient_check: step must lie in (0, 0.1]");
  std::vector<std::vector<T>> analytic;
  {
    for (auto& p : params) {
      p.set_requires_grad(true);
      p.zero_grad();
    }
    Tape<T> tape;
    Tensor<T> y = loss();
    if (y.numel() != 1) throw ShapeError("gradient_check: loss must be scalar-valued");
    tape.backprop(y);
    for (auto& p : params) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
      if (analytic.back().empty()) analytic.back().assign(p.numel(), T{0});
      p.zero_grad();
    }
  }
  double worst = 0;
  const double f0 = static_cast<double>(loss().item());
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto data = params[t].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T orig = data[i];
      auto eval = [&](T v) {
        data[i] = v;
        const double r = static_cast<double>(loss().item());
        data[i] = orig;
        return r;
      };
      worst = std::max(worst, detail::relative_error(analytic[t][i], detail::central_difference(eval, orig, h, f0)));
    }
  }
  return worst;
}

}  // namespace amom
