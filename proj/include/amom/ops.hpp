#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amom/kernels.hpp"
#include "amom/rng.hpp"
#include "amom/tensor.hpp"

namespace amom {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Size of the broadcast operand when `rhs` matches a suffix of `lhs`.
inline std::size_t suffix_broadcast(const Shape& lhs, const Shape& rhs, const char* op) {
  if (rhs.size() <= lhs.size() &&
      std::equal(rhs.rbegin(), rhs.rend(), lhs.rbegin())) {
    return shape_numel(rhs);
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(rhs) + " onto " +
                   shape_str(lhs));
}

template <class T>
Tensor<T> finish(Tensor<T> out, const char* op) {
  check_finite(out, op);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  gemm(m, n, k, a.data().data(), b.data().data(), out.data().data());
  detail::check_finite(out, "matmul");
  if (auto* tape = detail::recording(a, b)) {
    detail::mark_interior(out);
    tape->record([an = a.node(), bn = b.node(), on = out.node(), m, n, k] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto bt = transposed(bn->data.data(), k, n);
        gemm(m, k, n, on->grad.data(), bt.data(), an->ensure_grad().data(), true);
      }
      if (bn->requires_grad) {
        auto at = transposed(an->data.data(), m, k);
        gemm(k, n, m, at.data(), on->grad.data(), bn->ensure_grad().data(), true);
      }
    });
  }
  return out;
}

// Elementwise a + b; b may match a suffix of a's shape and is broadcast.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t nb = detail::suffix_broadcast(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i % nb];
  detail::check_finite(out, "add");
  if (auto* tape = detail::recording(a, b)) {
    detail::mark_interior(out);
    tape->record([an = a.node(), bn = b.node(), on = out.node(), nb] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
      }
    });
  }
  return out;
}

// Elementwise a * b with the same suffix broadcast as add().
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t nb = detail::suffix_broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i % nb];
  detail::check_finite(out, "mul");
  if (auto* tape = detail::recording(a, b)) {
    detail::mark_interior(out);
    tape->record([an = a.node(), bn = b.node(), on = out.node(), nb] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i % nb];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * s;
  detail::check_finite(out, "scale");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), s] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * s;
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  detail::check_finite(out, "relu");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node()] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xn->data[i] > T{0}) gx[i] += on->grad[i];
    });
  }
  return out;
}

// Sum of all elements, accumulated in double.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(static_cast<T>(acc));
  detail::check_finite(out, "sum");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node()] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (auto& g : gx) g += on->grad[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

// ---------------------------------------------------------- normalisation

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "softmax");
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t c = 0; c < sp.inner; ++c) {
      const std::size_t base = a * sp.extent * sp.inner + c;
      T mx = in[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, in[base + e * sp.inner]);
      double z = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        T v = std::exp(in[base + e * sp.inner] - mx);
        o[base + e * sp.inner] = v;
        z += v;
      }
      const T inv = static_cast<T>(1.0 / z);
      for (std::size_t e = 0; e < sp.extent; ++e) o[base + e * sp.inner] *= inv;
    }
  }
  detail::check_finite(out, "softmax");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), sp] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& y = on->data;
      const auto& g = on->grad;
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t c = 0; c < sp.inner; ++c) {
          const std::size_t base = a * sp.extent * sp.inner + c;
          double dot = 0;
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            dot += static_cast<double>(g[i]) * y[i];
          }
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            gx[i] += y[i] * (g[i] - static_cast<T>(dot));
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "log_softmax");
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t c = 0; c < sp.inner; ++c) {
      const std::size_t base = a * sp.extent * sp.inner + c;
      T mx = in[base];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, in[base + e * sp.inner]);
      double z = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) z += std::exp(in[base + e * sp.inner] - mx);
      const T lz = mx + static_cast<T>(std::log(z));
      for (std::size_t e = 0; e < sp.extent; ++e) o[base + e * sp.inner] = in[base + e * sp.inner] - lz;
    }
  }
  detail::check_finite(out, "log_softmax");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), sp] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      const auto& y = on->data;
      const auto& g = on->grad;
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t c = 0; c < sp.inner; ++c) {
          const std::size_t base = a * sp.extent * sp.inner + c;
          double gs = 0;
          for (std::size_t e = 0; e < sp.extent; ++e) gs += g[base + e * sp.inner];
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            gx[i] += g[i] - std::exp(y[i]) * static_cast<T>(gs);
          }
        }
      }
    });
  }
  return out;
}

// (x - mean) / sqrt(var + eps) * gain + bias along `axis`; gain and bias
// have one entry per position along that axis.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::size_t axis, double eps = 1e-5) {
  const auto sp = detail::split_axis(x.shape(), axis, "layer_norm");
  if (gain.numel() != sp.extent || bias.numel() != sp.extent) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(sp.extent) + " entries");
  }
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(sp.outer * sp.inner);
  auto in = x.data();
  auto o = out.data();
  auto gn = gain.data();
  auto bs = bias.data();
  for (std::size_t a = 0; a < sp.outer; ++a) {
    for (std::size_t c = 0; c < sp.inner; ++c) {
      const std::size_t base = a * sp.extent * sp.inner + c;
      double mu = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) mu += in[base + e * sp.inner];
      mu /= static_cast<double>(sp.extent);
      double var = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const double d = in[base + e * sp.inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(sp.extent);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[a * sp.inner + c] = static_cast<T>(is);
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const std::size_t i = base + e * sp.inner;
        xhat[i] = static_cast<T>((in[i] - mu) * is);
        o[i] = xhat[i] * gn[e] + bs[e];
      }
    }
  }
  detail::check_finite(out, "layer_norm");
  if (auto* tape = detail::recording(x, gain, bias)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), gn_ = gain.node(), bn = bias.node(), on = out.node(), sp,
                  xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (gn_->requires_grad || bn->requires_grad) {
        auto* gg = gn_->requires_grad ? &gn_->ensure_grad() : nullptr;
        auto* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
        for (std::size_t a = 0; a < sp.outer; ++a)
          for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t c = 0; c < sp.inner; ++c) {
              const std::size_t i = (a * sp.extent + e) * sp.inner + c;
              if (gg) (*gg)[e] += g[i] * xhat[i];
              if (gb) (*gb)[e] += g[i];
            }
      }
      if (!xn->requires_grad) return;
      auto& gx = xn->ensure_grad();
      const double n = static_cast<double>(sp.extent);
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t c = 0; c < sp.inner; ++c) {
          const std::size_t base = a * sp.extent * sp.inner + c;
          double m1 = 0, m2 = 0;
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            const double dxh = static_cast<double>(g[i]) * gn_->data[e];
            m1 += dxh;
            m2 += dxh * xhat[i];
          }
          m1 /= n;
          m2 /= n;
          const double is = inv_std[a * sp.inner + c];
          for (std::size_t e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            const double dxh = static_cast<double>(g[i]) * gn_->data[e];
            gx[i] += static_cast<T>(is * (dxh - m1 - xhat[i] * m2));
          }
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- indexing

// Rows of `table` selected by `ids`: [ids.size(), d].
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
  const std::size_t v = table.dim(0), d = table.dim(1);
  Tensor<T> out({ids.size(), d});
  auto o = out.data();
  auto t = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[r]) + " outside vocabulary of " +
                       std::to_string(v));
    }
    std::copy_n(t.begin() + static_cast<std::size_t>(ids[r]) * d, d, o.begin() + r * d);
  }
  if (auto* tape = detail::recording(table)) {
    detail::mark_interior(out);
    tape->record([tn = table.node(), on = out.node(), idv = std::vector<std::int32_t>(ids.begin(), ids.end()), d] {
      if (on->grad.empty()) return;
      auto& gt = tn->ensure_grad();
      for (std::size_t r = 0; r < idv.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[r]) * d + j] += on->grad[r * d + j];
    });
  }
  return out;
}

// Selected rows of a 2-D tensor.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: input must be 2-D");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.data().begin() + rows[r] * d, d, out.data().begin() + r * d);
  }
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), rv = std::vector<std::size_t>(rows.begin(), rows.end()), d] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t r = 0; r < rv.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) gx[rv[r] * d + j] += on->grad[r * d + j];
    });
  }
  return out;
}

// Inverted dropout. Identity when !training or rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, CounterRng& rng, bool training = true) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = x[i] * mask[i];
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), mask = std::move(mask)] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * mask[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node()] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

// Swaps two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0 = 0, std::size_t axis1 = 1) {
  const Shape& in_shape = x.shape();
  if (axis0 >= in_shape.size() || axis1 >= in_shape.size()) {
    throw ShapeError("transpose: axes out of range for " + shape_str(in_shape));
  }
  Shape out_shape = in_shape;
  std::swap(out_shape[axis0], out_shape[axis1]);
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  std::vector<std::size_t> perm_strides = in_strides;
  std::swap(perm_strides[axis0], perm_strides[axis1]);
  // src index of every destination element
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t s = 0;
    for (std::size_t r = 0; r < rank; ++r) s += idx[r] * perm_strides[r];
    src[flat] = s;
    for (std::size_t r = rank; r-- > 0;) {
      if (++idx[r] < out_shape[r]) break;
      idx[r] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), src = std::move(src)] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += on->grad[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t r = 0; r < p.rank(); ++r)
      if (r != axis && p.dim(r) != out_shape[r]) throw ShapeError("concat: extent mismatch");
    out_shape[axis] += p.dim(axis);
  }
  const auto sp = detail::split_axis(out_shape, axis, "concat");
  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.dim(axis) * sp.inner;
    for (std::size_t a = 0; a < sp.outer; ++a)
      std::copy_n(p.data().begin() + a * chunk, chunk,
                  out.data().begin() + a * sp.extent * sp.inner + off * sp.inner);
    off += p.dim(axis);
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto* tape = Tape<T>::active();
  if (tape && any) {
    detail::mark_interior(out);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record([nodes = std::move(nodes), on = out.node(), offsets, sp, axis] {
      if (on->grad.empty()) return;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto& n = nodes[k];
        if (!n->requires_grad) continue;
        auto& gp = n->ensure_grad();
        const std::size_t chunk = n->shape[axis] * sp.inner;
        for (std::size_t a = 0; a < sp.outer; ++a)
          for (std::size_t j = 0; j < chunk; ++j)
            gp[a * chunk + j] += on->grad[a * sp.extent * sp.inner + offsets[k] * sp.inner + j];
      }
    });
  }
  return out;
}

// Elements [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = detail::split_axis(x.shape(), axis, "slice");
  if (begin > end || end > sp.extent) {
    throw ShapeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside extent " + std::to_string(sp.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t chunk = (end - begin) * sp.inner;
  for (std::size_t a = 0; a < sp.outer; ++a)
    std::copy_n(x.data().begin() + a * sp.extent * sp.inner + begin * sp.inner, chunk,
                out.data().begin() + a * chunk);
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), sp, begin, chunk] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t a = 0; a < sp.outer; ++a)
        for (std::size_t j = 0; j < chunk; ++j)
          gx[a * sp.extent * sp.inner + begin * sp.inner + j] += on->grad[a * chunk + j];
    });
  }
  return out;
}

// Entries where mask != 0 are replaced by `value` (and receive no gradient).
template <class T>
Tensor<T> mask_fill(const Tensor<T>& x, std::span<const std::uint8_t> mask, T value) {
  if (mask.size() != x.numel()) throw ShapeError("mask_fill: mask size mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? value : x[i];
  detail::check_finite(out, "mask_fill");
  if (auto* tape = detail::recording(x)) {
    detail::mark_interior(out);
    tape->record([xn = x.node(), on = out.node(), m = std::vector<std::uint8_t>(mask.begin(), mask.end())] {
      if (on->grad.empty()) return;
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < m.size(); ++i)
        if (!m[i]) gx[i] += on->grad[i];
    });
  }
  return out;
}

// ------------------------------------------------------------------ losses

// Mean over rows of the label-smoothed negative log-likelihood
//   (1 - eps) * -logp[target] + eps / V * -sum_v logp[v]
// computed in double.
template <class T>
Tensor<T> nll_loss(const Tensor<T>& logp, std::span<const std::int32_t> targets, double smoothing = 0.0) {
  if (logp.rank() != 2 || logp.dim(0) != targets.size() || targets.empty()) {
    throw ShapeError("nll_loss: expects [k, V] log-probabilities with k = #targets > 0");
  }
  const std::size_t k = logp.dim(0), v = logp.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < k; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw ShapeError("nll_loss: target id out of range");
    }
    const T* row = logp.data().data() + r * v;
    double smooth = 0;
    if (smoothing > 0)
      for (std::size_t j = 0; j < v; ++j) smooth -= row[j];
    total += (1.0 - smoothing) * -static_cast<double>(row[targets[r]]) +
             smoothing / static_cast<double>(v) * smooth;
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(k)));
  detail::check_finite(out, "nll_loss");
  if (auto* tape = detail::recording(logp)) {
    detail::mark_interior(out);
    tape->record([ln = logp.node(), on = out.node(), tv = std::vector<std::int32_t>(targets.begin(), targets.end()),
                  smoothing, k, v] {
      if (on->grad.empty()) return;
      auto& g = ln->ensure_grad();
      const double scale_ = static_cast<double>(on->grad[0]) / static_cast<double>(k);
      const T spread = static_cast<T>(-smoothing / static_cast<double>(v) * scale_);
      const T hit = static_cast<T>(-(1.0 - smoothing) * scale_);
      for (std::size_t r = 0; r < k; ++r) {
        if (smoothing > 0)
          for (std::size_t j = 0; j < v; ++j) g[r * v + j] += spread;
        g[r * v + static_cast<std::size_t>(tv[r])] += hit;
      }
    });
  }
  return out;
}

// --------------------------------------------------------------- attention

// Batched multi-head scaled dot-product attention over row-major
// [batch * len, d_model] projections. Invalid keys and, when `causal`,
// future keys receive zero weight.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::size_t heads = 1;
  std::vector<std::uint8_t> key_valid;  // batch * k_len; empty = all valid
  bool causal = false;
};

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionLayout& lay) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(1) != v.dim(1) || q.dim(0) != lay.batch * lay.q_len || k.dim(0) != lay.batch * lay.k_len ||
      v.dim(0) != k.dim(0) || q.dim(1) % lay.heads != 0 ||
      (!lay.key_valid.empty() && lay.key_valid.size() != lay.batch * lay.k_len)) {
    throw ShapeError("attention: inconsistent q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                     ", v " + shape_str(v.shape()));
  }
  const std::size_t d = q.dim(1), H = lay.heads, dh = d / H, B = lay.batch, Lq = lay.q_len, Lk = lay.k_len;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> probs(B * H * Lq * Lk, T{0});
  Tensor<T> out({B * Lq, d});
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  T* O = out.data().data();
  auto allowed = [&](std::size_t b, std::size_t i, std::size_t j) {
    if (!lay.key_valid.empty() && !lay.key_valid[b * Lk + j]) return false;
    return !lay.causal || j <= i;
  };
  parallel_for(B, 1, B * H * Lq * Lk * dh * 2, [&](std::size_t b0, std::size_t b1) {
    std::vector<T> s(Lk);
    for (std::size_t b = b0; b < b1; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < Lq; ++i) {
          const T* qi = Q + (b * Lq + i) * d + h * dh;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < Lk; ++j) {
            if (!allowed(b, i, j)) continue;
            const T* kj = K + (b * Lk + j) * d + h * dh;
            T acc = 0;
            for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
            s[j] = acc * inv_sqrt;
            mx = std::max(mx, s[j]);
          }
          T* p = probs.data() + ((b * H + h) * Lq + i) * Lk;
          T* oi = O + (b * Lq + i) * d + h * dh;
          if (mx == -std::numeric_limits<T>::infinity()) continue;
          double z = 0;
          for (std::size_t j = 0; j < Lk; ++j) {
            if (!allowed(b, i, j)) continue;
            p[j] = std::exp(s[j] - mx);
            z += p[j];
          }
          const T inv = static_cast<T>(1.0 / z);
          for (std::size_t j = 0; j < Lk; ++j) {
            if (p[j] == T{0}) continue;
            p[j] *= inv;
            const T* vj = V + (b * Lk + j) * d + h * dh;
            for (std::size_t e = 0; e < dh; ++e) oi[e] += p[j] * vj[e];
          }
        }
  });
  detail::check_finite(out, "attention");
  if (auto* tape = detail::recording(q, k, v)) {
    detail::mark_interior(out);
    tape->record([qn = q.node(), kn = k.node(), vn = v.node(), on = out.node(), probs = std::move(probs),
                  B, H, Lq, Lk, d, dh, inv_sqrt] {
      if (on->grad.empty()) return;
      auto& gq = qn->ensure_grad();
      auto& gk = kn->ensure_grad();
      auto& gv = vn->ensure_grad();
      const T* Q = qn->data.data();
      const T* K = kn->data.data();
      const T* V = vn->data.data();
      const T* G = on->grad.data();
      parallel_for(B, 1, B * H * Lq * Lk * dh * 4, [&](std::size_t b0, std::size_t b1) {
        std::vector<T> dp(Lk);
        for (std::size_t b = b0; b < b1; ++b)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
              const T* p = probs.data() + ((b * H + h) * Lq + i) * Lk;
              const T* gi = G + (b * Lq + i) * d + h * dh;
              double dot = 0;
              for (std::size_t j = 0; j < Lk; ++j) {
                if (p[j] == T{0}) {
                  dp[j] = 0;
                  continue;
                }
                const T* vj = V + (b * Lk + j) * d + h * dh;
                T* gvj = gv.data() + (b * Lk + j) * d + h * dh;
                T acc = 0;
                for (std::size_t e = 0; e < dh; ++e) {
                  acc += gi[e] * vj[e];
                  gvj[e] += p[j] * gi[e];
                }
                dp[j] = acc;
                dot += static_cast<double>(acc) * p[j];
              }
              const T* qi = Q + (b * Lq + i) * d + h * dh;
              T* gqi = gq.data() + (b * Lq + i) * d + h * dh;
              for (std::size_t j = 0; j < Lk; ++j) {
                if (p[j] == T{0}) continue;
                const T ds = p[j] * (dp[j] - static_cast<T>(dot)) * inv_sqrt;
                const T* kj = K + (b * Lk + j) * d + h * dh;
                T* gkj = gk.data() + (b * Lk + j) * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) {
                  gqi[e] += ds * kj[e];
                  gkj[e] += ds * qi[e];
                }
              }
            }
      });
    });
  }
  return out;
}

// ------------------------------------------------------------- extension

// Builds a differentiable node from an externally computed forward value and
// a caller-supplied backward rule. `backward(out_grad, input_grads)` receives
// one pointer per input, null for inputs that need no gradient.
template <class T>
Tensor<T> custom_op(const std::vector<Tensor<T>>& inputs, Tensor<T> out,
                    std::function<void(std::span<const T>, std::vector<std::vector<T>*>&)> backward) {
  detail::check_finite(out, "custom_op");
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  auto* tape = Tape<T>::active();
  if (tape && any) {
    detail::mark_interior(out);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    for (const auto& in : inputs) nodes.push_back(in.node());
    tape->record([nodes = std::move(nodes), on = out.node(), backward = std::move(backward)] {
      if (on->grad.empty()) return;
      std::vector<std::vector<T>*> grads;
      for (auto& n : nodes) grads.push_back(n->requires_grad ? &n->ensure_grad() : nullptr);
      backward(on->grad, grads);
    });
  }
  return out;
}

// x W + b for x [n, in], W [in, out], b [out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

}  // namespace amom
