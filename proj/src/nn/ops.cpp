// SPDX-License-Identifier: Apache-2.0
#include "avssl/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace avssl::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void add_into(Node<T>& parent, const Tensor<T>& delta) {
  if (!parent.requires_grad) return;
  T* __restrict g = parent.grad().data();
  const T* __restrict d = delta.data();
  const std::size_t n = delta.size();
  for (std::size_t i = 0; i < n; ++i) g[i] += d[i];
}

struct ConvGeometry {
  std::size_t batch, in_c, in_t, in_h, in_w;
  std::size_t out_c, out_t, out_h, out_w;
  std::size_t k_rows() const { return in_c * kt * kh * kw; }
  std::size_t k_cols() const { return out_t * out_h * out_w; }
  std::size_t kt, kh, kw;
  bool pointwise = false;
};

// Output indices o in [lo, hi) whose input coordinate o*stride + k - pad
// falls inside [0, in).
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t k,
                       std::size_t pad) {
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                              static_cast<std::ptrdiff_t>(k);
  if (last < 0) return {0, 0};
  const std::size_t hi = std::min(out, static_cast<std::size_t>(last) / stride + 1);
  return {std::min(lo, hi), hi};
}

// col is [C*kt*kh*kw, To*Ho*Wo].
template <typename T>
void im2col(const T* x, const ConvGeometry& g, const Window3& w, T* col) {
  const std::size_t n = g.k_cols();
  const std::size_t sw = w.stride[2];
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* xc = x + c * g.in_t * g.in_h * g.in_w;
    for (std::size_t a = 0; a < g.kt; ++a) {
      const auto rt = valid_range(g.out_t, g.in_t, w.stride[0], a, w.pad[0]);
      for (std::size_t i = 0; i < g.kh; ++i) {
        const auto rh = valid_range(g.out_h, g.in_h, w.stride[1], i, w.pad[1]);
        for (std::size_t j = 0; j < g.kw; ++j) {
          const auto rw = valid_range(g.out_w, g.in_w, sw, j, w.pad[2]);
          T* dst = col + (((c * g.kt + a) * g.kh + i) * g.kw + j) * n;
          for (std::size_t ot = 0; ot < g.out_t; ++ot) {
            const bool t_ok = ot >= rt.lo && ot < rt.hi;
            const std::size_t t = ot * w.stride[0] + a - w.pad[0];
            for (std::size_t oh = 0; oh < g.out_h; ++oh) {
              T* __restrict row = dst + (ot * g.out_h + oh) * g.out_w;
              if (!t_ok || oh < rh.lo || oh >= rh.hi) {
                std::fill(row, row + g.out_w, T(0));
                continue;
              }
              const std::size_t h = oh * w.stride[1] + i - w.pad[1];
              const T* __restrict src = xc + (t * g.in_h + h) * g.in_w + j - w.pad[2];
              std::fill(row, row + rw.lo, T(0));
              if (sw == 1) {
                std::copy(src + rw.lo, src + rw.hi, row + rw.lo);
              } else {
                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) row[ow] = src[ow * sw];
              }
              std::fill(row + rw.hi, row + g.out_w, T(0));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, const Window3& w, T* dx) {
  const std::size_t n = g.k_cols();
  const std::size_t sw = w.stride[2];
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* xc = dx + c * g.in_t * g.in_h * g.in_w;
    for (std::size_t a = 0; a < g.kt; ++a) {
      const auto rt = valid_range(g.out_t, g.in_t, w.stride[0], a, w.pad[0]);
      for (std::size_t i = 0; i < g.kh; ++i) {
        const auto rh = valid_range(g.out_h, g.in_h, w.stride[1], i, w.pad[1]);
        for (std::size_t j = 0; j < g.kw; ++j) {
          const auto rw = valid_range(g.out_w, g.in_w, sw, j, w.pad[2]);
          const T* src = col + (((c * g.kt + a) * g.kh + i) * g.kw + j) * n;
          for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
            const std::size_t t = ot * w.stride[0] + a - w.pad[0];
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const std::size_t h = oh * w.stride[1] + i - w.pad[1];
              const T* __restrict row = src + (ot * g.out_h + oh) * g.out_w;
              T* __restrict dst = xc + (t * g.in_h + h) * g.in_w + j - w.pad[2];
              if (sw == 1) {
                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) dst[ow] += row[ow];
              } else {
                for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) dst[ow * sw] += row[ow];
              }
            }
          }
        }
      }
    }
  }
}

// Sum of p[0..n) and of p[i]*q[i] in eight double lanes so the loops
// vectorize; the lane order is fixed, so results are deterministic.
template <typename T>
double lane_sum(const T* __restrict p, std::size_t n) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += static_cast<double>(p[i + l]);
  double s = 0.0;
  for (; i < n; ++i) s += static_cast<double>(p[i]);
  for (double v : acc) s += v;
  return s;
}

template <typename T>
double lane_dot(const T* __restrict p, const T* __restrict q, std::size_t n) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += static_cast<double>(p[i + l]) * static_cast<double>(q[i + l]);
  double s = 0.0;
  for (; i < n; ++i) s += static_cast<double>(p[i]) * static_cast<double>(q[i]);
  for (double v : acc) s += v;
  return s;
}

template <typename T>
double lane_centered_sq(const T* __restrict p, std::size_t n, double m) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) {
      const double d = static_cast<double>(p[i + l]) - m;
      acc[l] += d * d;
    }
  double s = 0.0;
  for (; i < n; ++i) {
    const double d = static_cast<double>(p[i]) - m;
    s += d * d;
  }
  for (double v : acc) s += v;
  return s;
}

// Splits a [B, C, ...] shape into (B, C, spatial size).
std::array<std::size_t, 3> channel_layout(const Shape& s) {
  if (s.size() < 2) throw ShapeError("expected at least [B, C], got " + shape_string(s));
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  return {s[0], s[1], spatial};
}

}  // namespace

std::size_t Window3::out_extent(std::size_t axis, std::size_t in) const {
  const std::size_t padded = in + 2 * pad[axis];
  if (padded < kernel[axis]) {
    throw ShapeError("window of extent " + std::to_string(kernel[axis]) +
                     " exceeds padded input extent " + std::to_string(padded));
  }
  return (padded - kernel[axis]) / stride[axis] + 1;
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ShapeError("linear: input " + shape_string(xs) + " vs weight " + shape_string(ws));
  }
  const std::size_t b = xs[0], in = xs[1], out = ws[0];
  Tensor<T> y({b, out});
  Eigen::Map<const RowMat<T>> xm(x->value.data(), b, in);
  Eigen::Map<const RowMat<T>> wm(weight->value.data(), out, in);
  Eigen::Map<RowMat<T>> ym(y.data(), b, out);
  ym.noalias() = xm * wm.transpose();
  if (bias) {
    if (bias->value.size() != out) throw ShapeError("linear: bias size mismatch");
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t o = 0; o < out; ++o) ym(r, o) += bias->value[o];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(y), std::move(parents), [b, in, out](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    Eigen::Map<const RowMat<T>> dy(self.grad().data(), b, out);
    if (xn.requires_grad) {
      Eigen::Map<RowMat<T>> dx(xn.grad().data(), b, in);
      Eigen::Map<const RowMat<T>> wm(wn.value.data(), out, in);
      dx.noalias() += dy * wm;
    }
    if (wn.requires_grad) {
      Eigen::Map<RowMat<T>> dw(wn.grad().data(), out, in);
      Eigen::Map<const RowMat<T>> xm(xn.value.data(), b, in);
      RowMat<T> tmp = dy.transpose() * xm;
      dw += tmp;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& db = self.parents[2]->grad();
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t o = 0; o < out; ++o) db[o] += dy(r, o);
    }
  });
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Window3& window) {
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  if (xs.size() != 5 || ws.size() != 5 || xs[1] != ws[1]) {
    throw ShapeError("conv3d: input " + shape_string(xs) + " vs weight " + shape_string(ws));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (ws[2 + a] != window.kernel[a]) throw ShapeError("conv3d: kernel/window mismatch");
  }
  ConvGeometry g{};
  g.batch = xs[0];
  g.in_c = xs[1];
  g.in_t = xs[2];
  g.in_h = xs[3];
  g.in_w = xs[4];
  g.out_c = ws[0];
  g.kt = ws[2];
  g.kh = ws[3];
  g.kw = ws[4];
  g.out_t = window.out_extent(0, g.in_t);
  g.out_h = window.out_extent(1, g.in_h);
  g.out_w = window.out_extent(2, g.in_w);
  g.pointwise = g.kt * g.kh * g.kw == 1 && window.stride == std::array<std::size_t, 3>{1, 1, 1} &&
                window.pad == std::array<std::size_t, 3>{0, 0, 0};

  const std::size_t k = g.k_rows(), n = g.k_cols();
  const std::size_t in_stride = g.in_c * g.in_t * g.in_h * g.in_w;
  Tensor<T> y({g.batch, g.out_c, g.out_t, g.out_h, g.out_w});
  Eigen::Map<const RowMat<T>> wm(weight->value.data(), g.out_c, k);
  std::vector<T> col(g.pointwise ? 0 : k * n);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = x->value.data() + b * in_stride;
    const T* cp = xb;
    if (!g.pointwise) {
      im2col(xb, g, window, col.data());
      cp = col.data();
    }
    Eigen::Map<const RowMat<T>> cm(cp, k, n);
    Eigen::Map<RowMat<T>> ym(y.data() + b * g.out_c * n, g.out_c, n);
    ym.noalias() = wm * cm;
  }

  return make_op<T>(std::move(y), {x, weight}, [g, window, in_stride](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    const std::size_t k = g.k_rows(), n = g.k_cols();
    Eigen::Map<const RowMat<T>> wm(wn.value.data(), g.out_c, k);
    std::vector<T> col(g.pointwise ? 0 : k * n);
    std::vector<T> dcol(g.pointwise ? 0 : k * n);
    RowMat<T> gw(g.out_c, k);
    T* dw = wn.requires_grad ? wn.grad().data() : nullptr;
    T* dx_all = xn.requires_grad ? xn.grad().data() : nullptr;
    for (std::size_t b = 0; b < g.batch; ++b) {
      Eigen::Map<const RowMat<T>> dy(self.grad().data() + b * g.out_c * n, g.out_c, n);
      const T* xb = xn.value.data() + b * in_stride;
      if (dw) {
        const T* cp = xb;
        if (!g.pointwise) {
          im2col(xb, g, window, col.data());
          cp = col.data();
        }
        Eigen::Map<const RowMat<T>> cm(cp, k, n);
        gw.noalias() = dy * cm.transpose();
        const T* src = gw.data();
        for (std::size_t i = 0; i < g.out_c * k; ++i) dw[i] += src[i];
      }
      if (dx_all) {
        T* dxb = dx_all + b * in_stride;
        if (g.pointwise) {
          Eigen::Map<RowMat<T>> dxm(dxb, k, n);
          dxm.noalias() += wm.transpose() * dy;
        } else {
          Eigen::Map<RowMat<T>> dcm(dcol.data(), k, n);
          dcm.noalias() = wm.transpose() * dy;
          col2im(dcol.data(), g, window, dxb);
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  const BatchNormState<T>& state, bool training) {
  const auto [nb, nc, ns] = channel_layout(x->value.shape());
  if (gamma && gamma->value.size() != nc) throw ShapeError("batch_norm: gamma size mismatch");
  if (beta && beta->value.size() != nc) throw ShapeError("batch_norm: beta size mismatch");
  if (!state.running_mean || !state.running_var || state.running_mean->size() != nc ||
      state.running_var->size() != nc) {
    throw ShapeError("batch_norm: running statistics missing or mis-sized");
  }
  const std::size_t count = nb * ns;
  if (training && count < 2) {
    throw ShapeError("batch_norm: training mode needs more than one value per channel");
  }
  std::vector<double> mean(nc), invstd(nc);
  const T* xv = x->value.data();
  if (training) {
    for (std::size_t c = 0; c < nc; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < nb; ++b) s += lane_sum(xv + (b * nc + c) * ns, ns);
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < nb; ++b) v += lane_centered_sq(xv + (b * nc + c) * ns, ns, m);
      v /= static_cast<double>(count);
      mean[c] = m;
      invstd[c] = 1.0 / std::sqrt(v + state.eps);
      auto& rm = (*state.running_mean)[c];
      auto& rv = (*state.running_var)[c];
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      rm = static_cast<T>((1.0 - state.momentum) * rm + state.momentum * m);
      rv = static_cast<T>((1.0 - state.momentum) * rv + state.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < nc; ++c) {
      mean[c] = (*state.running_mean)[c];
      invstd[c] = 1.0 / std::sqrt(static_cast<double>((*state.running_var)[c]) + state.eps);
    }
  }

  Tensor<T> y(x->value.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < nc; ++c) {
      const double gm = gamma ? gamma->value[c] : 1.0;
      const double bt = beta ? beta->value[c] : 0.0;
      const T scale = static_cast<T>(gm * invstd[c]);
      const T shift = static_cast<T>(bt - mean[c] * gm * invstd[c]);
      const T* __restrict p = xv + (b * nc + c) * ns;
      T* __restrict q = y.data() + (b * nc + c) * ns;
      for (std::size_t i = 0; i < ns; ++i) q[i] = p[i] * scale + shift;
    }
  }

  std::vector<Var<T>> parents{x};
  const bool has_gamma = static_cast<bool>(gamma);
  const bool has_beta = static_cast<bool>(beta);
  if (gamma) parents.push_back(gamma);
  if (beta) parents.push_back(beta);
  return make_op<T>(
      std::move(y), std::move(parents),
      [nb, nc, ns, count, training, has_gamma, has_beta, mean = std::move(mean),
       invstd = std::move(invstd)](Node<T>& self) {
        auto& xn = *self.parents[0];
        Node<T>* gn = has_gamma ? self.parents[1].get() : nullptr;
        Node<T>* bn = has_beta ? self.parents[has_gamma ? 2 : 1].get() : nullptr;
        const T* dy = self.grad().data();
        const T* xv = xn.value.data();
        T* dx = xn.requires_grad ? xn.grad().data() : nullptr;
        const double n = static_cast<double>(count);
        for (std::size_t c = 0; c < nc; ++c) {
          const double gm = gn ? gn->value[c] : 1.0;
          const double m = mean[c], is = invstd[c];
          double sum_dy = 0.0, sum_dy_x = 0.0;
          for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t off = (b * nc + c) * ns;
            sum_dy += lane_sum(dy + off, ns);
            sum_dy_x += lane_dot(dy + off, xv + off, ns);
          }
          const double sum_dy_xhat = (sum_dy_x - m * sum_dy) * is;
          if (gn && gn->requires_grad) gn->grad()[c] += static_cast<T>(sum_dy_xhat);
          if (bn && bn->requires_grad) bn->grad()[c] += static_cast<T>(sum_dy);
          if (!dx) continue;
          // dx = ca*dy + cb*x + cc
          double ca = gm * is, cb = 0.0, cc = 0.0;
          if (training) {
            cb = -gm * is * is * sum_dy_xhat / n;
            cc = -gm * is * sum_dy / n - cb * m;
          }
          const T ta = static_cast<T>(ca), tb = static_cast<T>(cb), tc = static_cast<T>(cc);
          for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t off = (b * nc + c) * ns;
            const T* __restrict dyp = dy + off;
            const T* __restrict xp = xv + off;
            T* __restrict dxp = dx + off;
            for (std::size_t i = 0; i < ns; ++i) dxp[i] += ta * dyp[i] + tb * xp[i] + tc;
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y(x->value.shape());
  {
    const T* __restrict p = x->value.data();
    T* __restrict q = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) q[i] = p[i] > T(0) ? p[i] : T(0);
  }
  return make_op<T>(std::move(y), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T* __restrict dx = xn.grad().data();
    const T* __restrict dy = self.grad().data();
    const T* __restrict yv = self.value.data();
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += yv[i] > T(0) ? dy[i] : T(0);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape()) {
    throw ShapeError("add: " + shape_string(a->value.shape()) + " vs " +
                     shape_string(b->value.shape()));
  }
  Tensor<T> y(a->value.shape());
  {
    const T* __restrict p = a->value.data();
    const T* __restrict q = b->value.data();
    T* __restrict r = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) r[i] = p[i] + q[i];
  }
  return make_op<T>(std::move(y), {a, b}, [](Node<T>& self) {
    add_into(*self.parents[0], self.grad());
    add_into(*self.parents[1], self.grad());
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto [nb, nc, ns] = channel_layout(x->value.shape());
  Tensor<T> y({nb, nc});
  for (std::size_t r = 0; r < nb * nc; ++r) {
    double s = 0.0;
    const T* p = x->value.data() + r * ns;
    for (std::size_t i = 0; i < ns; ++i) s += p[i];
    y[r] = static_cast<T>(s / static_cast<double>(ns));
  }
  return make_op<T>(std::move(y), {x}, [nb, nc, ns](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& dx = xn.grad();
    for (std::size_t r = 0; r < nb * nc; ++r) {
      const T g = self.grad()[r] / static_cast<T>(ns);
      T* p = dx.data() + r * ns;
      for (std::size_t i = 0; i < ns; ++i) p[i] += g;
    }
  });
}

template <typename T>
Var<T> max_pool3d(const Var<T>& x, const Window3& w) {
  const auto& s = x->value.shape();
  if (s.size() != 5) throw ShapeError("max_pool3d: expected 5-D input, got " + shape_string(s));
  const std::size_t nb = s[0], nc = s[1], it = s[2], ih = s[3], iw = s[4];
  const std::size_t ot = w.out_extent(0, it), oh = w.out_extent(1, ih), ow = w.out_extent(2, iw);
  Tensor<T> y({nb, nc, ot, oh, ow});
  std::vector<std::uint32_t> argmax(y.size());
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < nb * nc; ++bc) {
    const T* src = x->value.data() + bc * it * ih * iw;
    for (std::size_t a = 0; a < ot; ++a)
      for (std::size_t b = 0; b < oh; ++b)
        for (std::size_t c = 0; c < ow; ++c, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          bool found = false;
          for (std::size_t ka = 0; ka < w.kernel[0]; ++ka) {
            const auto t = static_cast<std::ptrdiff_t>(a * w.stride[0] + ka) - static_cast<std::ptrdiff_t>(w.pad[0]);
            if (t < 0 || t >= static_cast<std::ptrdiff_t>(it)) continue;
            for (std::size_t kb = 0; kb < w.kernel[1]; ++kb) {
              const auto h = static_cast<std::ptrdiff_t>(b * w.stride[1] + kb) - static_cast<std::ptrdiff_t>(w.pad[1]);
              if (h < 0 || h >= static_cast<std::ptrdiff_t>(ih)) continue;
              for (std::size_t kc = 0; kc < w.kernel[2]; ++kc) {
                const auto ww = static_cast<std::ptrdiff_t>(c * w.stride[2] + kc) - static_cast<std::ptrdiff_t>(w.pad[2]);
                if (ww < 0 || ww >= static_cast<std::ptrdiff_t>(iw)) continue;
                const std::size_t idx = (static_cast<std::size_t>(t) * ih + static_cast<std::size_t>(h)) * iw +
                                        static_cast<std::size_t>(ww);
                if (!found || src[idx] > best) {
                  best = src[idx];
                  best_i = idx;
                  found = true;
                }
              }
            }
          }
          y[o] = best;
          argmax[o] = static_cast<std::uint32_t>(bc * it * ih * iw + best_i);
        }
  }
  return make_op<T>(std::move(y), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& dx = xn.grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad()[i];
  });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  const auto& s = x->value.shape();
  if (s.size() != 2) throw ShapeError("l2_normalize_rows: expected [B, D], got " + shape_string(s));
  const std::size_t nb = s[0], d = s[1];
  Tensor<T> y(s);
  std::vector<double> norms(nb);
  for (std::size_t r = 0; r < nb; ++r) {
    const T* p = x->value.data() + r * d;
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += static_cast<double>(p[i]) * p[i];
    if (!(ss > 0.0)) throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    norms[r] = std::sqrt(ss);
    for (std::size_t i = 0; i < d; ++i) y[r * d + i] = static_cast<T>(p[i] / norms[r]);
  }
  return make_op<T>(std::move(y), {x}, [nb, d, norms = std::move(norms)](Node<T>& self) {
    auto& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    auto& dx = xn.grad();
    for (std::size_t r = 0; r < nb; ++r) {
      const T* yr = self.value.data() + r * d;
      const T* gr = self.grad().data() + r * d;
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += static_cast<double>(yr[i]) * gr[i];
      for (std::size_t i = 0; i < d; ++i) {
        dx[r * d + i] += static_cast<T>((gr[i] - yr[i] * dot) / norms[r]);
      }
    }
  });
}

template <typename T>
Var<T> neg_cosine_mean(const Var<T>& p, const Var<T>& z) {
  const auto& ps = p->value.shape();
  if (ps.size() != 2 || ps != z->value.shape()) {
    throw ShapeError("neg_cosine_mean: " + shape_string(ps) + " vs " + shape_string(z->value.shape()));
  }
  const std::size_t nb = ps[0], d = ps[1];
  std::vector<double> pn(nb), zn(nb), cosv(nb);
  double total = 0.0;
  for (std::size_t r = 0; r < nb; ++r) {
    const T* pr = p->value.data() + r * d;
    const T* zr = z->value.data() + r * d;
    double pp = 0.0, zz = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      pp += static_cast<double>(pr[i]) * pr[i];
      zz += static_cast<double>(zr[i]) * zr[i];
      pz += static_cast<double>(pr[i]) * zr[i];
    }
    if (!(pp > 0.0) || !(zz > 0.0)) {
      throw NumericError("negative cosine: zero-norm " + std::string(!(pp > 0.0) ? "prediction" : "target") +
                         " vector in row " + std::to_string(r));
    }
    pn[r] = std::sqrt(pp);
    zn[r] = std::sqrt(zz);
    cosv[r] = std::clamp(pz / (pn[r] * zn[r]), -1.0, 1.0);
    total += cosv[r];
  }
  Tensor<T> y(Shape{}, static_cast<T>(-total / static_cast<double>(nb)));
  return make_op<T>(std::move(y), {p, z},
                    [nb, d, pn = std::move(pn), zn = std::move(zn), cosv = std::move(cosv)](Node<T>& self) {
                      auto& pnode = *self.parents[0];
                      auto& znode = *self.parents[1];
                      const double g = -static_cast<double>(self.grad()[0]) / static_cast<double>(nb);
                      for (std::size_t r = 0; r < nb; ++r) {
                        const T* pr = pnode.value.data() + r * d;
                        const T* zr = znode.value.data() + r * d;
                        const double inv = 1.0 / (pn[r] * zn[r]);
                        if (pnode.requires_grad) {
                          T* dp = pnode.grad().data() + r * d;
                          const double k = cosv[r] / (pn[r] * pn[r]);
                          for (std::size_t i = 0; i < d; ++i)
                            dp[i] += static_cast<T>(g * (zr[i] * inv - pr[i] * k));
                        }
                        if (znode.requires_grad) {
                          T* dz = znode.grad().data() + r * d;
                          const double k = cosv[r] / (zn[r] * zn[r]);
                          for (std::size_t i = 0; i < d; ++i)
                            dz[i] += static_cast<T>(g * (pr[i] * inv - zr[i] * k));
                        }
                      }
                    });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw ShapeError("weighted_sum: need matching, non-empty term and weight lists");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += weights[i] * static_cast<double>(terms[i]->value[0]);
  }
  return make_op<T>(Tensor<T>(Shape{}, static_cast<T>(total)), terms, [weights](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& t = *self.parents[i];
      if (t.requires_grad) t.grad()[0] += static_cast<T>(weights[i] * self.grad()[0]);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return make_op<T>(x->value.reshaped(std::move(shape)), {x},
                    [](Node<T>& self) { add_into(*self.parents[0], self.grad()); });
}

#define AVSSL_INSTANTIATE_OPS(T)                                                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Window3&);                   \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,                 \
                                const BatchNormState<T>&, bool);                             \
  template Var<T> relu<T>(const Var<T>&);                                                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                         \
  template Var<T> max_pool3d<T>(const Var<T>&, const Window3&);                              \
  template Var<T> l2_normalize_rows<T>(const Var<T>&);                                       \
  template Var<T> neg_cosine_mean<T>(const Var<T>&, const Var<T>&);                          \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, const std::vector<double>&);   \
  template Var<T> reshape<T>(const Var<T>&, Shape);

AVSSL_INSTANTIATE_OPS(float)
AVSSL_INSTANTIATE_OPS(double)

}  // namespace avssl::nn
