// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <utility>

#include "uattn/parallel.hpp"

namespace uattn::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

using Index = std::int64_t;

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

// Wraps freshly computed values into an output tensor and, when any parent
// requires gradients under an enabled GradMode, attaches the backward closure.
template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> parents, BackwardFn<T> fn) {
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto* p : parents) any = any || p->requires_grad();
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (const auto* p : parents) node->parents.push_back(p->node_ptr());
  node->backward_fn = std::move(fn);
  return out;
}

// Gradient buffer of a parent, or nullptr when it takes no gradient.
template <typename T>
T* grad_of(const Tensor<T>& t) {
  return t.requires_grad() ? t.node()->ensure_grad().data() : nullptr;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_output<T>(x.shape(), std::move(out), {&x}, [x, df](detail::Node<T>& self) {
    T* gx = grad_of(x);
    if (!gx) return;
    const auto xs = x.data();
    const auto& g = self.grad;
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += g[i] * df(xs[i], self.data[i]);
  });
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  return make_output<T>(a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    const auto& g = self.grad;
    if (T* ga = grad_of(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (T* gb = grad_of(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[i];
  return make_output<T>(a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    const auto& g = self.grad;
    if (T* ga = grad_of(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (T* gb = grad_of(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  return make_output<T>(a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto as = a.data();
    const auto bs = b.data();
    if (T* ga = grad_of(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
    }
    if (T* gb = grad_of(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary(x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  return unary(
      x, [alpha](T v) { return v >= T(0) ? v : alpha * v; },
      [alpha](T v, T) { return v >= T(0) ? T(1) : alpha; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise kind) {
  return kind == Pointwise::kTanh ? ops::tanh(x) : leaky_relu(x, T(0.2));
}

// ---- reductions & reshaping ----------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (const T v : x.data()) acc += static_cast<double>(v);
  return make_output<T>({1}, {static_cast<T>(acc)}, {&x}, [x](detail::Node<T>& self) {
    if (T* gx = grad_of(x)) {
      const T g = self.grad[0];
      for (Index i = 0; i < x.numel(); ++i) gx[i] += g;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0.0;
  for (const T v : x.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  return make_output<T>({1}, {static_cast<T>(acc / n)}, {&x}, [x](detail::Node<T>& self) {
    if (T* gx = grad_of(x)) {
      const T g = self.grad[0] / static_cast<T>(x.numel());
      for (Index i = 0; i < x.numel(); ++i) gx[i] += g;
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_output<T>(std::move(shape), std::move(out), {&x}, [x](detail::Node<T>& self) {
    if (T* gx = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 4 && b.rank() == 4, "concat_channels: expects [N,C,H,W] inputs");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: extent mismatch " + to_string(a.shape()) + " vs " +
              to_string(b.shape()));
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * (ca + cb) * hw));
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw,
                out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_output<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b},
                        [a, b, n, ca, cb, hw](detail::Node<T>& self) {
                          const T* g = self.grad.data();
                          T* ga = grad_of(a);
                          T* gb = grad_of(b);
                          for (Index i = 0; i < n; ++i) {
                            const T* gi = g + i * (ca + cb) * hw;
                            if (ga) {
                              for (Index j = 0; j < ca * hw; ++j) ga[i * ca * hw + j] += gi[j];
                            }
                            if (gb) {
                              for (Index j = 0; j < cb * hw; ++j)
                                gb[i * cb * hw + j] += gi[ca * hw + j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, Index y0, Index x0, Index h, Index w) {
  require(x.rank() == 4, "crop: expects [N,C,H,W]");
  const Index H = x.dim(2), W = x.dim(3);
  require(h >= 1 && w >= 1 && y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W,
          "crop: window outside of " + to_string(x.shape()));
  const Index planes = x.dim(0) * x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(planes * h * w));
  const T* src = x.data().data();
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < h; ++y) {
      std::copy_n(src + (p * H + y0 + y) * W + x0, w, out.data() + (p * h + y) * w);
    }
  }
  return make_output<T>({x.dim(0), x.dim(1), h, w}, std::move(out), {&x},
                        [x, planes, H, W, y0, x0, h, w](detail::Node<T>& self) {
                          T* gx = grad_of(x);
                          if (!gx) return;
                          const T* g = self.grad.data();
                          for (Index p = 0; p < planes; ++p) {
                            for (Index y = 0; y < h; ++y) {
                              T* dst = gx + (p * H + y0 + y) * W + x0;
                              const T* gs = g + (p * h + y) * w;
                              for (Index i = 0; i < w; ++i) dst[i] += gs[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> batch_to_time(const Tensor<T>& x) {
  require(x.rank() == 4, "batch_to_time: expects [B,C,H,W]");
  const Index B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* src = x.data().data();
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      std::copy_n(src + (b * C + c) * hw, hw, out.data() + (c * B + b) * hw);
    }
  }
  return make_output<T>({1, C, B, x.dim(2), x.dim(3)}, std::move(out), {&x},
                        [x, B, C, hw](detail::Node<T>& self) {
                          T* gx = grad_of(x);
                          if (!gx) return;
                          const T* g = self.grad.data();
                          for (Index b = 0; b < B; ++b) {
                            for (Index c = 0; c < C; ++c) {
                              T* dst = gx + (b * C + c) * hw;
                              const T* gs = g + (c * B + b) * hw;
                              for (Index i = 0; i < hw; ++i) dst[i] += gs[i];
                            }
                          }
                        });
}

// ---- convolution ----------------------------------------------------------

namespace {

struct Conv2dGeom {
  Index n, c, h, w, co, k, stride, pad, ho, wo;
  Index in_plane() const { return h * w; }
  Index out_plane() const { return ho * wo; }
  Index col_rows() const { return c * k * k; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* img, const Conv2dGeom& g, T* col) {
  const Index cols = g.out_plane();
  for (Index c = 0; c < g.c; ++c) {
    const T* plane = img + c * g.in_plane();
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const Conv2dGeom& g, T* img) {
  const Index cols = g.out_plane();
  for (Index c = 0; c < g.c; ++c) {
    T* plane = img + c * g.in_plane();
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + to_string(input.shape()));
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv2d: weight must be [Co,C,k,k], got " + to_string(weight.shape()));
  require(weight.dim(1) == input.dim(1),
          "conv2d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
              std::to_string(weight.dim(1)));
  require(bias.numel() == weight.dim(0), "conv2d: bias length mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  Conv2dGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
               weight.dim(2), stride, pad, 0, 0};
  require(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k, "conv2d: zero-size output");
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;

  std::vector<T> out(static_cast<std::size_t>(g.n * g.co * g.out_plane()));
  const CMatMap<T> wm(weight.data().data(), g.co, g.col_rows());
  const CVecMap<T> bv(bias.data().data(), g.co);
  const T* in = input.data().data();
  parallel_for(g.n, [&](Index n) {
    const T* img = in + n * g.c * g.in_plane();
    MatMap<T> om(out.data() + n * g.co * g.out_plane(), g.co, g.out_plane());
    if (g.direct()) {
      om.noalias() = wm * CMatMap<T>(img, g.c, g.in_plane());
    } else {
      std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.out_plane()));
      im2col(img, g, col.data());
      om.noalias() = wm * CMatMap<T>(col.data(), g.col_rows(), g.out_plane());
    }
    om.colwise() += bv;
  });

  return make_output<T>(
      {g.n, g.co, g.ho, g.wo}, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, g](detail::Node<T>& self) {
        T* gx = grad_of(input);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        const T* gout = self.grad.data();
        const CMatMap<T> wm(weight.data().data(), g.co, g.col_rows());
        std::vector<RowMat<T>> partial(gw ? static_cast<std::size_t>(g.n) : 0);
        parallel_for(g.n, [&](Index n) {
          const CMatMap<T> go(gout + n * g.co * g.out_plane(), g.co, g.out_plane());
          const T* img = input.data().data() + n * g.c * g.in_plane();
          if (g.direct()) {
            if (gw) partial[n].noalias() = go * CMatMap<T>(img, g.c, g.in_plane()).transpose();
            if (gx) {
              MatMap<T> dx(gx + n * g.c * g.in_plane(), g.c, g.in_plane());
              dx.noalias() += wm.transpose() * go;
            }
            return;
          }
          std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.out_plane()));
          if (gw) {
            im2col(img, g, col.data());
            partial[n].noalias() =
                go * CMatMap<T>(col.data(), g.col_rows(), g.out_plane()).transpose();
          }
          if (gx) {
            MatMap<T> dcol(col.data(), g.col_rows(), g.out_plane());
            dcol.noalias() = wm.transpose() * go;
            col2im_add(col.data(), g, gx + n * g.c * g.in_plane());
          }
        });
        if (gw) {
          MatMap<T> dw(gw, g.co, g.col_rows());
          for (const auto& p : partial) dw += p;
        }
        if (gb) {
          for (Index co = 0; co < g.co; ++co) {
            double acc = 0.0;
            for (Index n = 0; n < g.n; ++n) {
              const T* row = gout + (n * g.co + co) * g.out_plane();
              for (Index i = 0; i < g.out_plane(); ++i) acc += static_cast<double>(row[i]);
            }
            gb[co] += static_cast<T>(acc);
          }
        }
      });
}

namespace {

struct Conv3dGeom {
  Index n, c, d, h, w, co, k, pad, dout, ho, wo;
  Index in_vol() const { return d * h * w; }
  Index out_plane() const { return ho * wo; }
  Index out_vol() const { return dout * ho * wo; }
  Index col_rows() const { return c * k * k * k; }
};

// Columns for one output depth slice od.
template <typename T>
void im2col3(const T* vol, const Conv3dGeom& g, Index od, T* col) {
  const Index cols = g.out_plane();
  for (Index c = 0; c < g.c; ++c) {
    for (Index kd = 0; kd < g.k; ++kd) {
      const Index id = od - g.pad + kd;
      for (Index ky = 0; ky < g.k; ++ky) {
        for (Index kx = 0; kx < g.k; ++kx) {
          T* row = col + (((c * g.k + kd) * g.k + ky) * g.k + kx) * cols;
          if (id < 0 || id >= g.d) {
            std::fill_n(row, cols, T(0));
            continue;
          }
          const T* plane = vol + (c * g.d + id) * g.h * g.w;
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy - g.pad + ky;
            T* dst = row + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill_n(dst, g.wo, T(0));
              continue;
            }
            const T* src = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3_add(const T* col, const Conv3dGeom& g, Index od, T* vol) {
  const Index cols = g.out_plane();
  for (Index c = 0; c < g.c; ++c) {
    for (Index kd = 0; kd < g.k; ++kd) {
      const Index id = od - g.pad + kd;
      if (id < 0 || id >= g.d) continue;
      T* plane = vol + (c * g.d + id) * g.h * g.w;
      for (Index ky = 0; ky < g.k; ++ky) {
        for (Index kx = 0; kx < g.k; ++kx) {
          const T* row = col + (((c * g.k + kd) * g.k + ky) * g.k + kx) * cols;
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            T* dst = plane + iy * g.w;
            const T* src = row + oy * g.wo;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int pad) {
  require(input.rank() == 5, "conv3d: input must be [N,C,D,H,W], got " + to_string(input.shape()));
  require(weight.rank() == 5 && weight.dim(2) == weight.dim(3) && weight.dim(3) == weight.dim(4),
          "conv3d: weight must be [Co,C,k,k,k], got " + to_string(weight.shape()));
  require(weight.dim(1) == input.dim(1),
          "conv3d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
              std::to_string(weight.dim(1)));
  require(bias.numel() == weight.dim(0), "conv3d: bias length mismatch");
  Conv3dGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), input.dim(4),
               weight.dim(0), weight.dim(2), pad, 0, 0, 0};
  require(g.d + 2 * pad >= g.k && g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k,
          "conv3d: zero-size output");
  g.dout = g.d + 2 * pad - g.k + 1;
  g.ho = g.h + 2 * pad - g.k + 1;
  g.wo = g.w + 2 * pad - g.k + 1;

  std::vector<T> out(static_cast<std::size_t>(g.n * g.co * g.out_vol()));
  const CMatMap<T> wm(weight.data().data(), g.co, g.col_rows());
  const CVecMap<T> bv(bias.data().data(), g.co);
  parallel_for(g.n * g.dout, [&](Index job) {
    const Index n = job / g.dout, od = job % g.dout;
    std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.out_plane()));
    im2col3(input.data().data() + n * g.c * g.in_vol(), g, od, col.data());
    StridedMap<T> om(out.data() + n * g.co * g.out_vol() + od * g.out_plane(), g.co,
                     g.out_plane(), Eigen::OuterStride<>(g.out_vol()));
    om.noalias() = wm * CMatMap<T>(col.data(), g.col_rows(), g.out_plane());
    om.colwise() += bv;
  });

  return make_output<T>(
      {g.n, g.co, g.dout, g.ho, g.wo}, std::move(out), {&input, &weight, &bias},
      [input, weight, bias, g](detail::Node<T>& self) {
        T* gx = grad_of(input);
        T* gw = grad_of(weight);
        T* gb = grad_of(bias);
        const T* gout = self.grad.data();
        const CMatMap<T> wm(weight.data().data(), g.co, g.col_rows());
        // Input gradients of neighbouring depth slices overlap, so each image
        // is one work item and slices run in order inside it.
        std::vector<RowMat<T>> partial(gw ? static_cast<std::size_t>(g.n) : 0);
        parallel_for(g.n, [&](Index n) {
          const T* vol = input.data().data() + n * g.c * g.in_vol();
          std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.out_plane()));
          if (gw) partial[n] = RowMat<T>::Zero(g.co, g.col_rows());
          for (Index od = 0; od < g.dout; ++od) {
            const CStridedMap<T> go(gout + n * g.co * g.out_vol() + od * g.out_plane(), g.co,
                                    g.out_plane(), Eigen::OuterStride<>(g.out_vol()));
            if (gw) {
              im2col3(vol, g, od, col.data());
              partial[n].noalias() +=
                  go * CMatMap<T>(col.data(), g.col_rows(), g.out_plane()).transpose();
            }
            if (gx) {
              MatMap<T> dcol(col.data(), g.col_rows(), g.out_plane());
              dcol.noalias() = wm.transpose() * go;
              col2im3_add(col.data(), g, od, gx + n * g.c * g.in_vol());
            }
          }
        });
        if (gw) {
          MatMap<T> dw(gw, g.co, g.col_rows());
          for (const auto& p : partial) dw += p;
        }
        if (gb) {
          for (Index co = 0; co < g.co; ++co) {
            double acc = 0.0;
            for (Index n = 0; n < g.n; ++n) {
              const T* row = gout + (n * g.co + co) * g.out_vol();
              for (Index i = 0; i < g.out_vol(); ++i) acc += static_cast<double>(row[i]);
            }
            gb[co] += static_cast<T>(acc);
          }
        }
      });
}

// ---- resampling -----------------------------------------------------------

namespace {

struct Tap {
  Index i0, i1;
  double w0, w1;
};

// Half-pixel-center source taps for a 2x upsample along one axis.
std::vector<Tap> upsample_taps(Index in) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * in));
  for (Index o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<Index>(std::floor(src));
    const Index i1 = std::min(i0 + 1, in - 1);
    const double f = src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample_2x(const Tensor<T>& input) {
  require(input.rank() == 4, "bilinear_upsample_2x: expects [N,C,H,W]");
  const Index H = input.dim(2), W = input.dim(3);
  require(H >= 2 && W >= 2, "bilinear_upsample_2x: H and W must be at least 2");
  const Index planes = input.dim(0) * input.dim(1);
  const auto ty = upsample_taps(H);
  const auto tx = upsample_taps(W);
  const Index Ho = 2 * H, Wo = 2 * W;
  std::vector<T> out(static_cast<std::size_t>(planes * Ho * Wo));
  const T* in = input.data().data();
  for (Index p = 0; p < planes; ++p) {
    const T* src = in + p * H * W;
    T* dst = out.data() + p * Ho * Wo;
    for (Index oy = 0; oy < Ho; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (Index ox = 0; ox < Wo; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double v = a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                         a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
        dst[oy * Wo + ox] = static_cast<T>(v);
      }
    }
  }
  Shape shape = input.shape();
  shape[2] = Ho;
  shape[3] = Wo;
  return make_output<T>(std::move(shape), std::move(out), {&input},
                        [input, ty, tx, planes, H, W, Ho, Wo](detail::Node<T>& self) {
                          T* gx = grad_of(input);
                          if (!gx) return;
                          const T* g = self.grad.data();
                          for (Index p = 0; p < planes; ++p) {
                            T* dst = gx + p * H * W;
                            const T* gs = g + p * Ho * Wo;
                            for (Index oy = 0; oy < Ho; ++oy) {
                              const Tap& a = ty[static_cast<std::size_t>(oy)];
                              for (Index ox = 0; ox < Wo; ++ox) {
                                const Tap& b = tx[static_cast<std::size_t>(ox)];
                                const double v = gs[oy * Wo + ox];
                                dst[a.i0 * W + b.i0] += static_cast<T>(a.w0 * b.w0 * v);
                                dst[a.i0 * W + b.i1] += static_cast<T>(a.w0 * b.w1 * v);
                                dst[a.i1 * W + b.i0] += static_cast<T>(a.w1 * b.w0 * v);
                                dst[a.i1 * W + b.i1] += static_cast<T>(a.w1 * b.w1 * v);
                              }
                            }
                          }
                        });
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expects 2D operands");
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions differ " + to_string(a.shape()) +
                                    " x " + to_string(b.shape()));
  const auto A = reshape(a, {1, a.dim(0), a.dim(1)});
  const auto B = reshape(b, {1, b.dim(0), b.dim(1)});
  return reshape(bmm(A, B, false), {a.dim(0), b.dim(1)});
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm: expects [B,M,K] operands");
  const Index nb = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  require(bk == k, "bmm: inner dimensions differ " + to_string(a.shape()) + " x " +
                       to_string(b.shape()) + (transpose_b ? "^T" : ""));
  std::vector<T> out(static_cast<std::size_t>(nb * m * n));
  for (Index i = 0; i < nb; ++i) {
    const CMatMap<T> am(a.data().data() + i * m * k, m, k);
    MatMap<T> om(out.data() + i * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * CMatMap<T>(b.data().data() + i * n * k, n, k).transpose();
    } else {
      om.noalias() = am * CMatMap<T>(b.data().data() + i * k * n, k, n);
    }
  }
  return make_output<T>({nb, m, n}, std::move(out), {&a, &b},
                        [a, b, nb, m, k, n, transpose_b](detail::Node<T>& self) {
                          T* ga = grad_of(a);
                          T* gb = grad_of(b);
                          for (Index i = 0; i < nb; ++i) {
                            const CMatMap<T> go(self.grad.data() + i * m * n, m, n);
                            const CMatMap<T> am(a.data().data() + i * m * k, m, k);
                            if (transpose_b) {
                              const CMatMap<T> bm(b.data().data() + i * n * k, n, k);
                              if (ga) MatMap<T>(ga + i * m * k, m, k).noalias() += go * bm;
                              if (gb)
                                MatMap<T>(gb + i * n * k, n, k).noalias() += go.transpose() * am;
                            } else {
                              const CMatMap<T> bm(b.data().data() + i * k * n, k, n);
                              if (ga)
                                MatMap<T>(ga + i * m * k, m, k).noalias() += go * bm.transpose();
                              if (gb)
                                MatMap<T>(gb + i * k * n, k, n).noalias() += am.transpose() * go;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require(x.rank() >= 1, "softmax_rows: empty shape");
  const Index cols = x.dim(-1);
  const Index rows = x.numel() / cols;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* in = x.data().data();
  for (Index r = 0; r < rows; ++r) {
    const T* row = in + r * cols;
    T mx = row[0];
    for (Index j = 0; j < cols; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, row[j]);
    }
    double total = 0.0;
    T* dst = out.data() + r * cols;
    for (Index j = 0; j < cols; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += static_cast<double>(dst[j]);
    }
    const double inv = 1.0 / total;
    for (Index j = 0; j < cols; ++j) dst[j] = static_cast<T>(dst[j] * inv);
  }
  return make_output<T>(x.shape(), std::move(out), {&x}, [x, rows, cols](detail::Node<T>& self) {
    T* gx = grad_of(x);
    if (!gx) return;
    for (Index r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (Index j = 0; j < cols; ++j) dot += static_cast<double>(g[j]) * y[j];
      for (Index j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (g[j] - static_cast<T>(dot));
    }
  });
}

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              T eps) {
  require(x.rank() == 4, "layer_norm_channels: expects [N,C,H,W]");
  const Index N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  require(gain.numel() == C && bias.numel() == C, "layer_norm_channels: affine length mismatch");
  require(eps > T(0), "layer_norm_channels: eps must be positive");
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<std::size_t>(N * P));
  const T* in = x.data().data();
  const T* gv = gain.data().data();
  const T* bv = bias.data().data();
  std::vector<double> mu(static_cast<std::size_t>(P)), var(static_cast<std::size_t>(P));
  for (Index n = 0; n < N; ++n) {
    const T* xs = in + n * C * P;
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (Index c = 0; c < C; ++c) {
      for (Index p = 0; p < P; ++p) mu[p] += xs[c * P + p];
    }
    for (Index p = 0; p < P; ++p) mu[p] /= static_cast<double>(C);
    for (Index c = 0; c < C; ++c) {
      for (Index p = 0; p < P; ++p) {
        const double d = xs[c * P + p] - mu[p];
        var[p] += d * d;
      }
    }
    T* inv = inv_std.data() + n * P;
    for (Index p = 0; p < P; ++p) {
      inv[p] = static_cast<T>(1.0 / std::sqrt(var[p] / static_cast<double>(C) + eps));
    }
    for (Index c = 0; c < C; ++c) {
      T* xh = xhat.data() + (n * C + c) * P;
      T* o = out.data() + (n * C + c) * P;
      for (Index p = 0; p < P; ++p) {
        xh[p] = static_cast<T>((xs[c * P + p] - mu[p]) * inv[p]);
        o[p] = gv[c] * xh[p] + bv[c];
      }
    }
  }
  return make_output<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [x, gain, bias, N, C, P, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node<T>& self) {
        T* gx = grad_of(x);
        T* gg = grad_of(gain);
        T* gb = grad_of(bias);
        const T* g = self.grad.data();
        const T* gv = gain.data().data();
        std::vector<double> m1(static_cast<std::size_t>(P)), m2(static_cast<std::size_t>(P));
        for (Index n = 0; n < N; ++n) {
          for (Index c = 0; c < C; ++c) {
            const T* gr = g + (n * C + c) * P;
            const T* xh = xhat.data() + (n * C + c) * P;
            if (gg || gb) {
              double sg = 0.0, sb = 0.0;
              for (Index p = 0; p < P; ++p) {
                sg += static_cast<double>(gr[p]) * xh[p];
                sb += gr[p];
              }
              if (gg) gg[c] += static_cast<T>(sg);
              if (gb) gb[c] += static_cast<T>(sb);
            }
          }
          if (!gx) continue;
          std::fill(m1.begin(), m1.end(), 0.0);
          std::fill(m2.begin(), m2.end(), 0.0);
          for (Index c = 0; c < C; ++c) {
            const T* gr = g + (n * C + c) * P;
            const T* xh = xhat.data() + (n * C + c) * P;
            for (Index p = 0; p < P; ++p) {
              const double d = static_cast<double>(gr[p]) * gv[c];
              m1[p] += d;
              m2[p] += d * xh[p];
            }
          }
          const T* inv = inv_std.data() + n * P;
          for (Index c = 0; c < C; ++c) {
            const T* gr = g + (n * C + c) * P;
            const T* xh = xhat.data() + (n * C + c) * P;
            T* dx = gx + (n * C + c) * P;
            for (Index p = 0; p < P; ++p) {
              const double d = static_cast<double>(gr[p]) * gv[c];
              dx[p] += static_cast<T>(inv[p] * (d - m1[p] / static_cast<double>(C) -
                                                xh[p] * m2[p] / static_cast<double>(C)));
            }
          }
        }
      });
}

// ---- patches ----------------------------------------------------------------

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, Index parts) {
  require(x.rank() == 4, "patchify: expects [N,C,H,W]");
  require(parts >= 1, "patchify: partition count must be positive");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H % parts == 0 && W % parts == 0,
          "patchify: " + std::to_string(parts) + " does not divide " + std::to_string(H) + "x" +
              std::to_string(W));
  const Index h = H / parts, w = W / parts;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* in = x.data().data();
  for (Index n = 0; n < N; ++n) {
    for (Index pi = 0; pi < parts; ++pi) {
      for (Index pj = 0; pj < parts; ++pj) {
        const Index k = pi * parts + pj;
        for (Index c = 0; c < C; ++c) {
          for (Index y = 0; y < h; ++y) {
            std::copy_n(in + ((n * C + c) * H + pi * h + y) * W + pj * w, w,
                        out.data() + (((n * parts * parts + k) * C + c) * h + y) * w);
          }
        }
      }
    }
  }
  return make_output<T>(
      {N, parts * parts, C, h, w}, std::move(out), {&x},
      [x, N, C, H, W, h, w, parts](detail::Node<T>& self) {
        T* gx = grad_of(x);
        if (!gx) return;
        const T* g = self.grad.data();
        for (Index n = 0; n < N; ++n) {
          for (Index pi = 0; pi < parts; ++pi) {
            for (Index pj = 0; pj < parts; ++pj) {
              const Index k = pi * parts + pj;
              for (Index c = 0; c < C; ++c) {
                for (Index y = 0; y < h; ++y) {
                  T* dst = gx + ((n * C + c) * H + pi * h + y) * W + pj * w;
                  const T* src = g + (((n * parts * parts + k) * C + c) * h + y) * w;
                  for (Index i = 0; i < w; ++i) dst[i] += src[i];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& x, Index parts) {
  require(x.rank() == 5, "unpatchify: expects [N,P*P,C,h,w]");
  require(parts >= 1 && x.dim(1) == parts * parts,
          "unpatchify: sequence length " + std::to_string(x.dim(1)) + " is not " +
              std::to_string(parts) + "^2");
  const Index N = x.dim(0), C = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Index H = h * parts, W = w * parts;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* in = x.data().data();
  for (Index n = 0; n < N; ++n) {
    for (Index pi = 0; pi < parts; ++pi) {
      for (Index pj = 0; pj < parts; ++pj) {
        const Index k = pi * parts + pj;
        for (Index c = 0; c < C; ++c) {
          for (Index y = 0; y < h; ++y) {
            std::copy_n(in + (((n * parts * parts + k) * C + c) * h + y) * w, w,
                        out.data() + ((n * C + c) * H + pi * h + y) * W + pj * w);
          }
        }
      }
    }
  }
  return make_output<T>(
      {N, C, H, W}, std::move(out), {&x}, [x, N, C, H, W, h, w, parts](detail::Node<T>& self) {
        T* gx = grad_of(x);
        if (!gx) return;
        const T* g = self.grad.data();
        for (Index n = 0; n < N; ++n) {
          for (Index pi = 0; pi < parts; ++pi) {
            for (Index pj = 0; pj < parts; ++pj) {
              const Index k = pi * parts + pj;
              for (Index c = 0; c < C; ++c) {
                for (Index y = 0; y < h; ++y) {
                  T* dst = gx + (((n * parts * parts + k) * C + c) * h + y) * w;
                  const T* src = g + ((n * C + c) * H + pi * h + y) * W + pj * w;
                  for (Index i = 0; i < w; ++i) dst[i] += src[i];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> gram(const Tensor<T>& features) {
  require(features.rank() == 4, "gram: expects [N,C,H,W]");
  const Index N = features.dim(0), C = features.dim(1), P = features.dim(2) * features.dim(3);
  const T norm = T(1) / static_cast<T>(C * P);
  std::vector<T> out(static_cast<std::size_t>(N * C * C));
  for (Index n = 0; n < N; ++n) {
    const CMatMap<T> f(features.data().data() + n * C * P, C, P);
    MatMap<T> g(out.data() + n * C * C, C, C);
    g.noalias() = f * f.transpose();
    g *= norm;
  }
  return make_output<T>({N, C, C}, std::move(out), {&features},
                        [features, N, C, P, norm](detail::Node<T>& self) {
                          T* gf = grad_of(features);
                          if (!gf) return;
                          for (Index n = 0; n < N; ++n) {
                            const CMatMap<T> go(self.grad.data() + n * C * C, C, C);
                            const CMatMap<T> f(features.data().data() + n * C * P, C, P);
                            RowMat<T> sym = (go + go.transpose()) * norm;
                            MatMap<T>(gf + n * C * P, C, P).noalias() += sym * f;
                          }
                        });
}

#define UATTN_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                        \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                   \
  template Tensor<T> abs(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                            \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                   \
  template Tensor<T> tanh(const Tensor<T>&);                                            \
  template Tensor<T> pointwise(const Tensor<T>&, Pointwise);                            \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                  \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> crop(const Tensor<T>&, Index, Index, Index, Index);                \
  template Tensor<T> batch_to_time(const Tensor<T>&);                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int); \
  template Tensor<T> bilinear_upsample_2x(const Tensor<T>&);                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                     \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                    \
  template Tensor<T> layer_norm_channels(const Tensor<T>&, const Tensor<T>&,            \
                                         const Tensor<T>&, T);                          \
  template Tensor<T> patchify(const Tensor<T>&, Index);                                 \
  template Tensor<T> unpatchify(const Tensor<T>&, Index);                               \
  template Tensor<T> gram(const Tensor<T>&);

UATTN_INSTANTIATE_OPS(float)
UATTN_INSTANTIATE_OPS(double)

#undef UATTN_INSTANTIATE_OPS

}  // namespace uattn::ops
