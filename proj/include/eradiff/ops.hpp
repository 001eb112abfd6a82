#pragma once

#include "eradiff/tensor.hpp"

#include <Eigen/Core>

#include <limits>
#include <span>

namespace eradiff {

namespace detail {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRowMat = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using CMapRowMat = Eigen::Map<const RowMat<Scalar>>;

[[noreturn]] inline void shape_fail(const char* op, const std::string& what, const Shape& a,
                                    const Shape& b = {}) {
  std::string msg = std::string(op) + ": " + what + " (got " + to_string(a);
  if (!b.empty()) msg += " and " + to_string(b);
  throw ShapeError(msg + ")");
}

template <typename Scalar>
void require_same(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) shape_fail(op, "shapes differ", a.shape(), b.shape());
}

template <typename NodeT>
bool wants(const NodeT& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same("add", a, b);
  return Tensor<Scalar>::from_op("add", a.shape(), a.values() + b.values(), {a.node(), b.node()},
                                 [](auto& self) {
                                   for (std::size_t i = 0; i < 2; ++i)
                                     if (detail::wants(self, i)) self.parents[i]->accumulate(self.grad);
                                 });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same("sub", a, b);
  return Tensor<Scalar>::from_op("sub", a.shape(), a.values() - b.values(), {a.node(), b.node()},
                                 [](auto& self) {
                                   if (detail::wants(self, 0)) self.parents[0]->accumulate(self.grad);
                                   if (detail::wants(self, 1)) self.parents[1]->accumulate(-self.grad);
                                 });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same("mul", a, b);
  return Tensor<Scalar>::from_op("mul", a.shape(), a.values() * b.values(), {a.node(), b.node()},
                                 [](auto& self) {
                                   auto& pa = *self.parents[0];
                                   auto& pb = *self.parents[1];
                                   if (pa.requires_grad) pa.accumulate(self.grad * pb.value);
                                   if (pb.requires_grad) pb.accumulate(self.grad * pa.value);
                                 });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return Tensor<Scalar>::from_op("scale", a.shape(), a.values() * s, {a.node()},
                                 [s](auto& self) { self.parents[0]->accumulate(self.grad * s); });
}

template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& x) {
  using Array = typename Tensor<Scalar>::Array;
  const Array sig = (Scalar(1) + (-x.values()).exp()).inverse();
  Array out = x.values() * sig;
  return Tensor<Scalar>::from_op("silu", x.shape(), std::move(out), {x.node()},
                                 [sig](auto& self) {
                                   const auto& xv = self.parents[0]->value;
                                   self.parents[0]->accumulate(
                                       self.grad * sig * (Scalar(1) + xv * (Scalar(1) - sig)));
                                 });
}

/// Replaces entries where mask != 0 by `fill`; the gradient is zero there.
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x,
                           const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>& mask, Scalar fill) {
  if (mask.size() != x.size())
    throw ShapeError("masked_fill: mask length " + std::to_string(mask.size()) +
                     " does not match tensor shape " + to_string(x.shape()));
  typename Tensor<Scalar>::Array out = x.values();
  for (Index i = 0; i < out.size(); ++i)
    if (mask(i)) out(i) = fill;
  return Tensor<Scalar>::from_op("masked_fill", x.shape(), std::move(out), {x.node()},
                                 [mask](auto& self) {
                                   auto g = self.grad;
                                   for (Index i = 0; i < g.size(); ++i)
                                     if (mask(i)) g(i) = Scalar(0);
                                   self.parents[0]->accumulate(g);
                                 });
}

// ---------------------------------------------------------------------------
// Reductions and views

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out(1);
  out(0) = x.values().sum();
  return Tensor<Scalar>::from_op("sum", Shape{}, std::move(out), {x.node()}, [](auto& self) {
    auto& p = *self.parents[0];
    p.accumulate(decltype(p.value)::Constant(p.value.size(), self.grad(0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  typename Tensor<Scalar>::Array out(1);
  out(0) = x.values().mean();
  return Tensor<Scalar>::from_op("mean", Shape{}, std::move(out), {x.node()}, [](auto& self) {
    auto& p = *self.parents[0];
    const Scalar g = self.grad(0) / static_cast<Scalar>(p.value.size());
    p.accumulate(decltype(p.value)::Constant(p.value.size(), g));
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size()) detail::shape_fail("reshape", "element count differs", x.shape(), shape);
  return Tensor<Scalar>::from_op("reshape", std::move(shape), x.values(), {x.node()},
                                 [](auto& self) { self.parents[0]->accumulate(self.grad); });
}

/// x[..., start:start+length, ...] along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, std::size_t axis, Index start, Index length) {
  if (axis >= x.rank() || start < 0 || length <= 0 || start + length > x.dim(axis))
    detail::shape_fail("slice", "range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") on axis " +
                                    std::to_string(axis) + " out of bounds",
                       x.shape());
  const Shape& s = x.shape();
  const Index outer = numel(Shape(s.begin(), s.begin() + axis));
  const Index inner = numel(Shape(s.begin() + axis + 1, s.end()));
  const Index extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  typename Tensor<Scalar>::Array out(outer * length * inner);
  for (Index o = 0; o < outer; ++o)
    out.segment(o * length * inner, length * inner) =
        x.values().segment((o * extent + start) * inner, length * inner);
  return Tensor<Scalar>::from_op(
      "slice", std::move(out_shape), std::move(out), {x.node()},
      [outer, inner, extent, start, length](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (Index o = 0; o < outer; ++o)
          g.segment((o * extent + start) * inner, length * inner) +=
              self.grad.segment(o * length * inner, length * inner);
      });
}

/// Concatenation along axis 1 (channels for NCHW, features for [N, F]).
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) detail::shape_fail("concat_channels", "rank must be >= 2", s0);
  Index channels = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = s0;
    if (a.size() != b.size()) detail::shape_fail("concat_channels", "rank mismatch", s0, p.shape());
    a[1] = b[1] = 0;
    if (a != b) detail::shape_fail("concat_channels", "non-channel extents differ", s0, p.shape());
    channels += p.dim(1);
  }
  const Index batch = s0[0];
  const Index inner = numel(Shape(s0.begin() + 2, s0.end()));
  Shape out_shape = s0;
  out_shape[1] = channels;
  typename Tensor<Scalar>::Array out(batch * channels * inner);
  std::vector<Index> widths;
  std::vector<std::shared_ptr<typename Tensor<Scalar>::NodeT>> nodes;
  for (Index n = 0; n < batch; ++n) {
    Index offset = n * channels * inner;
    for (const auto& p : parts) {
      const Index w = p.dim(1) * inner;
      out.segment(offset, w) = p.values().segment(n * w, w);
      offset += w;
    }
  }
  for (const auto& p : parts) {
    widths.push_back(p.dim(1) * inner);
    nodes.push_back(p.node());
  }
  return Tensor<Scalar>::from_op(
      "concat_channels", std::move(out_shape), std::move(out), std::move(nodes),
      [widths, batch, channels, inner](auto& self) {
        for (Index n = 0; n < batch; ++n) {
          Index offset = n * channels * inner;
          for (std::size_t k = 0; k < widths.size(); ++k) {
            if (self.parents[k]->requires_grad)
              self.parents[k]->grad_buffer().segment(n * widths[k], widths[k]) +=
                  self.grad.segment(offset, widths[k]);
            offset += widths[k];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using detail::CMapRowMat;
  using detail::MapRowMat;
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3)))
    detail::shape_fail("matmul", "expected two rank-2 or two rank-3 operands", a.shape(), b.shape());
  const Index batch = batched ? a.dim(0) : 1;
  const Index m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const Index k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != k2 || (batched && b.dim(0) != batch))
    detail::shape_fail("matmul", "inner dimensions do not agree", a.shape(), b.shape());
  typename Tensor<Scalar>::Array out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    MapRowMat<Scalar> c(out.data() + i * m * n, m, n);
    c.noalias() = CMapRowMat<Scalar>(a.values().data() + i * m * k, m, k) *
                  CMapRowMat<Scalar>(b.values().data() + i * k * n, k, n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor<Scalar>::from_op(
      "matmul", std::move(shape), std::move(out), {a.node(), b.node()},
      [batch, m, k, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (Index i = 0; i < batch; ++i) {
          CMapRowMat<Scalar> g(self.grad.data() + i * m * n, m, n);
          if (pa.requires_grad) {
            MapRowMat<Scalar> ga(pa.grad_buffer().data() + i * m * k, m, k);
            ga.noalias() += g * CMapRowMat<Scalar>(pb.value.data() + i * k * n, k, n).transpose();
          }
          if (pb.requires_grad) {
            MapRowMat<Scalar> gb(pb.grad_buffer().data() + i * k * n, k, n);
            gb.noalias() += CMapRowMat<Scalar>(pa.value.data() + i * m * k, m, k).transpose() * g;
          }
        }
      });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename Scalar>
Tensor<Scalar> transpose_last2(const Tensor<Scalar>& x) {
  using detail::CMapRowMat;
  using detail::MapRowMat;
  if (x.rank() != 2 && x.rank() != 3) detail::shape_fail("transpose_last2", "expected rank 2 or 3", x.shape());
  const bool batched = x.rank() == 3;
  const Index batch = batched ? x.dim(0) : 1;
  const Index r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  typename Tensor<Scalar>::Array out(x.size());
  for (Index i = 0; i < batch; ++i)
    MapRowMat<Scalar>(out.data() + i * r * c, c, r) =
        CMapRowMat<Scalar>(x.values().data() + i * r * c, r, c).transpose();
  Shape shape = batched ? Shape{batch, c, r} : Shape{c, r};
  return Tensor<Scalar>::from_op("transpose_last2", std::move(shape), std::move(out), {x.node()},
                                 [batch, r, c](auto& self) {
                                   auto& g = self.parents[0]->grad_buffer();
                                   for (Index i = 0; i < batch; ++i)
                                     MapRowMat<Scalar>(g.data() + i * r * c, r, c) +=
                                         CMapRowMat<Scalar>(self.grad.data() + i * r * c, c, r)
                                             .transpose();
                                 });
}

/// y = x W^T + b over the last axis; W is [out, in], b is [out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  using detail::CMapRowMat;
  using detail::MapRowMat;
  if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1)
    detail::shape_fail("linear", "expected x[..., in], W[out, in], b[out]", x.shape(), weight.shape());
  const Index in = weight.dim(1), out_f = weight.dim(0);
  if (x.dim(x.rank() - 1) != in || bias.dim(0) != out_f)
    detail::shape_fail("linear", "feature sizes do not agree", x.shape(), weight.shape());
  const Index rows = x.size() / in;
  typename Tensor<Scalar>::Array out(rows * out_f);
  {
    MapRowMat<Scalar> y(out.data(), rows, out_f);
    y.noalias() = CMapRowMat<Scalar>(x.values().data(), rows, in) *
                  CMapRowMat<Scalar>(weight.values().data(), out_f, in).transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.values().data(), out_f);
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  return Tensor<Scalar>::from_op(
      "linear", std::move(shape), std::move(out), {x.node(), weight.node(), bias.node()},
      [rows, in, out_f](auto& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        CMapRowMat<Scalar> g(self.grad.data(), rows, out_f);
        if (px.requires_grad)
          MapRowMat<Scalar>(px.grad_buffer().data(), rows, in).noalias() +=
              g * CMapRowMat<Scalar>(pw.value.data(), out_f, in);
        if (pw.requires_grad)
          MapRowMat<Scalar>(pw.grad_buffer().data(), out_f, in).noalias() +=
              g.transpose() * CMapRowMat<Scalar>(px.value.data(), rows, in);
        if (pb.requires_grad)
          pb.grad_buffer() += g.colwise().sum().transpose().array();
      });
}

/// Numerically stable softmax over the last axis.
template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& x) {
  using detail::CMapRowMat;
  using detail::MapRowMat;
  if (x.rank() < 1) detail::shape_fail("softmax_lastdim", "rank must be >= 1", x.shape());
  const Index cols = x.dim(x.rank() - 1);
  const Index rows = x.size() / cols;
  typename Tensor<Scalar>::Array out(x.size());
  for (Index r = 0; r < rows; ++r) {
    auto in = x.values().segment(r * cols, cols);
    auto o = out.segment(r * cols, cols);
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  return Tensor<Scalar>::from_op("softmax_lastdim", x.shape(), out, {x.node()},
                                 [out, rows, cols](auto& self) {
                                   auto& g = self.parents[0]->grad_buffer();
                                   for (Index r = 0; r < rows; ++r) {
                                     auto y = out.segment(r * cols, cols);
                                     auto dy = self.grad.segment(r * cols, cols);
                                     const Scalar dot = (y * dy).sum();
                                     g.segment(r * cols, cols) += y * (dy - dot);
                                   }
                                 });
}

// ---------------------------------------------------------------------------
// Image ops (NCHW)

namespace detail {

struct ConvGeometry {
  Index channels, height, width, kernel, stride, pad, out_h, out_w;
  Index patch() const { return channels * kernel * kernel; }
  Index pixels() const { return out_h * out_w; }
};

template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g, Scalar* col) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        Scalar* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            row[oy * g.out_w + ox] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                         ? img[(c * g.height + iy) * g.width + ix]
                                         : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* img) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const Scalar* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.pixels();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-d convolution (cross-correlation) with square kernels.
/// x: [N, Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride = 1, Index pad = 0) {
  using detail::CMapRowMat;
  using detail::MapRowMat;
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1)
    detail::shape_fail("conv2d", "expected x[N,C,H,W], W[O,C,k,k], b[O]", x.shape(), weight.shape());
  if (weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3) || bias.dim(0) != weight.dim(0))
    detail::shape_fail("conv2d", "channel or kernel extents do not agree", x.shape(), weight.shape());
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) detail::shape_fail("conv2d", "kernel larger than padded input", x.shape(), weight.shape());
  const Index batch = x.dim(0), cout = weight.dim(0);
  const Index K = g.patch(), P = g.pixels();

  auto cols = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(batch * K * P));
  typename Tensor<Scalar>::Array out(batch * cout * P);
  CMapRowMat<Scalar> w(weight.values().data(), cout, K);
  for (Index n = 0; n < batch; ++n) {
    Scalar* col = cols->data() + n * K * P;
    detail::im2col(x.values().data() + n * g.channels * g.height * g.width, g, col);
    MapRowMat<Scalar> y(out.data() + n * cout * P, cout, P);
    y.noalias() = w * CMapRowMat<Scalar>(col, K, P);
    y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.values().data(), cout);
  }
  return Tensor<Scalar>::from_op(
      "conv2d", Shape{batch, cout, g.out_h, g.out_w}, std::move(out),
      {x.node(), weight.node(), bias.node()}, [cols, g, batch, cout, K, P](auto& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        CMapRowMat<Scalar> w(pw.value.data(), cout, K);
        std::vector<Scalar> dcol(static_cast<std::size_t>(K * P));
        for (Index n = 0; n < batch; ++n) {
          CMapRowMat<Scalar> dy(self.grad.data() + n * cout * P, cout, P);
          CMapRowMat<Scalar> col(cols->data() + n * K * P, K, P);
          if (pw.requires_grad)
            MapRowMat<Scalar>(pw.grad_buffer().data(), cout, K).noalias() += dy * col.transpose();
          if (pb.requires_grad) pb.grad_buffer() += dy.rowwise().sum().array();
          if (px.requires_grad) {
            MapRowMat<Scalar>(dcol.data(), K, P).noalias() = w.transpose() * dy;
            detail::col2im_add(dcol.data(), g,
                               px.grad_buffer().data() + n * g.channels * g.height * g.width);
          }
        }
      });
}

/// Per-sample, per-channel normalization over H x W with learnable scale/shift.
template <typename Scalar>
Tensor<Scalar> group_norm_lite(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                               const Tensor<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  using Array = typename Tensor<Scalar>::Array;
  if (x.rank() != 4 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
      beta.dim(0) != x.dim(1))
    detail::shape_fail("group_norm_lite", "expected x[N,C,H,W], gamma[C], beta[C]", x.shape(), gamma.shape());
  const Index batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  Array xhat(x.size());
  Array inv_std(batch * ch);
  Array out(x.size());
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < ch; ++c) {
      const Index off = (n * ch + c) * hw;
      auto in = x.values().segment(off, hw);
      const Scalar mu = in.mean();
      const Scalar var = (in - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_std(n * ch + c) = is;
      xhat.segment(off, hw) = (in - mu) * is;
      out.segment(off, hw) = xhat.segment(off, hw) * gamma[c] + beta[c];
    }
  return Tensor<Scalar>::from_op(
      "group_norm_lite", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [xhat, inv_std, batch, ch, hw](auto& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (Index n = 0; n < batch; ++n)
          for (Index c = 0; c < ch; ++c) {
            const Index off = (n * ch + c) * hw;
            auto dy = self.grad.segment(off, hw);
            auto xh = xhat.segment(off, hw);
            if (pg.requires_grad) pg.grad_buffer()(c) += (dy * xh).sum();
            if (pb.requires_grad) pb.grad_buffer()(c) += dy.sum();
            if (px.requires_grad) {
              const Array dxh = dy * pg.value(c);
              const Scalar m1 = dxh.mean();
              const Scalar m2 = (dxh * xh).mean();
              px.grad_buffer().segment(off, hw) += inv_std(n * ch + c) * (dxh - m1 - xh * m2);
            }
          }
      });
}

/// Nearest-neighbour 2x upsampling of [N, C, H, W].
template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& x) {
  if (x.rank() != 4) detail::shape_fail("upsample_nearest2x", "expected rank 4", x.shape());
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  typename Tensor<Scalar>::Array out(planes * 4 * h * w);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx)
        out((p * 2 * h + y) * 2 * w + xx) = x.values()((p * h + y / 2) * w + xx / 2);
  return Tensor<Scalar>::from_op("upsample_nearest2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w},
                                 std::move(out), {x.node()}, [planes, h, w](auto& self) {
                                   auto& g = self.parents[0]->grad_buffer();
                                   for (Index p = 0; p < planes; ++p)
                                     for (Index y = 0; y < 2 * h; ++y)
                                       for (Index xx = 0; xx < 2 * w; ++xx)
                                         g((p * h + y / 2) * w + xx / 2) +=
                                             self.grad((p * 2 * h + y) * 2 * w + xx);
                                 });
}

/// x[n, c, :, :] + b[n, c].
template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& b) {
  if (x.rank() != 4 || b.rank() != 2 || b.dim(0) != x.dim(0) || b.dim(1) != x.dim(1))
    detail::shape_fail("add_channel_bias", "expected x[N,C,H,W] and b[N,C]", x.shape(), b.shape());
  const Index planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  typename Tensor<Scalar>::Array out = x.values();
  for (Index p = 0; p < planes; ++p) out.segment(p * hw, hw) += b[p];
  return Tensor<Scalar>::from_op("add_channel_bias", x.shape(), std::move(out), {x.node(), b.node()},
                                 [planes, hw](auto& self) {
                                   if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
                                   if (self.parents[1]->requires_grad) {
                                     auto& g = self.parents[1]->grad_buffer();
                                     for (Index p = 0; p < planes; ++p) g(p) += self.grad.segment(p * hw, hw).sum();
                                   }
                                 });
}

}  // namespace eradiff
