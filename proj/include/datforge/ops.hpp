// Differentiable tensor operations recorded on a Tape.
//
// Every op validates shapes, computes the forward value, and (when a tape is
// supplied and some input requires a gradient) records a backward closure.
// Passing a null tape runs pure inference: nothing is recorded and outputs do
// not require gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <span>
#include <vector>

#include "datforge/blas.hpp"
#include "datforge/tensor.hpp"

namespace datforge::numerics {

enum class Activation { relu, sigmoid, softmax, log_softmax };

// Constant side-inputs to fused ops (targets, masks, coefficients).
template <typename U>
std::shared_ptr<const std::vector<U>> const_buffer(std::vector<U> v) {
  return std::make_shared<const std::vector<U>>(std::move(v));
}

namespace detail {

template <std::floating_point T>
bool want_tape(const Tape<T>* tape, std::initializer_list<bool> grads) {
  if (!tape) return false;
  for (bool g : grads)
    if (g) return true;
  return false;
}

// col is [C*kh*kw, OH*OW] row-major.
template <std::floating_point T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW,
            T* col) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* row = col + (static_cast<std::size_t>((c * kh + i) * kw + j)) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride - pad + i;
          T* dst = row + static_cast<std::size_t>(oy) * OW;
          if (y < 0 || y >= H) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + y) * W;
          if (stride == 1) {
            const int x0 = -pad + j;
            int begin = std::max(0, -x0);
            int end = std::min(OW, W - x0);
            if (begin > 0) std::fill(dst, dst + begin, T(0));
            if (end > begin) std::memcpy(dst + begin, src + x0 + begin,
                                         static_cast<std::size_t>(end - begin) * sizeof(T));
            if (end < OW) std::fill(dst + std::max(end, begin), dst + OW, T(0));
          } else {
            for (int ox = 0; ox < OW; ++ox) {
              const int xx = ox * stride - pad + j;
              dst[ox] = (xx >= 0 && xx < W) ? src[xx] : T(0);
            }
          }
        }
      }
    }
  }
}

template <std::floating_point T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
                int OW, T* dx) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* row = col + (static_cast<std::size_t>((c * kh + i) * kw + j)) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= H) continue;
          T* dst = dx + (static_cast<std::size_t>(c) * H + y) * W;
          const T* src = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            const int xx = ox * stride - pad + j;
            if (xx >= 0 && xx < W) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// input [N,C,H,W], weight [K,C,kh,kw], bias [K] -> [N,K,OH,OW]
template <std::floating_point T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding) {
  if (input.rank() != 4) raise(ErrorKind::shape, "conv2d: input rank ", input.rank(), " != 4");
  if (weight.rank() != 4) raise(ErrorKind::shape, "conv2d: weight rank ", weight.rank(), " != 4");
  if (stride < 1) raise(ErrorKind::argument, "conv2d: stride must be >= 1, got ", stride);
  if (padding < 0) raise(ErrorKind::argument, "conv2d: padding must be >= 0, got ", padding);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int K = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C)
    raise(ErrorKind::shape, "conv2d: weight in-channels ", weight.dim(1),
          " != input channels ", C);
  if (bias.rank() != 1 || bias.dim(0) != K)
    raise(ErrorKind::shape, "conv2d: bias extent ", bias.rank() ? bias.dim(0) : 0,
          " != out channels ", K);
  if (kh > H + 2 * padding)
    raise(ErrorKind::shape, "conv2d: kernel height ", kh, " exceeds padded input height ",
          H + 2 * padding);
  if (kw > W + 2 * padding)
    raise(ErrorKind::shape, "conv2d: kernel width ", kw, " exceeds padded input width ",
          W + 2 * padding);
  const int OH = (H + 2 * padding - kh) / stride + 1;
  const int OW = (W + 2 * padding - kw) / stride + 1;
  const int ckk = C * kh * kw;
  const int ohw = OH * OW;
  const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);

  Tensor<T> out = Tensor<T>::zeros({N, K, OH, OW});
  // Columns are kept alive for the backward pass.
  auto cols = std::make_shared<std::vector<T>>();
  const bool needs_tape =
      detail::want_tape(tape, {input.requires_grad(), weight.requires_grad(),
                               bias.requires_grad()});
  if (!pointwise) cols->resize(static_cast<std::size_t>(N) * ckk * ohw);

  for (int n = 0; n < N; ++n) {
    const T* xn = input.data() + static_cast<std::size_t>(n) * C * H * W;
    const T* colp = xn;
    if (!pointwise) {
      T* buf = cols->data() + static_cast<std::size_t>(n) * ckk * ohw;
      detail::im2col(xn, C, H, W, kh, kw, stride, padding, OH, OW, buf);
      colp = buf;
    }
    T* yn = out.data() + static_cast<std::size_t>(n) * K * ohw;
    blas::gemm<T>(blas::Transpose::no, blas::Transpose::no, K, ohw, ckk, T(1), weight.data(), ckk,
                  colp, ohw, T(0), yn, ohw);
    for (int k = 0; k < K; ++k) {
      const T b = bias.data()[k];
      T* row = yn + static_cast<std::size_t>(k) * ohw;
      for (int p = 0; p < ohw; ++p) row[p] += b;
    }
  }
  if (pointwise && needs_tape) cols->clear();

  if (needs_tape) {
    out.set_requires_grad(true);
    Tensor<T> in_c = input, w_c = weight, b_c = bias, out_c = out;
    tape->record([in_c, w_c, b_c, out_c, cols, N, C, H, W, K, kh, kw, stride, padding, OH, OW,
                  ckk, ohw, pointwise]() mutable {
      std::span<const T> gout = out_c.grad();
      const bool need_dx = in_c.requires_grad();
      const bool need_dw = w_c.requires_grad();
      const bool need_db = b_c.requires_grad();
      std::vector<T> dcol;
      if (need_dx && !pointwise) dcol.resize(static_cast<std::size_t>(ckk) * ohw);
      if (need_dx) in_c.ensure_grad();
      if (need_dw) w_c.ensure_grad();
      if (need_db) b_c.ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* gyn = gout.data() + static_cast<std::size_t>(n) * K * ohw;
        const T* colp = pointwise ? in_c.data() + static_cast<std::size_t>(n) * C * H * W
                                  : cols->data() + static_cast<std::size_t>(n) * ckk * ohw;
        if (need_db) {
          T* db = b_c.grad().data();
          for (int k = 0; k < K; ++k) {
            T acc = 0;
            const T* row = gyn + static_cast<std::size_t>(k) * ohw;
            for (int p = 0; p < ohw; ++p) acc += row[p];
            db[k] += acc;
          }
        }
        if (need_dw) {
          blas::gemm<T>(blas::Transpose::no, blas::Transpose::yes, K, ckk, ohw, T(1), gyn, ohw,
                        colp, ohw, T(1), w_c.grad().data(), ckk);
        }
        if (need_dx) {
          T* dxn = in_c.grad().data() + static_cast<std::size_t>(n) * C * H * W;
          if (pointwise) {
            blas::gemm<T>(blas::Transpose::yes, blas::Transpose::no, C, ohw, K, T(1), w_c.data(),
                          ckk, gyn, ohw, T(1), dxn, ohw);
          } else {
            blas::gemm<T>(blas::Transpose::yes, blas::Transpose::no, ckk, ohw, K, T(1), w_c.data(),
                          ckk, gyn, ohw, T(0), dcol.data(), ohw);
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, padding, OH, OW, dxn);
          }
        }
      }
    });
  }
  return out;
}

// input [N,D], weight [D,E], bias [E] -> [N,E]
template <std::floating_point T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (input.rank() != 2) raise(ErrorKind::shape, "linear: input rank ", input.rank(), " != 2");
  if (weight.rank() != 2) raise(ErrorKind::shape, "linear: weight rank ", weight.rank(), " != 2");
  const int N = input.dim(0), D = input.dim(1), E = weight.dim(1);
  if (weight.dim(0) != D)
    raise(ErrorKind::shape, "linear: weight rows ", weight.dim(0), " != input columns ", D);
  if (bias.rank() != 1 || bias.dim(0) != E)
    raise(ErrorKind::shape, "linear: bias extent ", bias.rank() ? bias.dim(0) : 0,
          " != output columns ", E);

  Tensor<T> out = Tensor<T>::zeros({N, E});
  blas::gemm<T>(blas::Transpose::no, blas::Transpose::no, N, E, D, T(1), input.data(), D,
                weight.data(), E, T(0), out.data(), E);
  for (int n = 0; n < N; ++n) {
    T* row = out.data() + static_cast<std::size_t>(n) * E;
    for (int e = 0; e < E; ++e) row[e] += bias.data()[e];
  }

  if (detail::want_tape(tape, {input.requires_grad(), weight.requires_grad(),
                               bias.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> in_c = input, w_c = weight, b_c = bias, out_c = out;
    tape->record([in_c, w_c, b_c, out_c, N, D, E]() mutable {
      std::span<const T> g = out_c.grad();
      if (in_c.requires_grad()) {
        in_c.ensure_grad();
        blas::gemm<T>(blas::Transpose::no, blas::Transpose::yes, N, D, E, T(1), g.data(), E,
                      w_c.data(), E, T(1), in_c.grad().data(), D);
      }
      if (w_c.requires_grad()) {
        w_c.ensure_grad();
        blas::gemm<T>(blas::Transpose::yes, blas::Transpose::no, D, E, N, T(1), in_c.data(), D,
                      g.data(), E, T(1), w_c.grad().data(), E);
      }
      if (b_c.requires_grad()) {
        b_c.ensure_grad();
        T* db = b_c.grad().data();
        for (int n = 0; n < N; ++n) {
          const T* row = g.data() + static_cast<std::size_t>(n) * E;
          for (int e = 0; e < E; ++e) db[e] += row[e];
        }
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> activate(Tape<T>* tape, const Tensor<T>& input, Activation kind) {
  if (input.size() == 0) raise(ErrorKind::argument, "activation on empty tensor");
  const auto n = static_cast<std::size_t>(input.size());
  Tensor<T> out = Tensor<T>::zeros(input.shape());
  const T* x = input.data();
  T* y = out.data();

  const bool axiswise = (kind == Activation::softmax || kind == Activation::log_softmax);
  std::size_t last = 1;
  if (axiswise) {
    if (input.rank() < 1)
      raise(ErrorKind::shape, "softmax requires rank >= 1, got scalar");
    last = static_cast<std::size_t>(input.dim(input.rank() - 1));
    if (last < 1) raise(ErrorKind::shape, "softmax requires last axis extent >= 1");
  }

  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] >= T(0)) {
          y[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          const T e = std::exp(x[i]);
          y[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::softmax:
    case Activation::log_softmax:
      for (std::size_t r = 0; r < n / last; ++r) {
        const T* xr = x + r * last;
        T* yr = y + r * last;
        T m = xr[0];
        for (std::size_t i = 1; i < last; ++i) m = std::max(m, xr[i]);
        T sum = 0;
        for (std::size_t i = 0; i < last; ++i) sum += std::exp(xr[i] - m);
        if (kind == Activation::softmax) {
          for (std::size_t i = 0; i < last; ++i) yr[i] = std::exp(xr[i] - m) / sum;
        } else {
          const T lse = m + std::log(sum);
          for (std::size_t i = 0; i < last; ++i) yr[i] = xr[i] - lse;
        }
      }
      break;
  }

  if (detail::want_tape(tape, {input.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> in_c = input, out_c = out;
    tape->record([in_c, out_c, kind, n, last]() mutable {
      std::span<const T> g = out_c.grad();
      in_c.ensure_grad();
      T* dx = in_c.grad().data();
      const T* yv = out_c.data();
      switch (kind) {
        case Activation::relu:
          for (std::size_t i = 0; i < n; ++i)
            if (yv[i] > T(0)) dx[i] += g[i];
          break;
        case Activation::sigmoid:
          for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * yv[i] * (T(1) - yv[i]);
          break;
        case Activation::softmax:
          for (std::size_t r = 0; r < n / last; ++r) {
            const T* yr = yv + r * last;
            const T* gr = g.data() + r * last;
            T dot = 0;
            for (std::size_t i = 0; i < last; ++i) dot += gr[i] * yr[i];
            for (std::size_t i = 0; i < last; ++i) dx[r * last + i] += yr[i] * (gr[i] - dot);
          }
          break;
        case Activation::log_softmax:
          for (std::size_t r = 0; r < n / last; ++r) {
            const T* yr = yv + r * last;
            const T* gr = g.data() + r * last;
            T gsum = 0;
            for (std::size_t i = 0; i < last; ++i) gsum += gr[i];
            for (std::size_t i = 0; i < last; ++i)
              dx[r * last + i] += gr[i] - std::exp(yr[i]) * gsum;
          }
          break;
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  return activate(tape, x, Activation::relu);
}

// input [N,C,H,W] -> [N,C,out_h,out_w], align-corners sampling.
template <std::floating_point T>
Tensor<T> bilinear_interpolate(Tape<T>* tape, const Tensor<T>& input, int out_h, int out_w) {
  if (input.rank() != 4)
    raise(ErrorKind::shape, "bilinear_interpolate: input rank ", input.rank(), " != 4");
  if (out_h < 1 || out_w < 1)
    raise(ErrorKind::argument, "bilinear_interpolate: output size ", out_h, "x", out_w,
          " must be >= 1x1");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H < 1 || W < 1) raise(ErrorKind::shape, "bilinear_interpolate: empty input map");

  if (out_h == H && out_w == W) {
    Tensor<T> out = Tensor<T>::from(input.shape(),
                                    std::vector<T>(input.values().begin(), input.values().end()));
    if (detail::want_tape(tape, {input.requires_grad()})) {
      out.set_requires_grad(true);
      Tensor<T> in_c = input, out_c = out;
      tape->record([in_c, out_c]() mutable {
        std::span<const T> g = out_c.grad();
        in_c.ensure_grad();
        T* dx = in_c.grad().data();
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      });
    }
    return out;
  }

  // Per-axis sample tables.
  auto make_table = [](int in_extent, int out_extent, std::vector<int>& lo, std::vector<int>& hi,
                       std::vector<T>& frac) {
    lo.resize(static_cast<std::size_t>(out_extent));
    hi.resize(static_cast<std::size_t>(out_extent));
    frac.resize(static_cast<std::size_t>(out_extent));
    const double scale =
        out_extent > 1 ? static_cast<double>(in_extent - 1) / (out_extent - 1) : 0.0;
    for (int o = 0; o < out_extent; ++o) {
      double f = o * scale;
      int l = static_cast<int>(std::floor(f));
      l = std::clamp(l, 0, in_extent - 1);
      int h = std::min(l + 1, in_extent - 1);
      lo[static_cast<std::size_t>(o)] = l;
      hi[static_cast<std::size_t>(o)] = h;
      frac[static_cast<std::size_t>(o)] = static_cast<T>(f - l);
    }
  };
  auto ytab = std::make_shared<std::array<std::vector<int>, 2>>();
  auto xtab = std::make_shared<std::array<std::vector<int>, 2>>();
  auto yfrac = std::make_shared<std::vector<T>>();
  auto xfrac = std::make_shared<std::vector<T>>();
  make_table(H, out_h, (*ytab)[0], (*ytab)[1], *yfrac);
  make_table(W, out_w, (*xtab)[0], (*xtab)[1], *xfrac);

  Tensor<T> out = Tensor<T>::zeros({N, C, out_h, out_w});
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = input.data() + static_cast<std::size_t>(nc) * H * W;
    T* dst = out.data() + static_cast<std::size_t>(nc) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = (*ytab)[0][static_cast<std::size_t>(oy)];
      const int y1 = (*ytab)[1][static_cast<std::size_t>(oy)];
      const T wy = (*yfrac)[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = (*xtab)[0][static_cast<std::size_t>(ox)];
        const int x1 = (*xtab)[1][static_cast<std::size_t>(ox)];
        const T wx = (*xfrac)[static_cast<std::size_t>(ox)];
        const T v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
        const T v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
        dst[oy * out_w + ox] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                               wy * ((T(1) - wx) * v10 + wx * v11);
      }
    }
  }

  if (detail::want_tape(tape, {input.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> in_c = input, out_c = out;
    tape->record([in_c, out_c, ytab, xtab, yfrac, xfrac, N, C, H, W, out_h, out_w]() mutable {
      std::span<const T> g = out_c.grad();
      in_c.ensure_grad();
      for (int nc = 0; nc < N * C; ++nc) {
        T* dx = in_c.grad().data() + static_cast<std::size_t>(nc) * H * W;
        const T* gr = g.data() + static_cast<std::size_t>(nc) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y0 = (*ytab)[0][static_cast<std::size_t>(oy)];
          const int y1 = (*ytab)[1][static_cast<std::size_t>(oy)];
          const T wy = (*yfrac)[static_cast<std::size_t>(oy)];
          for (int ox = 0; ox < out_w; ++ox) {
            const int x0 = (*xtab)[0][static_cast<std::size_t>(ox)];
            const int x1 = (*xtab)[1][static_cast<std::size_t>(ox)];
            const T wx = (*xfrac)[static_cast<std::size_t>(ox)];
            const T gv = gr[oy * out_w + ox];
            dx[y0 * W + x0] += (T(1) - wy) * (T(1) - wx) * gv;
            dx[y0 * W + x1] += (T(1) - wy) * wx * gv;
            dx[y1 * W + x0] += wy * (T(1) - wx) * gv;
            dx[y1 * W + x1] += wy * wx * gv;
          }
        }
      }
    });
  }
  return out;
}

// Per-location cosine similarity over channels: a,b [N,C,H,W] -> [N,H,W].
// b is treated as a frozen target; gradients flow through a only.
template <std::floating_point T>
Tensor<T> cosine_map(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, T epsilon) {
  if (a.rank() != 4 || b.rank() != 4)
    raise(ErrorKind::shape, "cosine_map: inputs must be rank 4");
  for (int i = 0; i < 4; ++i)
    if (a.dim(i) != b.dim(i))
      raise(ErrorKind::shape, "cosine_map: dimension ", i, " mismatch: ", a.dim(i), " vs ",
            b.dim(i));
  if (epsilon <= T(0)) raise(ErrorKind::argument, "cosine_map: epsilon must be > 0");
  if (b.requires_grad() && tape)
    raise(ErrorKind::argument, "cosine_map: second argument is frozen; gradient unsupported");
  const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;

  Tensor<T> out = Tensor<T>::zeros({N, H, W});
  // coef_b = 1/(A*B); coef_a = cos/(A*A) when |a| > eps else 0.
  auto coef_b = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * hw);
  auto coef_a = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * hw);
  for (int n = 0; n < N; ++n) {
    const T* an = a.data() + static_cast<std::size_t>(n) * C * hw;
    const T* bn = b.data() + static_cast<std::size_t>(n) * C * hw;
    T* on = out.data() + static_cast<std::size_t>(n) * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      T dot = 0, na2 = 0, nb2 = 0;
      for (int c = 0; c < C; ++c) {
        const T av = an[c * hw + p], bv = bn[c * hw + p];
        dot += av * bv;
        na2 += av * av;
        nb2 += bv * bv;
      }
      const T na = std::sqrt(na2), nb = std::sqrt(nb2);
      const T A = std::max(na, epsilon), B = std::max(nb, epsilon);
      const T cosv = dot / (A * B);
      on[p] = cosv;
      (*coef_b)[static_cast<std::size_t>(n) * hw + p] = T(1) / (A * B);
      (*coef_a)[static_cast<std::size_t>(n) * hw + p] = na > epsilon ? cosv / (A * A) : T(0);
    }
  }

  if (detail::want_tape(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> a_c = a, b_c = b, out_c = out;
    tape->record([a_c, b_c, out_c, coef_b, coef_a, N, C, hw]() mutable {
      std::span<const T> g = out_c.grad();
      a_c.ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* an = a_c.data() + static_cast<std::size_t>(n) * C * hw;
        const T* bn = b_c.data() + static_cast<std::size_t>(n) * C * hw;
        T* da = a_c.grad().data() + static_cast<std::size_t>(n) * C * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const T gv = g[static_cast<std::size_t>(n) * hw + p];
          if (gv == T(0)) continue;
          const T cb = (*coef_b)[static_cast<std::size_t>(n) * hw + p];
          const T ca = (*coef_a)[static_cast<std::size_t>(n) * hw + p];
          for (int c = 0; c < C; ++c)
            da[c * hw + p] += gv * (bn[c * hw + p] * cb - an[c * hw + p] * ca);
        }
      }
    });
  }
  return out;
}

// Dot product with a constant coefficient vector -> scalar.
template <std::floating_point T>
Tensor<T> dot_const(Tape<T>* tape, const Tensor<T>& x,
                    std::shared_ptr<const std::vector<T>> coeffs) {
  const auto n = static_cast<std::size_t>(x.size());
  if (!coeffs || coeffs->size() != n)
    raise(ErrorKind::shape, "dot_const: coefficient size mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x.data()[i] * (*coeffs)[i];
  Tensor<T> out = Tensor<T>::scalar_of(acc);
  if (detail::want_tape(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> x_c = x, out_c = out;
    tape->record([x_c, out_c, coeffs, n]() mutable {
      const T g = out_c.grad()[0];
      x_c.ensure_grad();
      T* dx = x_c.grad().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g * (*coeffs)[i];
    });
  }
  return out;
}

// Mean over all elements -> scalar.
template <std::floating_point T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x) {
  if (x.size() == 0) raise(ErrorKind::argument, "mean_all on empty tensor");
  const auto n = static_cast<std::size_t>(x.size());
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x.data()[i];
  Tensor<T> out = Tensor<T>::scalar_of(acc / static_cast<T>(n));
  if (detail::want_tape(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> x_c = x, out_c = out;
    tape->record([x_c, out_c, n]() mutable {
      const T g = out_c.grad()[0] / static_cast<T>(n);
      x_c.ensure_grad();
      T* dx = x_c.grad().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

// y = scale * x + shift, elementwise.
template <std::floating_point T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift) {
  const auto n = static_cast<std::size_t>(x.size());
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = scale * x.data()[i] + shift;
  if (detail::want_tape(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> x_c = x, out_c = out;
    tape->record([x_c, out_c, scale, n]() mutable {
      std::span<const T> g = out_c.grad();
      x_c.ensure_grad();
      T* dx = x_c.grad().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += scale * g[i];
    });
  }
  return out;
}

// Weighted sum of scalar tensors -> scalar.
template <std::floating_point T>
Tensor<T> weighted_sum(Tape<T>* tape, std::span<const Tensor<T>> terms, std::span<const T> weights) {
  if (terms.size() != weights.size() || terms.empty())
    raise(ErrorKind::argument, "weighted_sum: need matching non-empty terms/weights");
  T acc = 0;
  bool any_grad = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    acc += weights[i] * terms[i].scalar();
    any_grad = any_grad || terms[i].requires_grad();
  }
  Tensor<T> out = Tensor<T>::scalar_of(acc);
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> terms_c(terms.begin(), terms.end());
    std::vector<T> w_c(weights.begin(), weights.end());
    Tensor<T> out_c = out;
    tape->record([terms_c, w_c, out_c]() mutable {
      const T g = out_c.grad()[0];
      for (std::size_t i = 0; i < terms_c.size(); ++i) {
        if (!terms_c[i].requires_grad()) continue;
        terms_c[i].ensure_grad();
        terms_c[i].grad()[0] += w_c[i] * g;
      }
    });
  }
  return out;
}

template <std::floating_point T>
Tensor<T> add_scalars(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const std::array<Tensor<T>, 2> terms{a, b};
  const std::array<T, 2> w{T(1), T(1)};
  return weighted_sum<T>(tape, terms, w);
}

// Mean binary cross-entropy with logits against constant 0/1 targets.
template <std::floating_point T>
Tensor<T> bce_with_logits_mean(Tape<T>* tape, const Tensor<T>& logits,
                               std::shared_ptr<const std::vector<T>> targets) {
  const auto n = static_cast<std::size_t>(logits.size());
  if (!targets || targets->size() != n)
    raise(ErrorKind::shape, "bce_with_logits_mean: targets size mismatch");
  if (n == 0) raise(ErrorKind::argument, "bce_with_logits_mean on empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.data()[i], t = (*targets)[i];
    acc += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<T> out = Tensor<T>::scalar_of(acc / static_cast<T>(n));
  if (detail::want_tape(tape, {logits.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> l_c = logits, out_c = out;
    tape->record([l_c, out_c, targets, n]() mutable {
      const T g = out_c.grad()[0] / static_cast<T>(n);
      l_c.ensure_grad();
      T* dl = l_c.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T z = l_c.data()[i];
        T sig;
        if (z >= T(0)) {
          sig = T(1) / (T(1) + std::exp(-z));
        } else {
          const T e = std::exp(z);
          sig = e / (T(1) + e);
        }
        dl[i] += g * (sig - (*targets)[i]);
      }
    });
  }
  return out;
}

// Smooth-L1 between pred and constant targets, summed over elements where
// mask is nonzero and divided by `normalizer`. pred [N,C,H,W], mask [N,H,W]
// broadcasts over C.
template <std::floating_point T>
Tensor<T> smooth_l1_masked(Tape<T>* tape, const Tensor<T>& pred,
                           std::shared_ptr<const std::vector<T>> target,
                           std::shared_ptr<const std::vector<T>> mask, T normalizer) {
  if (pred.rank() != 4) raise(ErrorKind::shape, "smooth_l1_masked: pred must be rank 4");
  const int N = pred.dim(0), C = pred.dim(1);
  const std::size_t hw = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  if (!target || target->size() != static_cast<std::size_t>(pred.size()))
    raise(ErrorKind::shape, "smooth_l1_masked: target size mismatch");
  if (!mask || mask->size() != static_cast<std::size_t>(N) * hw)
    raise(ErrorKind::shape, "smooth_l1_masked: mask size mismatch");
  if (normalizer <= T(0)) raise(ErrorKind::argument, "smooth_l1_masked: normalizer must be > 0");

  T acc = 0;
  for (int n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const T m = (*mask)[static_cast<std::size_t>(n) * hw + p];
      if (m == T(0)) continue;
      for (int c = 0; c < C; ++c) {
        const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + p;
        const T d = pred.data()[idx] - (*target)[idx];
        const T ad = std::abs(d);
        acc += m * (ad < T(1) ? T(0.5) * d * d : ad - T(0.5));
      }
    }
  }
  Tensor<T> out = Tensor<T>::scalar_of(acc / normalizer);
  if (detail::want_tape(tape, {pred.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> p_c = pred, out_c = out;
    tape->record([p_c, out_c, target, mask, normalizer, N, C, hw]() mutable {
      const T g = out_c.grad()[0] / normalizer;
      p_c.ensure_grad();
      T* dp = p_c.grad().data();
      for (int n = 0; n < N; ++n) {
        for (std::size_t p = 0; p < hw; ++p) {
          const T m = (*mask)[static_cast<std::size_t>(n) * hw + p];
          if (m == T(0)) continue;
          for (int c = 0; c < C; ++c) {
            const std::size_t idx = (static_cast<std::size_t>(n) * C + c) * hw + p;
            const T d = p_c.data()[idx] - (*target)[idx];
            dp[idx] += g * m * std::clamp(d, T(-1), T(1));
          }
        }
      }
    });
  }
  return out;
}

// Softmax cross-entropy over the channel axis of [N,K,H,W] logits at the
// locations where class_ids >= 0, summed and divided by `normalizer`.
template <std::floating_point T>
Tensor<T> cross_entropy_masked(Tape<T>* tape, const Tensor<T>& logits,
                               std::shared_ptr<const std::vector<int>> class_ids, T normalizer) {
  if (logits.rank() != 4) raise(ErrorKind::shape, "cross_entropy_masked: logits must be rank 4");
  const int N = logits.dim(0), K = logits.dim(1);
  const std::size_t hw = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  if (!class_ids || class_ids->size() != static_cast<std::size_t>(N) * hw)
    raise(ErrorKind::shape, "cross_entropy_masked: class_ids size mismatch");
  if (normalizer <= T(0))
    raise(ErrorKind::argument, "cross_entropy_masked: normalizer must be > 0");

  T acc = 0;
  for (int n = 0; n < N; ++n) {
    const T* ln = logits.data() + static_cast<std::size_t>(n) * K * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      const int cls = (*class_ids)[static_cast<std::size_t>(n) * hw + p];
      if (cls < 0) continue;
      if (cls >= K)
        raise(ErrorKind::argument, "cross_entropy_masked: class id ", cls, " out of range ", K);
      T m = ln[p];
      for (int k = 1; k < K; ++k) m = std::max(m, ln[k * hw + p]);
      T sum = 0;
      for (int k = 0; k < K; ++k) sum += std::exp(ln[k * hw + p] - m);
      acc += m + std::log(sum) - ln[static_cast<std::size_t>(cls) * hw + p];
    }
  }
  Tensor<T> out = Tensor<T>::scalar_of(acc / normalizer);
  if (detail::want_tape(tape, {logits.requires_grad()})) {
    out.set_requires_grad(true);
    Tensor<T> l_c = logits, out_c = out;
    tape->record([l_c, out_c, class_ids, normalizer, N, K, hw]() mutable {
      const T g = out_c.grad()[0] / normalizer;
      l_c.ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* ln = l_c.data() + static_cast<std::size_t>(n) * K * hw;
        T* dl = l_c.grad().data() + static_cast<std::size_t>(n) * K * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const int cls = (*class_ids)[static_cast<std::size_t>(n) * hw + p];
          if (cls < 0) continue;
          T m = ln[p];
          for (int k = 1; k < K; ++k) m = std::max(m, ln[k * hw + p]);
          T sum = 0;
          for (int k = 0; k < K; ++k) sum += std::exp(ln[k * hw + p] - m);
          for (int k = 0; k < K; ++k) {
            const T prob = std::exp(ln[k * hw + p] - m) / sum;
            dl[k * hw + p] += g * (prob - (k == cls ? T(1) : T(0)));
          }
        }
      }
    });
  }
  return out;
}

}  // namespace datforge::numerics
