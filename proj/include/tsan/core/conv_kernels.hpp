#pragma once

#include <Eigen/Core>
#include <vector>

#include "tsan/core/parallel.hpp"
#include "tsan/core/tensor.hpp"

namespace tsan {

// Cross-correlation geometry, stride fixed at 1. Output extents:
//   H' = H + 2*ph - dh*(kh-1),  W' = W + 2*pw - dw*(kw-1).
struct ConvGeom {
  int kh = 1, kw = 1;
  int dh = 1, dw = 1;
  int ph = 0, pw = 0;
  int groups = 1;

  static ConvGeom square(int k, int dilation, int padding, int groups = 1) {
    return ConvGeom{k, k, dilation, dilation, padding, padding, groups};
  }

  int out_h(int h) const { return h + 2 * ph - dh * (kh - 1); }
  int out_w(int w) const { return w + 2 * pw - dw * (kw - 1); }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Gathers one sample's receptive fields for one group into a (Cg*kh*kw) x
// (Ho*Wo) matrix. Zero padding.
template <typename T>
void im2col(const T* x, int C, int H, int W, int c0, int Cg, const ConvGeom& g, int Ho, int Wo,
            T* col) {
  (void)C;
  const std::int64_t patch = static_cast<std::int64_t>(Ho) * Wo;
  for (int c = 0; c < Cg; ++c) {
    const T* xc = x + static_cast<std::int64_t>(c0 + c) * H * W;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + ((static_cast<std::int64_t>(c) * g.kh + i) * g.kw + j) * patch;
        for (int ho = 0; ho < Ho; ++ho) {
          const int hi = ho - g.ph + i * g.dh;
          T* out = row + static_cast<std::int64_t>(ho) * Wo;
          if (hi < 0 || hi >= H) {
            for (int wo = 0; wo < Wo; ++wo) out[wo] = T(0);
            continue;
          }
          const T* xr = xc + static_cast<std::int64_t>(hi) * W;
          for (int wo = 0; wo < Wo; ++wo) {
            const int wi = wo - g.pw + j * g.dw;
            out[wo] = (wi < 0 || wi >= W) ? T(0) : xr[wi];
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into one sample's input gradient.
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int c0, int Cg, const ConvGeom& g, int Ho,
                int Wo, T* dx) {
  (void)C;
  const std::int64_t patch = static_cast<std::int64_t>(Ho) * Wo;
  for (int c = 0; c < Cg; ++c) {
    T* dc = dx + static_cast<std::int64_t>(c0 + c) * H * W;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + ((static_cast<std::int64_t>(c) * g.kh + i) * g.kw + j) * patch;
        for (int ho = 0; ho < Ho; ++ho) {
          const int hi = ho - g.ph + i * g.dh;
          if (hi < 0 || hi >= H) continue;
          T* dr = dc + static_cast<std::int64_t>(hi) * W;
          const T* in = row + static_cast<std::int64_t>(ho) * Wo;
          for (int wo = 0; wo < Wo; ++wo) {
            const int wi = wo - g.pw + j * g.dw;
            if (wi >= 0 && wi < W) dr[wi] += in[wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// y[n,co,:,:] = sum_ci w[co,ci,:,:] (*) x[n,ci,:,:] + b[co], grouped.
// Parallel over samples only; each sample's GEMM is sequential, so results do
// not depend on the worker count.
template <typename T>
void conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeom& g,
                  Tensor<T>& y) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = w.shape[0], Cg = w.shape[1];
  const int Ho = g.out_h(H), Wo = g.out_w(W);
  const int Cog = Cout / g.groups;
  const std::int64_t patch = static_cast<std::int64_t>(Ho) * Wo;
  const std::int64_t krows = static_cast<std::int64_t>(Cg) * g.kh * g.kw;

  parallel_for(N, [&](int n) {
    std::vector<T> col(static_cast<std::size_t>(krows * patch));
    const T* xn = x.data.data() + static_cast<std::int64_t>(n) * C * H * W;
    T* yn = y.data.data() + static_cast<std::int64_t>(n) * Cout * patch;
    for (int grp = 0; grp < g.groups; ++grp) {
      detail::im2col(xn, C, H, W, grp * Cg, Cg, g, Ho, Wo, col.data());
      detail::ConstMatMap<T> wm(w.data.data() + static_cast<std::int64_t>(grp) * Cog * krows, Cog,
                                krows);
      detail::ConstMatMap<T> cm(col.data(), krows, patch);
      detail::MatMap<T> ym(yn + static_cast<std::int64_t>(grp) * Cog * patch, Cog, patch);
      ym.noalias() = wm * cm;
    }
    for (int co = 0; co < Cout; ++co) {
      const T bias = b.data[static_cast<std::size_t>(co)];
      T* row = yn + static_cast<std::int64_t>(co) * patch;
      for (std::int64_t p = 0; p < patch; ++p) row[p] += bias;
    }
  });
}

template <typename T>
void conv_backward_input(const Tensor<T>& dy, const Tensor<T>& w, const ConvGeom& g,
                         const Shape& x_shape, std::vector<T>& dx) {
  const int N = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
  const int Cout = w.shape[0], Cg = w.shape[1];
  const int Ho = g.out_h(H), Wo = g.out_w(W);
  const int Cog = Cout / g.groups;
  const std::int64_t patch = static_cast<std::int64_t>(Ho) * Wo;
  const std::int64_t krows = static_cast<std::int64_t>(Cg) * g.kh * g.kw;

  parallel_for(N, [&](int n) {
    std::vector<T> col(static_cast<std::size_t>(krows * patch));
    const T* dyn = dy.data.data() + static_cast<std::int64_t>(n) * Cout * patch;
    T* dxn = dx.data() + static_cast<std::int64_t>(n) * C * H * W;
    for (int grp = 0; grp < g.groups; ++grp) {
      detail::ConstMatMap<T> wm(w.data.data() + static_cast<std::int64_t>(grp) * Cog * krows, Cog,
                                krows);
      detail::ConstMatMap<T> dym(dyn + static_cast<std::int64_t>(grp) * Cog * patch, Cog, patch);
      detail::MatMap<T> cm(col.data(), krows, patch);
      cm.noalias() = wm.transpose() * dym;
      detail::col2im_add(col.data(), C, H, W, grp * Cg, Cg, g, Ho, Wo, dxn);
    }
  });
}

// Weight/bias gradients. Per-sample contributions are computed in parallel
// into per-sample buffers, then reduced in sample order.
template <typename T>
void conv_backward_weight(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeom& g,
                          const Shape& w_shape, std::vector<T>& dw, std::vector<T>& db) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = w_shape[0], Cg = w_shape[1];
  const int Ho = g.out_h(H), Wo = g.out_w(W);
  const int Cog = Cout / g.groups;
  const std::int64_t patch = static_cast<std::int64_t>(Ho) * Wo;
  const std::int64_t krows = static_cast<std::int64_t>(Cg) * g.kh * g.kw;
  const std::int64_t wsize = static_cast<std::int64_t>(Cout) * krows;

  std::vector<std::vector<T>> dw_n(static_cast<std::size_t>(N));
  parallel_for(N, [&](int n) {
    std::vector<T> col(static_cast<std::size_t>(krows * patch));
    std::vector<T>& acc = dw_n[static_cast<std::size_t>(n)];
    acc.assign(static_cast<std::size_t>(wsize), T(0));
    const T* xn = x.data.data() + static_cast<std::int64_t>(n) * C * H * W;
    const T* dyn = dy.data.data() + static_cast<std::int64_t>(n) * Cout * patch;
    for (int grp = 0; grp < g.groups; ++grp) {
      detail::im2col(xn, C, H, W, grp * Cg, Cg, g, Ho, Wo, col.data());
      detail::ConstMatMap<T> cm(col.data(), krows, patch);
      detail::ConstMatMap<T> dym(dyn + static_cast<std::int64_t>(grp) * Cog * patch, Cog, patch);
      detail::MatMap<T> dwm(acc.data() + static_cast<std::int64_t>(grp) * Cog * krows, Cog, krows);
      dwm.noalias() = dym * cm.transpose();
    }
  });
  for (int n = 0; n < N; ++n)
    for (std::int64_t i = 0; i < wsize; ++i) dw[static_cast<std::size_t>(i)] += dw_n[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];

  for (int co = 0; co < Cout; ++co) {
    T s = T(0);
    for (int n = 0; n < N; ++n) {
      const T* row = dy.data.data() + (static_cast<std::int64_t>(n) * Cout + co) * patch;
      for (std::int64_t p = 0; p < patch; ++p) s += row[p];
    }
    db[static_cast<std::size_t>(co)] += s;
  }
}

}  // namespace tsan
