#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tsan/core/conv_kernels.hpp"
#include "tsan/core/tape.hpp"

// Tape ops. Each op validates its contract, computes the forward value, and
// registers the backward rule when some input requires gradients. Reductions
// run in a fixed order so results are reproducible for any thread count.

namespace tsan {

// Piecewise-linearity signature. While active, relu and mae_loss fold the
// sign pattern of their kink sites into a running hash. gradcheck evaluates
// f(x+h) and f(x-h) under this tracker: differing signatures mean the
// perturbation crossed a subgradient kink, where central differences do not
// estimate the (sub)gradient.
namespace kinksig {

struct State {
  bool active = false;
  std::uint64_t hash = 0;
  std::uint64_t counter = 0;
};

inline State& state() {
  thread_local State s;
  return s;
}

inline void begin() {
  State& s = state();
  s.active = true;
  s.hash = 0;
  s.counter = 0;
}

inline std::uint64_t end() {
  State& s = state();
  s.active = false;
  return s.hash;
}

inline std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline void note(bool positive) {
  State& s = state();
  ++s.counter;
  if (positive) s.hash ^= mix(s.counter);
}

}  // namespace kinksig

namespace detail {

template <typename T>
const std::vector<T>& grad_of(Tape<T>& t, Value v) {
  return t.grad(v);
}

// Broadcast descriptor: y has the same rank as x with each extent equal or 1.
struct Bcast {
  int xd[4] = {1, 1, 1, 1};
  std::int64_t ystride[4] = {0, 0, 0, 0};
  std::int64_t ynumel = 1;
};

inline Bcast make_bcast(const Shape& xs, const Shape& ys) {
  contract(xs.rank() == ys.rank(), "broadcast: ranks must match");
  Bcast b;
  const int off = 4 - xs.rank();
  int yd[4] = {1, 1, 1, 1};
  for (int i = 0; i < xs.rank(); ++i) {
    b.xd[off + i] = xs[i];
    yd[off + i] = ys[i];
    contract(ys[i] == xs[i] || ys[i] == 1, "broadcast: extent must match or be 1");
  }
  std::int64_t stride = 1;
  for (int i = 3; i >= 0; --i) {
    b.ystride[i] = (yd[i] == 1) ? 0 : stride;
    stride *= yd[i];
  }
  b.ynumel = stride;
  return b;
}

// Applies f over x with y broadcast; parallel across the leading axis.
template <typename T, typename F>
void bcast_apply(const Bcast& b, const T* x, const T* y, T* out, F&& f) {
  const std::int64_t inner = static_cast<std::int64_t>(b.xd[1]) * b.xd[2] * b.xd[3];
  parallel_for(b.xd[0], [&](int i0) {
    std::int64_t p = i0 * inner;
    for (int i1 = 0; i1 < b.xd[1]; ++i1)
      for (int i2 = 0; i2 < b.xd[2]; ++i2) {
        const std::int64_t ybase = i0 * b.ystride[0] + i1 * b.ystride[1] + i2 * b.ystride[2];
        if (b.ystride[3] == 0) {
          const T yv = y[ybase];
          for (int i3 = 0; i3 < b.xd[3]; ++i3, ++p) out[p] = f(x[p], yv);
        } else {
          for (int i3 = 0; i3 < b.xd[3]; ++i3, ++p) out[p] = f(x[p], y[ybase + i3 * b.ystride[3]]);
        }
      }
  });
}

// dx[p] += g[p] * y[y_index(p)]; parallel across the leading axis.
template <typename T>
void bcast_mul_accumulate(const Bcast& b, const T* g, const T* y, T* dx) {
  const std::int64_t inner = static_cast<std::int64_t>(b.xd[1]) * b.xd[2] * b.xd[3];
  parallel_for(b.xd[0], [&](int i0) {
    std::int64_t p = i0 * inner;
    for (int i1 = 0; i1 < b.xd[1]; ++i1)
      for (int i2 = 0; i2 < b.xd[2]; ++i2) {
        const std::int64_t ybase = i0 * b.ystride[0] + i1 * b.ystride[1] + i2 * b.ystride[2];
        if (b.ystride[3] == 0) {
          const T yv = y[ybase];
          for (int i3 = 0; i3 < b.xd[3]; ++i3, ++p) dx[p] += g[p] * yv;
        } else {
          for (int i3 = 0; i3 < b.xd[3]; ++i3, ++p) dx[p] += g[p] * y[ybase + i3 * b.ystride[3]];
        }
      }
  });
}

// acc[y_index] += f(p) over all x coordinates, sequential.
template <typename T, typename F>
void bcast_reduce(const Bcast& b, T* acc, F&& f) {
  std::int64_t p = 0;
  for (int i0 = 0; i0 < b.xd[0]; ++i0)
    for (int i1 = 0; i1 < b.xd[1]; ++i1)
      for (int i2 = 0; i2 < b.xd[2]; ++i2) {
        const std::int64_t ybase = i0 * b.ystride[0] + i1 * b.ystride[1] + i2 * b.ystride[2];
        for (int i3 = 0; i3 < b.xd[3]; ++i3, ++p) acc[ybase + i3 * b.ystride[3]] += f(p);
      }
}

}  // namespace detail

// ---------------------------------------------------------------- conv2d ---

// General cross-correlation (possibly rectangular kernel). The square public
// wrapper below enforces the layer-facing kernel contract.
template <typename T>
Value conv2d_impl(Tape<T>& t, Value x, Value w, Value b, const ConvGeom& g) {
  const Shape xs = t.shape(x), ws = t.shape(w), bs = t.shape(b);
  contract(xs.rank() == 4 && ws.rank() == 4 && bs.rank() == 1,
           "conv2d: x and w must be rank 4, b rank 1");
  contract(g.groups >= 1 && xs[1] % g.groups == 0 && ws[0] % g.groups == 0,
           "conv2d: channels must divide groups");
  contract(ws[1] == xs[1] / g.groups, "conv2d: input channels of x and w disagree");
  contract(ws[2] == g.kh && ws[3] == g.kw, "conv2d: kernel extents disagree with geometry");
  contract(bs[0] == ws[0], "conv2d: bias length must equal output channels");
  const int Ho = g.out_h(xs[2]), Wo = g.out_w(xs[3]);
  contract(Ho > 0 && Wo > 0, "conv2d: non-positive output extent");

  const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Value out = t.make_node(Shape{xs[0], ws[0], Ho, Wo}, ng);
  conv_forward(t.val(x), t.val(w), t.val(b), g, t.mut(out));
  if (ng) {
    t.record(out, [x, w, b, out, g](Tape<T>& tp) {
      const Tensor<T>& dy_buf = tp.val(out);
      Tensor<T> dy(dy_buf.shape);
      dy.data = tp.grad(out);
      if (tp.needs_grad(x))
        conv_backward_input(dy, tp.val(w), g, tp.shape(x), tp.grad_buf(x));
      if (tp.needs_grad(w) || tp.needs_grad(b))
        conv_backward_weight(tp.val(x), dy, g, tp.shape(w), tp.grad_buf(w), tp.grad_buf(b));
    });
  }
  return out;
}

// Square-kernel convolution, stride 1, zero padding, holes of size
// `dilation`.
template <typename T>
Value conv2d(Tape<T>& t, Value x, Value w, Value b, int dilation, int padding, int groups = 1) {
  const Shape ws = t.shape(w);
  contract(ws.rank() == 4 && ws[2] == ws[3], "conv2d: kernel must be square");
  const int k = ws[2];
  contract(k == 1 || k == 3 || k == 7, "conv2d: kernel size must be one of {1,3,7}");
  contract(dilation >= 1 && padding >= 0, "conv2d: bad dilation/padding");
  return conv2d_impl(t, x, w, b, ConvGeom::square(k, dilation, padding, groups));
}

// Length-preserving single-channel 1-D convolution along H or W (kernel 3).
template <typename T>
Value conv1d_axis(Tape<T>& t, Value x, Value w, Value b, bool along_h) {
  const Shape ws = t.shape(w);
  contract(ws.rank() == 4 && ws[0] == 1 && ws[1] == 1, "conv1d: single channel");
  ConvGeom g;
  if (along_h) {
    contract(ws[2] == 3 && ws[3] == 1, "conv1d: kernel must be (3,1) along H");
    g = ConvGeom{3, 1, 1, 1, 1, 0, 1};
  } else {
    contract(ws[2] == 1 && ws[3] == 3, "conv1d: kernel must be (1,3) along W");
    g = ConvGeom{1, 3, 1, 1, 0, 1, 1};
  }
  return conv2d_impl(t, x, w, b, g);
}

// ----------------------------------------------------------- elementwise ---

template <typename T>
Value relu(Tape<T>& t, Value x) {
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(t.shape(x), ng);
  const auto& xv = t.val(x).data;
  auto& ov = t.mut(out).data;
  if (kinksig::state().active) {
    // tracked path: sequential, records the sign pattern for gradcheck
    for (std::size_t i = 0; i < xv.size(); ++i) {
      kinksig::note(xv[i] > T(0));
      ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    }
  } else {
    parallel_chunks(static_cast<std::int64_t>(xv.size()), [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t i = lo; i < hi; ++i)
        ov[static_cast<std::size_t>(i)] =
            xv[static_cast<std::size_t>(i)] > T(0) ? xv[static_cast<std::size_t>(i)] : T(0);
    });
  }
  if (ng) {
    t.record(out, [x, out](Tape<T>& tp) {
      const auto& o = tp.val(out).data;
      const auto& g = tp.grad(out);
      auto& dx = tp.grad_buf(x);
      parallel_chunks(static_cast<std::int64_t>(o.size()), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i)
          if (o[static_cast<std::size_t>(i)] > T(0))
            dx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
      });
    });
  }
  return out;
}

template <typename T>
Value sigmoid(Tape<T>& t, Value x) {
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(t.shape(x), ng);
  const auto& xv = t.val(x).data;
  auto& ov = t.mut(out).data;
  parallel_chunks(static_cast<std::int64_t>(xv.size()), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const T v = xv[static_cast<std::size_t>(i)];
      if (v >= T(0)) {
        ov[static_cast<std::size_t>(i)] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        ov[static_cast<std::size_t>(i)] = e / (T(1) + e);
      }
    }
  });
  if (ng) {
    t.record(out, [x, out](Tape<T>& tp) {
      const auto& o = tp.val(out).data;
      const auto& g = tp.grad(out);
      auto& dx = tp.grad_buf(x);
      parallel_chunks(static_cast<std::int64_t>(o.size()), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          const T s = o[static_cast<std::size_t>(i)];
          dx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * s * (T(1) - s);
        }
      });
    });
  }
  return out;
}

// add / mul with y broadcastable to x by singleton extents. Broadcast
// gradients sum over the broadcast axes in a fixed order.
template <typename T>
Value add(Tape<T>& t, Value x, Value y) {
  const detail::Bcast bc = detail::make_bcast(t.shape(x), t.shape(y));
  const bool ng = t.needs_grad(x) || t.needs_grad(y);
  Value out = t.make_node(t.shape(x), ng);
  detail::bcast_apply(bc, t.val(x).data.data(), t.val(y).data.data(), t.mut(out).data.data(),
                      [](T a, T b) { return a + b; });
  if (ng) {
    const bool same = t.shape(x) == t.shape(y);
    t.record(out, [x, y, out, bc, same](Tape<T>& tp) {
      const auto& g = tp.grad(out);
      if (tp.needs_grad(x)) {
        auto& dx = tp.grad_buf(x);
        parallel_chunks(static_cast<std::int64_t>(g.size()),
                        [&](std::int64_t lo, std::int64_t hi) {
                          for (std::int64_t i = lo; i < hi; ++i)
                            dx[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                        });
      }
      if (tp.needs_grad(y)) {
        auto& dy = tp.grad_buf(y);
        if (same) {
          parallel_chunks(static_cast<std::int64_t>(g.size()),
                          [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i)
                              dy[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                          });
        } else {
          detail::bcast_reduce(bc, dy.data(),
                               [&](std::int64_t p) { return g[static_cast<std::size_t>(p)]; });
        }
      }
    });
  }
  return out;
}

template <typename T>
Value mul(Tape<T>& t, Value x, Value y) {
  const detail::Bcast bc = detail::make_bcast(t.shape(x), t.shape(y));
  const bool ng = t.needs_grad(x) || t.needs_grad(y);
  Value out = t.make_node(t.shape(x), ng);
  detail::bcast_apply(bc, t.val(x).data.data(), t.val(y).data.data(), t.mut(out).data.data(),
                      [](T a, T b) { return a * b; });
  if (ng) {
    const bool same = t.shape(x) == t.shape(y);
    t.record(out, [x, y, out, bc, same](Tape<T>& tp) {
      const auto& g = tp.grad(out);
      const auto& xv = tp.val(x).data;
      const auto& yv = tp.val(y).data;
      if (tp.needs_grad(x)) {
        auto& dx = tp.grad_buf(x);
        detail::bcast_mul_accumulate(bc, g.data(), yv.data(), dx.data());
      }
      if (tp.needs_grad(y)) {
        auto& dy = tp.grad_buf(y);
        if (same) {
          parallel_chunks(static_cast<std::int64_t>(g.size()),
                          [&](std::int64_t lo, std::int64_t hi) {
                            for (std::int64_t i = lo; i < hi; ++i)
                              dy[static_cast<std::size_t>(i)] +=
                                  g[static_cast<std::size_t>(i)] * xv[static_cast<std::size_t>(i)];
                          });
        } else {
          detail::bcast_reduce(bc, dy.data(), [&](std::int64_t p) {
            return g[static_cast<std::size_t>(p)] * xv[static_cast<std::size_t>(p)];
          });
        }
      }
    });
  }
  return out;
}

// Multiply by a compile-time constant (loss weighting).
template <typename T>
Value scale(Tape<T>& t, Value x, double c) {
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(t.shape(x), ng);
  const auto& xv = t.val(x).data;
  auto& ov = t.mut(out).data;
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = static_cast<T>(xv[i] * static_cast<T>(c));
  if (ng) {
    t.record(out, [x, out, c](Tape<T>& tp) {
      const auto& g = tp.grad(out);
      auto& dx = tp.grad_buf(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * static_cast<T>(c);
    });
  }
  return out;
}

// ---------------------------------------------------------------- concat ---

// Concatenation along the channel axis; gradient splits by slice.
template <typename T>
Value concat(Tape<T>& t, const std::vector<Value>& xs) {
  contract(!xs.empty(), "concat: needs at least one tensor");
  const Shape s0 = t.shape(xs[0]);
  contract(s0.rank() == 4, "concat: tensors must be rank 4");
  int ctotal = 0;
  bool ng = false;
  for (Value v : xs) {
    const Shape s = t.shape(v);
    contract(s.rank() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
             "concat: extents other than channel must agree");
    ctotal += s[1];
    ng = ng || t.needs_grad(v);
  }
  Value out = t.make_node(Shape{s0[0], ctotal, s0[2], s0[3]}, ng);
  const std::int64_t plane = static_cast<std::int64_t>(s0[2]) * s0[3];
  auto& ov = t.mut(out).data;
  for (int n = 0; n < s0[0]; ++n) {
    std::int64_t c_off = 0;
    for (Value v : xs) {
      const auto& xv = t.val(v).data;
      const int cx = t.shape(v)[1];
      std::copy(xv.begin() + n * cx * plane, xv.begin() + (n + 1) * cx * plane,
                ov.begin() + (static_cast<std::int64_t>(n) * ctotal + c_off) * plane);
      c_off += cx;
    }
  }
  if (ng) {
    std::vector<Value> inputs = xs;
    t.record(out, [inputs, out, ctotal, plane](Tape<T>& tp) {
      const auto& g = tp.grad(out);
      const int N = tp.shape(out)[0];
      std::int64_t c_off = 0;
      for (Value v : inputs) {
        const int cx = tp.shape(v)[1];
        if (tp.needs_grad(v)) {
          auto& dx = tp.grad_buf(v);
          for (int n = 0; n < N; ++n) {
            const T* src = g.data() + (static_cast<std::int64_t>(n) * ctotal + c_off) * plane;
            T* dst = dx.data() + static_cast<std::int64_t>(n) * cx * plane;
            for (std::int64_t i = 0; i < cx * plane; ++i) dst[i] += src[i];
          }
        }
        c_off += cx;
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ reductions ---

enum MeanAxes : int { kMeanC = 1, kMeanH = 2, kMeanW = 4 };

// Arithmetic mean over a nonempty subset of {channel,height,width}; reduced
// axes kept as singleton extents.
template <typename T>
Value mean_over_axes(Tape<T>& t, Value x, int axes) {
  const Shape xs = t.shape(x);
  contract(xs.rank() == 4, "mean_over_axes: input must be rank 4");
  contract(axes != 0 && (axes & ~(kMeanC | kMeanH | kMeanW)) == 0,
           "mean_over_axes: axes must be a nonempty subset of {C,H,W}");
  const int oc = (axes & kMeanC) ? 1 : xs[1];
  const int oh = (axes & kMeanH) ? 1 : xs[2];
  const int ow = (axes & kMeanW) ? 1 : xs[3];
  std::int64_t count = 1;
  if (axes & kMeanC) count *= xs[1];
  if (axes & kMeanH) count *= xs[2];
  if (axes & kMeanW) count *= xs[3];

  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape{xs[0], oc, oh, ow}, ng);
  const T* xp = t.val(x).data.data();
  T* op = t.mut(out).data.data();
  const T inv = static_cast<T>(1.0 / static_cast<double>(count));
  // output strides with zeros on the reduced axes
  const std::int64_t os_w = ow == 1 ? 0 : 1;
  const std::int64_t os_h = oh == 1 ? 0 : ow;
  const std::int64_t os_c = oc == 1 ? 0 : static_cast<std::int64_t>(oh) * ow;
  const std::int64_t os_n = static_cast<std::int64_t>(oc) * oh * ow;
  for (int n = 0; n < xs[0]; ++n)
    for (int c = 0; c < xs[1]; ++c)
      for (int h = 0; h < xs[2]; ++h) {
        const T* row = xp + ((static_cast<std::int64_t>(n) * xs[1] + c) * xs[2] + h) * xs[3];
        T* orow = op + n * os_n + c * os_c + h * os_h;
        if (os_w == 0) {
          T acc = T(0);
          for (int w = 0; w < xs[3]; ++w) acc += row[w];
          orow[0] += acc * inv;
        } else {
          for (int w = 0; w < xs[3]; ++w) orow[w] += row[w] * inv;
        }
      }
  if (ng) {
    t.record(out, [x, out, os_n, os_c, os_h, os_w, inv](Tape<T>& tp) {
      const Shape xs2 = tp.shape(x);
      const T* gp = tp.grad(out).data();
      T* dx = tp.grad_buf(x).data();
      parallel_for(xs2[0], [&](int n) {
        for (int c = 0; c < xs2[1]; ++c)
          for (int h = 0; h < xs2[2]; ++h) {
            T* drow = dx + ((static_cast<std::int64_t>(n) * xs2[1] + c) * xs2[2] + h) * xs2[3];
            const T* grow = gp + n * os_n + c * os_c + h * os_h;
            if (os_w == 0) {
              const T gv = grow[0] * inv;
              for (int w = 0; w < xs2[3]; ++w) drow[w] += gv;
            } else {
              for (int w = 0; w < xs2[3]; ++w) drow[w] += grow[w] * inv;
            }
          }
      });
    });
  }
  return out;
}

template <typename T>
Value sum_all(Tape<T>& t, Value x) {
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape::scalar(), ng);
  double acc = 0;
  for (T v : t.val(x).data) acc += static_cast<double>(v);
  t.mut(out).data[0] = static_cast<T>(acc);
  if (ng) {
    t.record(out, [x, out](Tape<T>& tp) {
      const T g = tp.grad(out)[0];
      auto& dx = tp.grad_buf(x);
      for (auto& v : dx) v += g;
    });
  }
  return out;
}

// ----------------------------------------------------------------- dense ---

// Affine map over the trailing axis: y[..., m] = w[m,n] . x[..., n] + b[m].
template <typename T>
Value dense(Tape<T>& t, Value x, Value w, Value b) {
  const Shape xs = t.shape(x), ws = t.shape(w), bs = t.shape(b);
  contract(ws.rank() == 2 && bs.rank() == 1, "dense: w must be rank 2 and b rank 1");
  contract(xs.rank() >= 1, "dense: x must have at least one axis");
  const int n = ws[1], m = ws[0];
  contract(xs[xs.rank() - 1] == n, "dense: trailing extent of x must equal n");
  contract(bs[0] == m, "dense: bias length must equal m");
  const std::int64_t rows = xs.numel() / n;

  Shape os;
  {
    int dims[4] = {1, 1, 1, 1};
    for (int i = 0; i < xs.rank(); ++i) dims[i] = xs[i];
    dims[xs.rank() - 1] = m;
    switch (xs.rank()) {
      case 1: os = Shape{dims[0]}; break;
      case 2: os = Shape{dims[0], dims[1]}; break;
      case 3: os = Shape{dims[0], dims[1], dims[2]}; break;
      default: os = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
    }
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Value out = t.make_node(os, ng);
  detail::ConstMatMap<T> xm(t.val(x).data.data(), rows, n);
  detail::ConstMatMap<T> wm(t.val(w).data.data(), m, n);
  detail::MatMap<T> ym(t.mut(out).data.data(), rows, m);
  ym.noalias() = xm * wm.transpose();
  const auto& bv = t.val(b).data;
  for (std::int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < m; ++j) ym(r, j) += bv[static_cast<std::size_t>(j)];

  if (ng) {
    t.record(out, [x, w, b, out, rows, n, m](Tape<T>& tp) {
      detail::ConstMatMap<T> gm(tp.grad(out).data(), rows, m);
      if (tp.needs_grad(x)) {
        detail::ConstMatMap<T> wm2(tp.val(w).data.data(), m, n);
        detail::MatMap<T> dxm(tp.grad_buf(x).data(), rows, n);
        dxm.noalias() += gm * wm2;
      }
      if (tp.needs_grad(w)) {
        detail::ConstMatMap<T> xm2(tp.val(x).data.data(), rows, n);
        detail::MatMap<T> dwm(tp.grad_buf(w).data(), m, n);
        dwm.noalias() += gm.transpose() * xm2;
      }
      if (tp.needs_grad(b)) {
        auto& db = tp.grad_buf(b);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < m; ++j) db[static_cast<std::size_t>(j)] += gm(r, j);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------- pixel shuffle ---

// out[n, c, h*r+i, w*r+j] = in[n, c*r^2 + i*r + j, h, w]. Exact permutation;
// backward applies the inverse index map.
template <typename T>
Value pixel_shuffle(Tape<T>& t, Value x, int r) {
  const Shape xs = t.shape(x);
  contract(xs.rank() == 4, "pixel_shuffle: input must be rank 4");
  contract(r >= 1, "pixel_shuffle: r must be >= 1");
  contract(xs[1] % (r * r) == 0, "pixel_shuffle: channels must be divisible by r^2");
  const int C = xs[1] / (r * r), H = xs[2], W = xs[3];
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape{xs[0], C, H * r, W * r}, ng);
  const T* xp = t.val(x).data.data();
  T* op = t.mut(out).data.data();
  const std::int64_t in_plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t out_plane = in_plane * r * r;
  parallel_for(xs[0], [&](int n) {
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const T* src = xp + (static_cast<std::int64_t>(n) * xs[1] + c * r * r + i * r + j) * in_plane;
          T* dst = op + (static_cast<std::int64_t>(n) * C + c) * out_plane;
          for (int h = 0; h < H; ++h) {
            const T* srow = src + static_cast<std::int64_t>(h) * W;
            T* drow = dst + (static_cast<std::int64_t>(h) * r + i) * (W * r) + j;
            for (int w = 0; w < W; ++w) drow[static_cast<std::int64_t>(w) * r] = srow[w];
          }
        }
  });
  if (ng) {
    t.record(out, [x, out, r, C, H, W, in_plane, out_plane](Tape<T>& tp) {
      const T* gp = tp.grad(out).data();
      T* dx = tp.grad_buf(x).data();
      const int N = tp.shape(x)[0];
      const int Cin = tp.shape(x)[1];
      parallel_for(N, [&](int n) {
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) {
              T* dd = dx + (static_cast<std::int64_t>(n) * Cin + c * r * r + i * r + j) * in_plane;
              const T* gg = gp + (static_cast<std::int64_t>(n) * C + c) * out_plane;
              for (int h = 0; h < H; ++h) {
                T* drow = dd + static_cast<std::int64_t>(h) * W;
                const T* grow = gg + (static_cast<std::int64_t>(h) * r + i) * (W * r) + j;
                for (int w = 0; w < W; ++w) drow[w] += grow[static_cast<std::int64_t>(w) * r];
              }
            }
      });
    });
  }
  return out;
}

// --------------------------------------------------------------- reshape ---

template <typename T>
Value reshape(Tape<T>& t, Value x, const Shape& s) {
  contract(s.numel() == t.shape(x).numel(), "reshape: element count must be preserved");
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(s, ng);
  t.mut(out).data = t.val(x).data;
  if (ng) {
    t.record(out, [x, out](Tape<T>& tp) {
      const auto& g = tp.grad(out);
      auto& dx = tp.grad_buf(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

// Top-left spatial crop to (h, w).
template <typename T>
Value crop_spatial(Tape<T>& t, Value x, int h, int w) {
  const Shape xs = t.shape(x);
  contract(xs.rank() == 4 && h >= 1 && w >= 1 && h <= xs[2] && w <= xs[3],
           "crop_spatial: target extents out of range");
  if (h == xs[2] && w == xs[3]) return x;
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape{xs[0], xs[1], h, w}, ng);
  const T* xp = t.val(x).data.data();
  T* op = t.mut(out).data.data();
  const std::int64_t planes = static_cast<std::int64_t>(xs[0]) * xs[1];
  const std::int64_t in_plane = static_cast<std::int64_t>(xs[2]) * xs[3];
  const std::int64_t out_plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < h; ++i)
      std::copy(xp + p * in_plane + static_cast<std::int64_t>(i) * xs[3],
                xp + p * in_plane + static_cast<std::int64_t>(i) * xs[3] + w,
                op + p * out_plane + static_cast<std::int64_t>(i) * w);
  if (ng) {
    t.record(out, [x, out, h, w, planes, in_plane, out_plane](Tape<T>& tp) {
      const Shape xs2 = tp.shape(x);
      const T* gp = tp.grad(out).data();
      T* dx = tp.grad_buf(x).data();
      for (std::int64_t p = 0; p < planes; ++p)
        for (int i = 0; i < h; ++i) {
          T* drow = dx + p * in_plane + static_cast<std::int64_t>(i) * xs2[3];
          const T* grow = gp + p * out_plane + static_cast<std::int64_t>(i) * w;
          for (int j = 0; j < w; ++j) drow[j] += grow[j];
        }
    });
  }
  return out;
}

// ------------------------------------------------------------- cut/splice ---

namespace detail {
// Symmetric (edge-inclusive) reflection for indices in [0, padded_extent).
inline int mirror_index(int i, int extent) {
  if (i < extent) return i;
  const int t = i - extent;
  const int m = extent - 1 - t;
  return m < 0 ? 0 : m;
}
}  // namespace detail

// Cuts spatial extent into an n x n grid of cells and stacks the cells along
// the channel axis in row-major cell order. Extents not divisible by n are
// symmetric-padded up front; csb_splice undoes both steps bit-exactly.
template <typename T>
Value csb_cut(Tape<T>& t, Value x, int cells) {
  const Shape xs = t.shape(x);
  contract(xs.rank() == 4 && cells >= 1, "csb_cut: rank-4 input, cells >= 1");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Hp = (H + cells - 1) / cells * cells;
  const int Wp = (W + cells - 1) / cells * cells;
  const int Hc = Hp / cells, Wc = Wp / cells;
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape{N, cells * cells * C, Hc, Wc}, ng);
  // precomputed source maps for the padded grid
  std::vector<int> hmap(static_cast<std::size_t>(Hp)), wmap(static_cast<std::size_t>(Wp));
  for (int i = 0; i < Hp; ++i) hmap[static_cast<std::size_t>(i)] = detail::mirror_index(i, H);
  for (int j = 0; j < Wp; ++j) wmap[static_cast<std::size_t>(j)] = detail::mirror_index(j, W);

  const T* xp = t.val(x).data.data();
  T* op = t.mut(out).data.data();
  const std::int64_t in_plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t cell_plane = static_cast<std::int64_t>(Hc) * Wc;
  const int Q = cells * cells;
  parallel_for(N, [&](int n) {
    for (int q = 0; q < Q; ++q) {
      const int ci = q / cells, cj = q % cells;
      for (int c = 0; c < C; ++c) {
        const T* src = xp + (static_cast<std::int64_t>(n) * C + c) * in_plane;
        T* dst = op + (static_cast<std::int64_t>(n) * Q * C + q * C + c) * cell_plane;
        for (int y = 0; y < Hc; ++y) {
          const T* srow = src + static_cast<std::int64_t>(hmap[static_cast<std::size_t>(ci * Hc + y)]) * W;
          T* drow = dst + static_cast<std::int64_t>(y) * Wc;
          const int base = cj * Wc;
          if (base + Wc <= W) {
            std::copy(srow + base, srow + base + Wc, drow);
          } else {
            for (int z = 0; z < Wc; ++z) drow[z] = srow[wmap[static_cast<std::size_t>(base + z)]];
          }
        }
      }
    }
  });
  if (ng) {
    t.record(out, [x, out, cells, C, H, W, Hc, Wc, hmap, wmap, in_plane, cell_plane,
                   Q](Tape<T>& tp) {
      const T* gp = tp.grad(out).data();
      T* dx = tp.grad_buf(x).data();
      const int N2 = tp.shape(x)[0];
      // scatter-add through the same index map; sequential per sample, the
      // padded copies fold onto their mirror sources
      parallel_for(N2, [&](int n) {
        for (int q = 0; q < Q; ++q) {
          const int ci = q / cells, cj = q % cells;
          for (int c = 0; c < C; ++c) {
            T* dst = dx + (static_cast<std::int64_t>(n) * C + c) * in_plane;
            const T* src = gp + (static_cast<std::int64_t>(n) * Q * C + q * C + c) * cell_plane;
            for (int y = 0; y < Hc; ++y) {
              T* drow = dst + static_cast<std::int64_t>(hmap[static_cast<std::size_t>(ci * Hc + y)]) * W;
              const T* srow = src + static_cast<std::int64_t>(y) * Wc;
              const int base = cj * Wc;
              for (int z = 0; z < Wc; ++z) drow[wmap[static_cast<std::size_t>(base + z)]] += srow[z];
            }
          }
        }
      });
    });
  }
  return out;
}

// Inverse of csb_cut for the original spatial extents (h, w).
template <typename T>
Value csb_splice(Tape<T>& t, Value x, int cells, int h, int w) {
  const Shape xs = t.shape(x);
  contract(xs.rank() == 4 && xs[1] % (cells * cells) == 0,
           "csb_splice: channels must hold cells^2 slices");
  const int C = xs[1] / (cells * cells);
  const int Hc = xs[2], Wc = xs[3];
  contract(Hc * cells >= h && Wc * cells >= w && Hc * cells - h < cells && Wc * cells - w < cells,
           "csb_splice: cell extents disagree with target extents");
  const int N = xs[0];
  const bool ng = t.needs_grad(x);
  Value out = t.make_node(Shape{N, C, h, w}, ng);
  const T* xp = t.val(x).data.data();
  T* op = t.mut(out).data.data();
  const std::int64_t cell_plane = static_cast<std::int64_t>(Hc) * Wc;
  const std::int64_t out_plane = static_cast<std::int64_t>(h) * w;
  const int Q = cells * cells;
  parallel_for(N, [&](int n) {
    for (int c = 0; c < C; ++c) {
      T* dst = op + (static_cast<std::int64_t>(n) * C + c) * out_plane;
      for (int i = 0; i < h; ++i) {
        const int ci = i / Hc, y = i % Hc;
        T* drow = dst + static_cast<std::int64_t>(i) * w;
        for (int cj = 0; cj * Wc < w; ++cj) {
          const int z0 = cj * Wc;
          const int zn = std::min(Wc, w - z0);
          const T* srow = xp +
                          (static_cast<std::int64_t>(n) * Q * C + (ci * cells + cj) * C + c) *
                              cell_plane +
                          static_cast<std::int64_t>(y) * Wc;
          std::copy(srow, srow + zn, drow + z0);
        }
      }
    }
  });
  if (ng) {
    t.record(out, [x, out, cells, C, Hc, Wc, h, w, cell_plane, out_plane, Q](Tape<T>& tp) {
      const T* gp = tp.grad(out).data();
      T* dx = tp.grad_buf(x).data();
      const int N2 = tp.shape(x)[0];
      parallel_for(N2, [&](int n) {
        for (int c = 0; c < C; ++c) {
          const T* grad_plane = gp + (static_cast<std::int64_t>(n) * C + c) * out_plane;
          for (int i = 0; i < h; ++i) {
            const int ci = i / Hc, y = i % Hc;
            const T* grow = grad_plane + static_cast<std::int64_t>(i) * w;
            for (int cj = 0; cj * Wc < w; ++cj) {
              const int z0 = cj * Wc;
              const int zn = std::min(Wc, w - z0);
              T* drow = dx +
                        (static_cast<std::int64_t>(n) * Q * C + (ci * cells + cj) * C + c) *
                            cell_plane +
                        static_cast<std::int64_t>(y) * Wc;
              for (int z = 0; z < zn; ++z) drow[z] += grow[z0 + z];
            }
          }
        }
      });
    });
  }
  return out;
}

// ------------------------------------------------------------------ loss ---

// Mean absolute error; subgradient at 0 is 0.
template <typename T>
Value mae_loss(Tape<T>& t, Value pred, Value target) {
  contract(t.shape(pred) == t.shape(target), "mae_loss: shapes must match");
  const bool ng = t.needs_grad(pred) || t.needs_grad(target);
  Value out = t.make_node(Shape::scalar(), ng);
  const auto& pv = t.val(pred).data;
  const auto& tv = t.val(target).data;
  const bool track = kinksig::state().active;
  double acc = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    if (track) kinksig::note(d > 0);
    acc += std::abs(d);
  }
  t.mut(out).data[0] = static_cast<T>(acc / static_cast<double>(pv.size()));
  if (ng) {
    t.record(out, [pred, target, out](Tape<T>& tp) {
      const T g = tp.grad(out)[0];
      const auto& pv2 = tp.val(pred).data;
      const auto& tv2 = tp.val(target).data;
      const T inv = static_cast<T>(1.0 / static_cast<double>(pv2.size()));
      const bool gp = tp.needs_grad(pred), gt = tp.needs_grad(target);
      auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
      if (gp) {
        auto& dp = tp.grad_buf(pred);
        for (std::size_t i = 0; i < pv2.size(); ++i) dp[i] += g * inv * sign(pv2[i] - tv2[i]);
      }
      if (gt) {
        auto& dt = tp.grad_buf(target);
        for (std::size_t i = 0; i < pv2.size(); ++i) dt[i] -= g * inv * sign(pv2[i] - tv2[i]);
      }
    });
  }
  return out;
}

}  // namespace tsan
