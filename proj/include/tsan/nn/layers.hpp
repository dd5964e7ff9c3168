#pragma once

#include <cmath>
#include <string>

#include "tsan/core/ops.hpp"
#include "tsan/core/rng.hpp"
#include "tsan/nn/parameter.hpp"

namespace tsan {

// Static description of a parameterized layer.
struct LayerSpec {
  enum Kind { kConv, kDense } kind = kConv;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 1;    // conv only, one of {1,3,7}
  int dilation = 1;  // > 1 only for kernel 3
  int groups = 1;

  void validate() const {
    contract(in_ch > 0 && out_ch > 0, "LayerSpec: channels must be positive");
    if (kind == kConv) {
      contract(kernel == 1 || kernel == 3 || kernel == 7, "LayerSpec: kernel must be in {1,3,7}");
      contract(dilation >= 1, "LayerSpec: dilation must be >= 1");
      contract(dilation == 1 || kernel == 3, "LayerSpec: dilation > 1 only for kernel 3");
      contract(in_ch % groups == 0 && out_ch % groups == 0, "LayerSpec: groups must divide channels");
    }
  }
};

// Uniform Kaiming fan-in init: weights in +-sqrt(6/fan_in), bias zero.
// fan_in = (in_ch/groups) * k^2 for conv, in_ch for dense. Same seed gives a
// bit-identical draw sequence.
template <typename T>
void init_uniform_fanin(Tensor<T>& w, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Spatial-extent-preserving padding: 3x3 convs pad by their dilation, 1x1 by
// zero, kxk generally by dilation*(k-1)/2.
inline int preserve_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

template <typename T>
struct Conv2dLayer {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  LayerSpec spec;
  int padding = 0;

  Value operator()(Tape<T>& t, Value x) const {
    return conv2d(t, x, w->use(t), b->use(t), spec.dilation, padding, spec.groups);
  }

  std::int64_t param_count() const { return w->numel() + b->numel(); }

  // Multiply-accumulate count on an input of spatial extent h x w (output
  // extents are identical under the preserve-padding policy).
  std::int64_t macs(int h, int w_) const {
    return static_cast<std::int64_t>(spec.out_ch) * (spec.in_ch / spec.groups) * spec.kernel *
           spec.kernel * h * w_;
  }
};

template <typename T>
Conv2dLayer<T> make_conv(ParamStore<T>& store, const std::string& name, int in_ch, int out_ch,
                         int kernel, int dilation, Rng& rng, int groups = 1) {
  LayerSpec spec{LayerSpec::kConv, in_ch, out_ch, kernel, dilation, groups};
  spec.validate();
  Conv2dLayer<T> layer;
  layer.spec = spec;
  layer.padding = preserve_padding(kernel, dilation);
  layer.w = store.add(name + ".weight", Shape{out_ch, in_ch / groups, kernel, kernel});
  layer.b = store.add(name + ".bias", Shape{out_ch});
  init_uniform_fanin(layer.w->value, static_cast<std::int64_t>(in_ch / groups) * kernel * kernel,
                     rng);
  return layer;
}

// Single-channel length-preserving 1-D conv (kernel 3) along H or W.
template <typename T>
struct Conv1dLayer {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  bool along_h = true;

  Value operator()(Tape<T>& t, Value x) const {
    return conv1d_axis(t, x, w->use(t), b->use(t), along_h);
  }
  std::int64_t param_count() const { return w->numel() + b->numel(); }
};

template <typename T>
Conv1dLayer<T> make_conv1d(ParamStore<T>& store, const std::string& name, bool along_h, Rng& rng) {
  Conv1dLayer<T> layer;
  layer.along_h = along_h;
  layer.w = store.add(name + ".weight", along_h ? Shape{1, 1, 3, 1} : Shape{1, 1, 1, 3});
  layer.b = store.add(name + ".bias", Shape{1});
  init_uniform_fanin(layer.w->value, 3, rng);
  return layer;
}

template <typename T>
struct DenseLayer {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  Value operator()(Tape<T>& t, Value x) const { return dense(t, x, w->use(t), b->use(t)); }
  std::int64_t param_count() const { return w->numel() + b->numel(); }
  std::int64_t macs_per_row() const { return w->numel(); }
};

template <typename T>
DenseLayer<T> make_dense(ParamStore<T>& store, const std::string& name, int in_dim, int out_dim,
                         Rng& rng) {
  DenseLayer<T> layer;
  layer.w = store.add(name + ".weight", Shape{out_dim, in_dim});
  layer.b = store.add(name + ".bias", Shape{out_dim});
  init_uniform_fanin(layer.w->value, in_dim, rng);
  return layer;
}

// Learned scalar affine a*x + b applied elementwise (the single-channel 1x1
// conv of the pooled-map attention gates).
template <typename T>
struct ScalarAffine {
  Parameter<T>* a = nullptr;
  Parameter<T>* b = nullptr;

  Value operator()(Tape<T>& t, Value x) const {
    return add(t, mul(t, x, a->use(t)), b->use(t));
  }
  std::int64_t param_count() const { return 2; }
};

template <typename T>
ScalarAffine<T> make_scalar_affine(ParamStore<T>& store, const std::string& name, Rng& rng) {
  ScalarAffine<T> layer;
  layer.a = store.add(name + ".scale", Shape{1, 1, 1, 1});
  layer.b = store.add(name + ".shift", Shape{1, 1, 1, 1});
  init_uniform_fanin(layer.a->value, 1, rng);
  return layer;
}

}  // namespace tsan
