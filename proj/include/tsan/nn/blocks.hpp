#pragma once

#include <string>
#include <vector>

#include "tsan/nn/layers.hpp"

namespace tsan {

enum class BlockStyle { kDrb, kCascaded, kParallel };

inline const char* block_style_name(BlockStyle s) {
  switch (s) {
    case BlockStyle::kDrb: return "drb";
    case BlockStyle::kCascaded: return "cascaded";
    case BlockStyle::kParallel: return "parallel";
  }
  return "?";
}

// Per-block hyperparameters shared by every attention/context unit.
struct BlockConfig {
  int channels = 64;
  int csb_cells = 2;      // n
  int mlp_reduction = 4;  // r
  BlockStyle style = BlockStyle::kDrb;
  bool use_csb = true;
  bool use_triplet1 = true;
  bool use_triplet2 = true;
  bool t1_hw_only = false;
  bool t2_hw_only = false;

  void validate() const {
    contract(channels > 0 && channels % mlp_reduction == 0,
             "BlockConfig: channels must be divisible by mlp_reduction");
    contract(csb_cells >= 1, "BlockConfig: csb_cells must be >= 1");
  }
};

// --------------------------------------------------------------------------
// Context block: a 1x1 reduce, four dilated 3x3 convs arranged per style,
// four-tap concat, 1x1 fusion and a residual add. The three styles hold
// identical parameter shapes, so their counts match by construction.
//   drb:      two weight-independent branches tapped at depths 1 and 2
//   cascaded: one chain of four convs tapped at every depth
//   parallel: four independent convs over the same input
template <typename T>
struct ContextBlock {
  Conv2dLayer<T> reduce;
  Conv2dLayer<T> conv[4];
  Conv2dLayer<T> fuse;
  BlockStyle style = BlockStyle::kDrb;
  int dilation = 1;

  Value operator()(Tape<T>& t, Value x) const {
    Value f = reduce(t, x);
    Value taps[4];
    switch (style) {
      case BlockStyle::kDrb: {
        // tap order: branch-A depth-1, branch-B depth-1, branch-A depth-2,
        // branch-B depth-2
        Value a1 = conv[0](t, f);
        Value b1 = conv[1](t, f);
        taps[0] = a1;
        taps[1] = b1;
        taps[2] = conv[2](t, a1);
        taps[3] = conv[3](t, b1);
        break;
      }
      case BlockStyle::kCascaded: {
        Value cur = f;
        for (int i = 0; i < 4; ++i) {
          cur = conv[i](t, cur);
          taps[i] = cur;
        }
        break;
      }
      case BlockStyle::kParallel: {
        for (int i = 0; i < 4; ++i) taps[i] = conv[i](t, f);
        break;
      }
    }
    Value cat = concat(t, {taps[0], taps[1], taps[2], taps[3]});
    return add(t, x, fuse(t, cat));
  }

  std::int64_t param_count() const {
    std::int64_t n = reduce.param_count() + fuse.param_count();
    for (int i = 0; i < 4; ++i) n += conv[i].param_count();
    return n;
  }
};

template <typename T>
ContextBlock<T> make_context_block(ParamStore<T>& store, const std::string& name, int channels,
                                   int dilation, BlockStyle style, Rng& rng) {
  ContextBlock<T> blk;
  blk.style = style;
  blk.dilation = dilation;
  blk.reduce = make_conv(store, name + ".reduce", channels, channels, 1, 1, rng);
  for (int i = 0; i < 4; ++i)
    blk.conv[i] = make_conv(store, name + ".conv." + std::to_string(i), channels, channels, 3,
                            dilation, rng);
  blk.fuse = make_conv(store, name + ".fuse", 4 * channels, channels, 1, 1, rng);
  return blk;
}

// --------------------------------------------------------------------------
// Cutting-splicing block: n x n spatial cells stacked on the channel axis,
// one grouped 3x3 conv over the stack, inverse splice. Extents not divisible
// by n are symmetric-padded inside csb_cut and cropped by csb_splice.
template <typename T>
struct CsbBlock {
  Conv2dLayer<T> conv;
  int cells = 2;

  Value operator()(Tape<T>& t, Value x) const {
    const Shape s = t.shape(x);
    Value cut = csb_cut(t, x, cells);
    Value mixed = conv(t, cut);
    return csb_splice(t, mixed, cells, s[2], s[3]);
  }
  std::int64_t param_count() const { return conv.param_count(); }
};

template <typename T>
CsbBlock<T> make_csb(ParamStore<T>& store, const std::string& name, int channels, int cells,
                     Rng& rng) {
  CsbBlock<T> blk;
  blk.cells = cells;
  const int stacked = cells * cells * channels;
  blk.conv = make_conv(store, name + ".conv", stacked, stacked, 3, 1, rng, cells * cells);
  return blk;
}

// --------------------------------------------------------------------------
// 1st-order attention triplet: three pooled-descriptor gates, each broadcast
// multiplied with x, then summed with x.
//   channel gate: mean over (H,W) -> MLP C -> C/r -> C -> sigmoid
//   row gate:     mean over (C,W) -> 1-D conv along H -> sigmoid
//   column gate:  mean over (C,H) -> 1-D conv along W -> sigmoid
// The hw_only ablation keeps just the channel gate.
template <typename T>
struct Triplet1 {
  DenseLayer<T> mlp0, mlp1;
  Conv1dLayer<T> row, col;
  bool hw_only = false;

  Value operator()(Tape<T>& t, Value x) const {
    const Shape s = t.shape(x);
    Value desc = mean_over_axes(t, x, kMeanH | kMeanW);
    Value flat = reshape(t, desc, Shape{s[0], s[1]});
    Value hidden = relu(t, mlp0(t, flat));
    Value gate_c = reshape(t, sigmoid(t, mlp1(t, hidden)), Shape{s[0], s[1], 1, 1});
    Value out = add(t, mul(t, x, gate_c), x);
    if (!hw_only) {
      Value gate_r = sigmoid(t, row(t, mean_over_axes(t, x, kMeanC | kMeanW)));
      out = add(t, out, mul(t, x, gate_r));
      Value gate_w = sigmoid(t, col(t, mean_over_axes(t, x, kMeanC | kMeanH)));
      out = add(t, out, mul(t, x, gate_w));
    }
    return out;
  }

  std::int64_t param_count() const {
    return mlp0.param_count() + mlp1.param_count() + row.param_count() + col.param_count();
  }
};

template <typename T>
Triplet1<T> make_triplet1(ParamStore<T>& store, const std::string& name, int channels,
                          int reduction, bool hw_only, Rng& rng) {
  Triplet1<T> blk;
  blk.hw_only = hw_only;
  blk.mlp0 = make_dense(store, name + ".mlp.0", channels, channels / reduction, rng);
  blk.mlp1 = make_dense(store, name + ".mlp.1", channels / reduction, channels, rng);
  blk.row = make_conv1d(store, name + ".row", true, rng);
  blk.col = make_conv1d(store, name + ".col", false, rng);
  return blk;
}

// --------------------------------------------------------------------------
// 2nd-order attention triplet: axis-pooled maps gated by a learned scalar
// affine + sigmoid, broadcast back over the pooled axis.
//   hw: mean over C -> (N,1,H,W);  ch: mean over W -> (N,C,H,1);
//   cw: mean over H -> (N,C,1,W)
template <typename T>
struct Triplet2 {
  ScalarAffine<T> hw, ch, cw;
  bool hw_only = false;

  Value operator()(Tape<T>& t, Value x) const {
    Value map_hw = sigmoid(t, hw(t, mean_over_axes(t, x, kMeanC)));
    Value out = add(t, mul(t, x, map_hw), x);
    if (!hw_only) {
      Value map_ch = sigmoid(t, ch(t, mean_over_axes(t, x, kMeanW)));
      out = add(t, out, mul(t, x, map_ch));
      Value map_cw = sigmoid(t, cw(t, mean_over_axes(t, x, kMeanH)));
      out = add(t, out, mul(t, x, map_cw));
    }
    return out;
  }

  std::int64_t param_count() const {
    return hw.param_count() + ch.param_count() + cw.param_count();
  }
};

template <typename T>
Triplet2<T> make_triplet2(ParamStore<T>& store, const std::string& name, bool hw_only, Rng& rng) {
  Triplet2<T> blk;
  blk.hw_only = hw_only;
  blk.hw = make_scalar_affine(store, name + ".hw", rng);
  blk.ch = make_scalar_affine(store, name + ".ch", rng);
  blk.cw = make_scalar_affine(store, name + ".cw", rng);
  return blk;
}

// --------------------------------------------------------------------------
// Multi-context attentive block.
// Contextual branch: densely connected context blocks; block k >= 2 reads a
// 1x1 compression of [x, F'_1..F'_{k-1}], and the branch output fuses
// [x, F'_1..F'_e]. Attention branch: CSB -> triplet1 -> triplet2 on the MCAB
// input, then a 3x3 conv + sigmoid gate over the contextual features,
// residual add of x.
template <typename T>
struct Mcab {
  std::vector<ContextBlock<T>> drbs;
  std::vector<Conv2dLayer<T>> compress;
  Conv2dLayer<T> ctx_fuse;
  CsbBlock<T> csb;
  Triplet1<T> t1;
  Triplet2<T> t2;
  Conv2dLayer<T> gate;
  BlockConfig cfg;

  Value operator()(Tape<T>& t, Value x) const {
    std::vector<Value> feats{x};
    for (std::size_t k = 0; k < drbs.size(); ++k) {
      Value in = (k == 0) ? x : compress[k - 1](t, concat(t, feats));
      feats.push_back(drbs[k](t, in));
    }
    Value fc = ctx_fuse(t, concat(t, feats));

    Value a = x;
    if (cfg.use_csb) a = csb(t, a);
    if (cfg.use_triplet1) a = t1(t, a);
    if (cfg.use_triplet2) a = t2(t, a);
    Value g = sigmoid(t, gate(t, a));
    return add(t, mul(t, fc, g), x);
  }

  std::int64_t param_count() const {
    std::int64_t n = ctx_fuse.param_count() + gate.param_count();
    for (const auto& d : drbs) n += d.param_count();
    for (const auto& c : compress) n += c.param_count();
    if (cfg.use_csb) n += csb.param_count();
    if (cfg.use_triplet1) n += t1.param_count();
    if (cfg.use_triplet2) n += t2.param_count();
    return n;
  }
};

template <typename T>
Mcab<T> make_mcab(ParamStore<T>& store, const std::string& name, const BlockConfig& cfg,
                  const std::vector<int>& dilation_schedule, Rng& rng) {
  cfg.validate();
  contract(!dilation_schedule.empty(), "Mcab: dilation schedule must be nonempty");
  Mcab<T> blk;
  blk.cfg = cfg;
  const int C = cfg.channels;
  const int e = static_cast<int>(dilation_schedule.size());
  for (int k = 0; k < e; ++k)
    blk.drbs.push_back(make_context_block(store, name + ".drb." + std::to_string(k), C,
                                          dilation_schedule[static_cast<std::size_t>(k)], cfg.style,
                                          rng));
  for (int k = 1; k < e; ++k)
    blk.compress.push_back(make_conv(store, name + ".compress." + std::to_string(k - 1),
                                     (k + 1) * C, C, 1, 1, rng));
  blk.ctx_fuse = make_conv(store, name + ".ctx_fuse", (e + 1) * C, C, 1, 1, rng);
  if (cfg.use_csb) blk.csb = make_csb(store, name + ".csb", C, cfg.csb_cells, rng);
  if (cfg.use_triplet1)
    blk.t1 = make_triplet1(store, name + ".t1", C, cfg.mlp_reduction, cfg.t1_hw_only, rng);
  if (cfg.use_triplet2) blk.t2 = make_triplet2(store, name + ".t2", cfg.t2_hw_only, rng);
  blk.gate = make_conv(store, name + ".gate", C, C, 3, 1, rng);
  return blk;
}

// --------------------------------------------------------------------------
// Refined attention block: y * sigmoid(C1x1(ReLU(C3x3(y)))) + y, hidden
// width 64. Channel count is 3 in HR image space, 64 when the block is moved
// in front of the upsampler.
template <typename T>
struct Rab {
  Conv2dLayer<T> conv1;
  Conv2dLayer<T> conv2;

  Value operator()(Tape<T>& t, Value y) const {
    Value g = sigmoid(t, conv2(t, relu(t, conv1(t, y))));
    return add(t, mul(t, y, g), y);
  }
  std::int64_t param_count() const { return conv1.param_count() + conv2.param_count(); }
};

template <typename T>
Rab<T> make_rab(ParamStore<T>& store, const std::string& name, int channels, int hidden, Rng& rng) {
  Rab<T> blk;
  blk.conv1 = make_conv(store, name + ".conv1", channels, hidden, 3, 1, rng);
  blk.conv2 = make_conv(store, name + ".conv2", hidden, channels, 1, 1, rng);
  return blk;
}

}  // namespace tsan
