#pragma once

// Static analyzer: closed-form parameter, MAC and receptive-field figures
// derived from a ModelConfig alone. Deliberately independent of the runtime
// layer registry so the two routes cross-check each other.
//
// Counting convention (documented so the reported totals are interpretable):
//   - one multiply-accumulate = 1 FLOP (the convention SR papers use when
//     quoting "FLOPs"); bias adds and elementwise ops (ReLU, sigmoid,
//     residual adds, gate multiplies, pooling) add 1 FLOP per element.
//   - totals are reported both including and excluding the HR stage (the
//     layers operating at scale x resolution).

#include <cstdint>
#include <string>
#include <vector>

#include "tsan/nn/model.hpp"

namespace tsan {

struct AnalyzerRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;      // conv/dense multiply-accumulates
  std::int64_t bias = 0;      // bias adds
  bool hr_stage = false;
};

struct ReceptiveFieldRow {
  std::string style;
  int dilation = 1;
  int per_block = 0;   // taps after one context block
  int chain = 0;       // after the whole per-MCAB chain under the schedule
};

struct AnalysisReport {
  std::vector<AnalyzerRow> rows;
  std::int64_t elementwise = 0;  // non-MAC op count (activations, adds, muls, pooling)
  std::vector<ReceptiveFieldRow> receptive;

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& r : rows) n += r.params;
    return n;
  }
  std::int64_t total_macs(bool include_hr = true) const {
    std::int64_t n = 0;
    for (const auto& r : rows)
      if (include_hr || !r.hr_stage) n += r.macs;
    return n;
  }
  std::int64_t total_bias(bool include_hr = true) const {
    std::int64_t n = 0;
    for (const auto& r : rows)
      if (include_hr || !r.hr_stage) n += r.bias;
    return n;
  }
  std::int64_t total_flops(bool include_hr = true) const {
    return total_macs(include_hr) + total_bias(include_hr) + elementwise;
  }
};

namespace detail {

inline std::int64_t conv_params(int cin, int cout, int k, int groups = 1) {
  return static_cast<std::int64_t>(cout) * (cin / groups) * k * k + cout;
}
inline std::int64_t conv_macs(int cin, int cout, int k, std::int64_t pixels, int groups = 1) {
  return static_cast<std::int64_t>(cout) * (cin / groups) * k * k * pixels;
}

}  // namespace detail

// Receptive-field growth of one conv: rf += (k-1)*dilation.
inline int rf_after_context_block(BlockStyle style, int dilation) {
  switch (style) {
    case BlockStyle::kDrb: return 1 + 2 * 2 * dilation;       // two stacked 3x3 per branch
    case BlockStyle::kCascaded: return 1 + 4 * 2 * dilation;  // four stacked 3x3
    case BlockStyle::kParallel: return 1 + 2 * dilation;      // single 3x3
  }
  return 1;
}

inline AnalysisReport analyze_model(const ModelConfig& cfg, int in_h, int in_w) {
  cfg.validate();
  AnalysisReport rep;
  const int C = cfg.channels;
  const int e = cfg.drbs_per_mcab();
  const int n = cfg.csb_cells;
  const std::int64_t P = static_cast<std::int64_t>(in_h) * in_w;
  const std::int64_t Pr = P * cfg.scale * cfg.scale;
  const std::int64_t Pc = static_cast<std::int64_t>((in_h + n - 1) / n) * ((in_w + n - 1) / n);

  auto conv = [&](const std::string& name, int cin, int cout, int k, std::int64_t pixels,
                  int groups = 1, bool hr = false) {
    rep.rows.push_back(AnalyzerRow{name, detail::conv_params(cin, cout, k, groups),
                                   detail::conv_macs(cin, cout, k, pixels, groups),
                                   static_cast<std::int64_t>(cout) * pixels, hr});
  };

  conv("shallow", 3, C, 1, P);
  rep.elementwise += C * P;  // ReLU of Eq. 1

  for (int d = 0; d < cfg.mcab_count; ++d) {
    const std::string base = "mcab." + std::to_string(d);
    for (int k = 0; k < e; ++k) {
      const std::string dn = base + ".drb." + std::to_string(k);
      conv(dn + ".reduce", C, C, 1, P);
      for (int i = 0; i < 4; ++i) conv(dn + ".conv." + std::to_string(i), C, C, 3, P);
      conv(dn + ".fuse", 4 * C, C, 1, P);
      rep.elementwise += C * P;  // residual add
    }
    for (int k = 1; k < e; ++k)
      conv(base + ".compress." + std::to_string(k - 1), (k + 1) * C, C, 1, P);
    conv(base + ".ctx_fuse", (e + 1) * C, C, 1, P);
    if (cfg.use_csb) {
      conv(base + ".csb.conv", n * n * C, n * n * C, 3, Pc, n * n);
      rep.elementwise += 0;  // cut/splice are permutations
    }
    if (cfg.use_triplet1) {
      const int red = C / cfg.mlp_reduction;
      rep.rows.push_back(AnalyzerRow{base + ".t1.mlp.0",
                                     static_cast<std::int64_t>(red) * C + red,
                                     static_cast<std::int64_t>(red) * C, red, false});
      rep.rows.push_back(AnalyzerRow{base + ".t1.mlp.1",
                                     static_cast<std::int64_t>(C) * red + C,
                                     static_cast<std::int64_t>(C) * red, C, false});
      rep.rows.push_back(AnalyzerRow{base + ".t1.row", 4, 3 * in_h, in_h, false});
      rep.rows.push_back(AnalyzerRow{base + ".t1.col", 4, 3 * in_w, in_w, false});
      const int branches = cfg.t1_hw_only ? 1 : 3;
      rep.elementwise += branches * (C * P /*pool*/ + C * P /*gate mul*/ + C * P /*sum*/);
      rep.elementwise += C * P;  // the +x term
      rep.elementwise += C + (cfg.t1_hw_only ? 0 : in_h + in_w);  // sigmoids + hidden relu
    }
    if (cfg.use_triplet2) {
      for (const char* b : {".t2.hw", ".t2.ch", ".t2.cw"})
        rep.rows.push_back(AnalyzerRow{base + b, 2, 0, 0, false});
      const int branches = cfg.t2_hw_only ? 1 : 3;
      rep.elementwise += branches * (C * P + C * P + C * P);
      rep.elementwise += C * P;
      rep.elementwise += P + (cfg.t2_hw_only ? 0 : (static_cast<std::int64_t>(C) * in_h +
                                                    static_cast<std::int64_t>(C) * in_w));
    }
    conv(base + ".gate", C, C, 3, P);
    rep.elementwise += C * P /*gate sigmoid*/ + C * P /*gate mul*/ + C * P /*residual*/;
  }

  conv("fusion", cfg.mcab_count * C, C, 1, P);
  rep.elementwise += C * P;  // fusion + shallow residual

  if (cfg.use_rab && cfg.rab_position == ModelConfig::kRabPreUpsample) {
    conv("rab.conv1", C, 64, 3, P);
    conv("rab.conv2", 64, C, 1, P);
    rep.elementwise += 64 * P /*relu*/ + C * P /*sigmoid*/ + 2 * C * P /*mul+add*/;
  }

  if (cfg.scale == 4) {
    conv("upsample.0", C, C * 4, 3, P);
    conv("upsample.1", C, C * 4, 3, P * 4);
  } else {
    conv("upsample.0", C, C * cfg.scale * cfg.scale, 3, P);
  }

  conv("head", C, 3, 1, Pr, 1, true);
  if (cfg.use_rab && cfg.rab_position == ModelConfig::kRabHr) {
    conv("rab.conv1", 3, 64, 3, Pr, 1, true);
    conv("rab.conv2", 64, 3, 1, Pr, 1, true);
    rep.elementwise += 64 * Pr + 3 * Pr + 2 * 3 * Pr;
  }

  // Receptive fields of the contextual chains under the dilation schedule.
  for (BlockStyle style : {BlockStyle::kDrb, BlockStyle::kCascaded, BlockStyle::kParallel}) {
    int chain = 1;
    for (int s : cfg.dilation_schedule) chain += rf_after_context_block(style, s) - 1;
    rep.receptive.push_back(ReceptiveFieldRow{block_style_name(style), cfg.dilation_schedule[0],
                                              rf_after_context_block(style, cfg.dilation_schedule[0]),
                                              chain});
  }
  return rep;
}

}  // namespace tsan
