#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsan/nn/blocks.hpp"

namespace tsan {

// Full hyperparameter record; one config expresses the default network and
// every ablation.
struct ModelConfig {
  int scale = 2;  // in {2,3,4}
  int mcab_count = 3;
  std::vector<int> dilation_schedule = {1, 2, 3, 3, 2, 1};
  int channels = 64;
  int csb_cells = 2;
  int mlp_reduction = 4;
  BlockStyle style = BlockStyle::kDrb;
  bool use_csb = true;
  bool use_triplet1 = true;
  bool use_triplet2 = true;
  bool t1_hw_only = false;
  bool t2_hw_only = false;
  bool use_rab = true;
  enum RabPosition { kRabHr, kRabPreUpsample } rab_position = kRabHr;
  double w1 = 1.0;
  double w2 = 1.0;
  std::array<float, 3> rgb_mean = {114.4f, 111.5f, 103.0f};
  std::string variant = "default";

  int drbs_per_mcab() const { return static_cast<int>(dilation_schedule.size()); }

  void validate() const {
    contract(scale == 2 || scale == 3 || scale == 4, "ModelConfig: scale must be 2, 3 or 4");
    contract(mcab_count >= 1, "ModelConfig: need at least one MCAB");
    contract(!dilation_schedule.empty(), "ModelConfig: empty dilation schedule");
    for (int s : dilation_schedule) contract(s >= 1, "ModelConfig: dilation must be >= 1");
    contract(w1 >= 0 && w2 >= 0, "ModelConfig: loss weights must be nonnegative");
    BlockConfig b = block_config();
    b.validate();
  }

  BlockConfig block_config() const {
    BlockConfig b;
    b.channels = channels;
    b.csb_cells = csb_cells;
    b.mlp_reduction = mlp_reduction;
    b.style = style;
    b.use_csb = use_csb;
    b.use_triplet1 = use_triplet1;
    b.use_triplet2 = use_triplet2;
    b.t1_hw_only = t1_hw_only;
    b.t2_hw_only = t2_hw_only;
    return b;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"scale", scale},
                          {"mcab_count", mcab_count},
                          {"dilation_schedule", dilation_schedule},
                          {"channels", channels},
                          {"csb_cells", csb_cells},
                          {"mlp_reduction", mlp_reduction},
                          {"style", block_style_name(style)},
                          {"use_csb", use_csb},
                          {"use_triplet1", use_triplet1},
                          {"use_triplet2", use_triplet2},
                          {"t1_hw_only", t1_hw_only},
                          {"t2_hw_only", t2_hw_only},
                          {"use_rab", use_rab},
                          {"rab_position", rab_position == kRabHr ? "hr" : "pre-upsample"},
                          {"w1", w1},
                          {"w2", w2},
                          {"rgb_mean", std::vector<float>(rgb_mean.begin(), rgb_mean.end())},
                          {"variant", variant}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.scale = j.at("scale").get<int>();
    c.mcab_count = j.at("mcab_count").get<int>();
    c.dilation_schedule = j.at("dilation_schedule").get<std::vector<int>>();
    c.channels = j.at("channels").get<int>();
    c.csb_cells = j.at("csb_cells").get<int>();
    c.mlp_reduction = j.at("mlp_reduction").get<int>();
    const std::string st = j.at("style").get<std::string>();
    c.style = st == "cascaded" ? BlockStyle::kCascaded
                               : (st == "parallel" ? BlockStyle::kParallel : BlockStyle::kDrb);
    c.use_csb = j.at("use_csb").get<bool>();
    c.use_triplet1 = j.at("use_triplet1").get<bool>();
    c.use_triplet2 = j.at("use_triplet2").get<bool>();
    c.t1_hw_only = j.at("t1_hw_only").get<bool>();
    c.t2_hw_only = j.at("t2_hw_only").get<bool>();
    c.use_rab = j.at("use_rab").get<bool>();
    c.rab_position = j.at("rab_position").get<std::string>() == "pre-upsample" ? kRabPreUpsample
                                                                               : kRabHr;
    c.w1 = j.at("w1").get<double>();
    c.w2 = j.at("w2").get<double>();
    auto mean = j.at("rgb_mean").get<std::vector<float>>();
    contract(mean.size() == 3, "ModelConfig: rgb_mean must have 3 entries");
    std::copy(mean.begin(), mean.end(), c.rgb_mean.begin());
    c.variant = j.value("variant", "default");
    c.validate();
    return c;
  }
};

// Named ablation and size variants (Tables I-IV structure).
inline std::vector<std::string> variant_names() {
  return {"default", "tsan-l",  "cascaded", "parallel", "drb-s1", "no-csb",
          "no-t1",   "t1-hw",   "no-t2",    "t2-hw",    "mcab-1", "mcab-2",
          "mcab-3",  "mcab-4",  "no-rab",   "rab-pre-upsample",   "w1-zero"};
}

inline ModelConfig build_variant(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "default") {
  } else if (name == "tsan-l") {
    c.mcab_count = 13;
  } else if (name == "cascaded") {
    c.style = BlockStyle::kCascaded;
    c.dilation_schedule.assign(6, 1);
  } else if (name == "parallel") {
    c.style = BlockStyle::kParallel;
    c.dilation_schedule.assign(6, 1);
  } else if (name == "drb-s1") {
    c.dilation_schedule.assign(6, 1);
  } else if (name == "no-csb") {
    c.use_csb = false;
  } else if (name == "no-t1") {
    c.use_triplet1 = false;
  } else if (name == "t1-hw") {
    c.t1_hw_only = true;
  } else if (name == "no-t2") {
    c.use_triplet2 = false;
  } else if (name == "t2-hw") {
    c.t2_hw_only = true;
  } else if (name.rfind("mcab-", 0) == 0 && name.size() == 6 && name[5] >= '1' && name[5] <= '4') {
    c.mcab_count = name[5] - '0';
  } else if (name == "no-rab") {
    c.use_rab = false;
  } else if (name == "rab-pre-upsample") {
    c.rab_position = ModelConfig::kRabPreUpsample;
  } else if (name == "w1-zero") {
    c.w1 = 0.0;
    c.w2 = 1.0;
  } else {
    throw std::invalid_argument("unknown variant: " + name);
  }
  c.validate();
  return c;
}

// Cost-table entry for the runtime FLOP/parameter walk. spatial_scale is the
// layer's working extent relative to the LR input; cell_div > 1 marks the
// CSB conv, which runs on ceil(extent / cell_div) cells.
struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  int in_ch = 0, out_ch = 0, kernel = 0, groups = 1;
  int spatial_scale = 1;
  int cell_div = 1;
  bool hr_stage = false;
  bool is_dense = false;  // MLP: cost independent of spatial extent
  std::int64_t dense_macs = 0;
};

// The two-stage network, Eqs. 1-5: shallow 1x1 + ReLU, a chain of MCABs,
// 1x1 fusion over all MCAB outputs, residual with the shallow features,
// sub-pixel upsampling (conv + pixel shuffle; two x2 stages for x4), a 1x1
// head to RGB, and the HR-space refinement stage. Inputs are mean-subtracted
// 0-255 floats; the caller handles the RGB mean.
template <typename T>
class TsanModel {
 public:
  struct Output {
    Value sr1, sr2;
  };

  TsanModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(Rng::stream_seed(init_seed, 0));
    const int C = cfg_.channels;
    shallow_ = make_conv(store_, "shallow", 3, C, 1, 1, rng);
    for (int d = 0; d < cfg_.mcab_count; ++d)
      mcabs_.push_back(make_mcab(store_, "mcab." + std::to_string(d), cfg_.block_config(),
                                 cfg_.dilation_schedule, rng));
    fusion_ = make_conv(store_, "fusion", cfg_.mcab_count * C, C, 1, 1, rng);
    if (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabPreUpsample)
      rab_ = make_rab(store_, "rab", C, 64, rng);
    const int stages = cfg_.scale == 4 ? 2 : 1;
    const int r = cfg_.scale == 4 ? 2 : cfg_.scale;
    for (int s = 0; s < stages; ++s)
      upsample_.push_back(
          make_conv(store_, "upsample." + std::to_string(s), C, C * r * r, 3, 1, rng));
    shuffle_r_ = r;
    head_ = make_conv(store_, "head", C, 3, 1, 1, rng);
    if (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabHr)
      rab_ = make_rab(store_, "rab", 3, 64, rng);
  }

  Output forward(Tape<T>& t, Value lr) const {
    const Shape in = t.shape(lr);
    contract(in.rank() == 4 && in[1] == 3, "forward: input must be (N,3,H,W)");
    Value fs = relu(t, shallow_(t, lr));
    std::vector<Value> mcab_outs;
    Value f = fs;
    for (const auto& m : mcabs_) {
      f = m(t, f);
      mcab_outs.push_back(f);
    }
    Value ff = fusion_(t, concat(t, mcab_outs));
    Value pre = add(t, ff, fs);
    if (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabPreUpsample) pre = rab_(t, pre);
    Value up = pre;
    for (const auto& conv : upsample_) up = pixel_shuffle(t, conv(t, up), shuffle_r_);
    Value sr1 = head_(t, up);
    Value sr2 = (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabHr) ? rab_(t, sr1) : sr1;
    return Output{sr1, sr2};
  }

  struct LossParts {
    Value joint, sr1, sr2;
  };

  // Joint two-term objective: w1*MAE(sr1,gt) + w2*MAE(sr2,gt).
  LossParts loss_parts(Tape<T>& t, const Output& out, Value gt) const {
    Value l1 = mae_loss(t, out.sr1, gt);
    Value l2 = mae_loss(t, out.sr2, gt);
    return LossParts{add(t, scale(t, l1, cfg_.w1), scale(t, l2, cfg_.w2)), l1, l2};
  }

  Value loss(Tape<T>& t, const Output& out, Value gt) const {
    return loss_parts(t, out, gt).joint;
  }

  Value loss_sr1(Tape<T>& t, const Output& out, Value gt) const {
    return mae_loss(t, out.sr1, gt);
  }
  Value loss_sr2(Tape<T>& t, const Output& out, Value gt) const {
    return mae_loss(t, out.sr2, gt);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::int64_t param_count() const { return store_.total_params(); }

  // Per-layer cost table for the runtime parameter/FLOP walk.
  std::vector<LayerCost> layer_costs() const {
    std::vector<LayerCost> rows;
    auto conv_row = [&](const Conv2dLayer<T>& c, const std::string& name, int scale_num,
                        int cell_div, bool hr) {
      rows.push_back(LayerCost{name, c.param_count(), c.spec.in_ch, c.spec.out_ch, c.spec.kernel,
                               c.spec.groups, scale_num, cell_div, hr, false, 0});
    };
    conv_row(shallow_, "shallow", 1, 1, false);
    for (int d = 0; d < cfg_.mcab_count; ++d) {
      const auto& m = mcabs_[static_cast<std::size_t>(d)];
      const std::string base = "mcab." + std::to_string(d);
      for (std::size_t k = 0; k < m.drbs.size(); ++k) {
        const std::string dn = base + ".drb." + std::to_string(k);
        conv_row(m.drbs[k].reduce, dn + ".reduce", 1, 1, false);
        for (int i = 0; i < 4; ++i)
          conv_row(m.drbs[k].conv[i], dn + ".conv." + std::to_string(i), 1, 1, false);
        conv_row(m.drbs[k].fuse, dn + ".fuse", 1, 1, false);
      }
      for (std::size_t k = 0; k < m.compress.size(); ++k)
        conv_row(m.compress[k], base + ".compress." + std::to_string(k), 1, 1, false);
      conv_row(m.ctx_fuse, base + ".ctx_fuse", 1, 1, false);
      if (cfg_.use_csb) conv_row(m.csb.conv, base + ".csb.conv", 1, cfg_.csb_cells, false);
      if (cfg_.use_triplet1) {
        rows.push_back(LayerCost{base + ".t1.mlp.0", m.t1.mlp0.param_count(), 0, 0, 0, 1, 1, 1,
                                 false, true, m.t1.mlp0.macs_per_row()});
        rows.push_back(LayerCost{base + ".t1.mlp.1", m.t1.mlp1.param_count(), 0, 0, 0, 1, 1, 1,
                                 false, true, m.t1.mlp1.macs_per_row()});
        rows.push_back(LayerCost{base + ".t1.row", m.t1.row.param_count(), 0, 0, 0, 1, 1, 1,
                                 false, true, 0});
        rows.push_back(LayerCost{base + ".t1.col", m.t1.col.param_count(), 0, 0, 0, 1, 1, 1,
                                 false, true, 0});
      }
      if (cfg_.use_triplet2) {
        rows.push_back(
            LayerCost{base + ".t2.hw", m.t2.hw.param_count(), 0, 0, 0, 1, 1, 1, false, true, 0});
        rows.push_back(
            LayerCost{base + ".t2.ch", m.t2.ch.param_count(), 0, 0, 0, 1, 1, 1, false, true, 0});
        rows.push_back(
            LayerCost{base + ".t2.cw", m.t2.cw.param_count(), 0, 0, 0, 1, 1, 1, false, true, 0});
      }
      conv_row(m.gate, base + ".gate", 1, 1, false);
    }
    conv_row(fusion_, "fusion", 1, 1, false);
    if (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabPreUpsample) {
      conv_row(rab_.conv1, "rab.conv1", 1, 1, false);
      conv_row(rab_.conv2, "rab.conv2", 1, 1, false);
    }
    for (std::size_t s = 0; s < upsample_.size(); ++s)
      conv_row(upsample_[s], "upsample." + std::to_string(s), s == 0 ? 1 : shuffle_r_, 1, false);
    conv_row(head_, "head", cfg_.scale, 1, true);
    if (cfg_.use_rab && cfg_.rab_position == ModelConfig::kRabHr) {
      conv_row(rab_.conv1, "rab.conv1", cfg_.scale, 1, true);
      conv_row(rab_.conv2, "rab.conv2", cfg_.scale, 1, true);
    }
    return rows;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  Conv2dLayer<T> shallow_;
  std::vector<Mcab<T>> mcabs_;
  Conv2dLayer<T> fusion_;
  std::vector<Conv2dLayer<T>> upsample_;
  int shuffle_r_ = 2;
  Conv2dLayer<T> head_;
  Rab<T> rab_;
};

// Runtime MAC count for conv/dense layers at the given LR input extents.
inline std::int64_t count_conv_macs(const std::vector<LayerCost>& rows, int h, int w) {
  std::int64_t total = 0;
  for (const LayerCost& r : rows) {
    if (r.is_dense) {
      total += r.dense_macs;
      continue;
    }
    const std::int64_t eh = (static_cast<std::int64_t>(h) * r.spatial_scale + r.cell_div - 1) / r.cell_div;
    const std::int64_t ew = (static_cast<std::int64_t>(w) * r.spatial_scale + r.cell_div - 1) / r.cell_div;
    total += static_cast<std::int64_t>(r.out_ch) * (r.in_ch / r.groups) * r.kernel * r.kernel * eh * ew;
  }
  return total;
}

}  // namespace tsan
