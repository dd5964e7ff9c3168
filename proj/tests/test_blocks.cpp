#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tsan/nn/blocks.hpp"
#include "tsan/nn/gradcheck_suites.hpp"

using namespace tsan;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

template <typename T>
void zero_param(Parameter<T>* p) {
  std::fill(p->value.data.begin(), p->value.data.end(), T(0));
}

template <typename T, typename Block>
Tensor<T> run_block(const Block& blk, const Tensor<T>& x) {
  Tape<T> t;
  return t.val(blk(t, t.leaf(x)));
}

}  // namespace

TEST_CASE("context blocks: residual identity under zeroed fusion conv") {
  Rng rng(41);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 64, 7, 6});
  for (BlockStyle style : {BlockStyle::kDrb, BlockStyle::kCascaded, BlockStyle::kParallel}) {
    ParamStore<float> store;
    Rng init(5);
    auto blk = make_context_block(store, "blk", 64, 2, style, init);
    zero_param(blk.fuse.w);
    zero_param(blk.fuse.b);
    Tensor<float> y = run_block(blk, x);
    REQUIRE(y.data == x.data);  // bit-exact
  }
}

TEST_CASE("context blocks: shape preservation for all styles and dilations") {
  Rng rng(42);
  for (int s : {1, 2, 3}) {
    for (BlockStyle style : {BlockStyle::kDrb, BlockStyle::kCascaded, BlockStyle::kParallel}) {
      ParamStore<float> store;
      Rng init(6);
      auto blk = make_context_block(store, "blk", 64, s, style, init);
      for (auto [h, w] : {std::pair{1, 1}, std::pair{5, 9}, std::pair{8, 8}}) {
        Tensor<float> x = rand_tensor<float>(rng, Shape{1, 64, h, w});
        REQUIRE(run_block(blk, x).shape == x.shape);
      }
    }
  }
}

TEST_CASE("context blocks: 168,320 parameters at C=64, identical across styles") {
  std::int64_t counts[3];
  int i = 0;
  for (BlockStyle style : {BlockStyle::kDrb, BlockStyle::kCascaded, BlockStyle::kParallel}) {
    ParamStore<float> store;
    Rng init(7);
    auto blk = make_context_block(store, "blk", 64, 1, style, init);
    counts[i] = store.total_params();
    REQUIRE(blk.param_count() == counts[i]);
    ++i;
  }
  REQUIRE(counts[0] == 168320);
  REQUIRE(counts[0] == counts[1]);
  REQUIRE(counts[1] == counts[2]);
}

TEST_CASE("csb: identity-impulse conv makes the whole block the identity") {
  ParamStore<float> store;
  Rng init(8);
  auto blk = make_csb(store, "csb", 16, 2, init);
  // grouped conv: out channel co reads in-channel co%16 of its group
  zero_param(blk.conv.w);
  zero_param(blk.conv.b);
  const Shape ws = blk.conv.w->value.shape;
  for (int co = 0; co < ws[0]; ++co) blk.conv.w->value.at4(co, co % ws[1], 1, 1) = 1.0f;

  Rng rng(43);
  for (auto [h, w] : {std::pair{6, 8}, std::pair{5, 7}, std::pair{1, 3}}) {
    Tensor<float> x = rand_tensor<float>(rng, Shape{2, 16, h, w});
    Tensor<float> y = run_block(blk, x);
    REQUIRE(y.data == x.data);
  }
}

TEST_CASE("triplet1: zeroed transforms give 2.5x, gates stay in (0,1)") {
  ParamStore<float> store;
  Rng init(9);
  auto blk = make_triplet1(store, "t1", 64, 4, false, init);
  Rng rng(44);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 64, 5, 4});

  SECTION("zeroed gate pre-activations") {
    for (auto* p : {blk.mlp0.w, blk.mlp0.b, blk.mlp1.w, blk.mlp1.b, blk.row.w, blk.row.b,
                    blk.col.w, blk.col.b})
      zero_param(p);
    Tensor<float> y = run_block(blk, x);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      REQUIRE(y.data[i] == Catch::Approx(2.5f * x.data[i]).margin(1e-6));
  }

  SECTION("no cross-sample coupling: permuting the batch permutes the output") {
    Tensor<float> y = run_block(blk, x);
    Tensor<float> xs(x.shape);  // swap the two samples
    const std::size_t half = x.data.size() / 2;
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(half), x.data.end(), xs.data.begin());
    std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(half),
              xs.data.begin() + static_cast<std::ptrdiff_t>(half));
    Tensor<float> ys = run_block(blk, xs);
    for (std::size_t i = 0; i < half; ++i) {
      REQUIRE(ys.data[i] == y.data[half + i]);
      REQUIRE(ys.data[half + i] == y.data[i]);
    }
  }

  SECTION("hw-only ablation keeps just the channel gate") {
    ParamStore<float> store2;
    Rng init2(9);
    auto hw = make_triplet1(store2, "t1", 64, 4, true, init2);
    for (auto* p : {hw.mlp0.w, hw.mlp0.b, hw.mlp1.w, hw.mlp1.b}) zero_param(p);
    Tensor<float> y = run_block(hw, x);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      REQUIRE(y.data[i] == Catch::Approx(1.5f * x.data[i]).margin(1e-6));
  }
}

TEST_CASE("triplet2: zeroed affines give 2.5x, constant input stays constant") {
  ParamStore<float> store;
  Rng init(10);
  auto blk = make_triplet2(store, "t2", false, init);
  Rng rng(45);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 8, 4, 5});

  SECTION("zeroed scale and shift") {
    for (auto* p : {blk.hw.a, blk.hw.b, blk.ch.a, blk.ch.b, blk.cw.a, blk.cw.b}) zero_param(p);
    Tensor<float> y = run_block(blk, x);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      REQUIRE(y.data[i] == Catch::Approx(2.5f * x.data[i]).margin(1e-6));
  }

  SECTION("constant input: all pooled maps constant, output constant") {
    Tensor<float> c(Shape{1, 4, 3, 3}, 0.7f);
    Tensor<float> y = run_block(blk, c);
    for (float v : y.data) REQUIRE(v == Catch::Approx(y.data[0]).margin(1e-6));
  }
}

TEST_CASE("mcab: residual identity under zeroed fusion and gate convs") {
  ParamStore<float> store;
  Rng init(11);
  BlockConfig bc;
  auto blk = make_mcab(store, "mcab", bc, {1, 2, 3, 3, 2, 1}, init);
  zero_param(blk.ctx_fuse.w);
  zero_param(blk.ctx_fuse.b);
  zero_param(blk.gate.w);
  zero_param(blk.gate.b);
  Rng rng(46);
  Tensor<float> x = rand_tensor<float>(rng, Shape{1, 64, 6, 6});
  Tensor<float> y = run_block(blk, x);
  REQUIRE(y.data == x.data);  // 0 * sigmoid(0) + x, bit-exact

  SECTION("output shape equals input shape") {
    Tensor<float> odd = rand_tensor<float>(rng, Shape{1, 64, 5, 7});
    REQUIRE(run_block(blk, odd).shape == odd.shape);
  }
}

TEST_CASE("mcab: dense connectivity reaches later blocks") {
  ParamStore<float> store;
  Rng init(12);
  BlockConfig bc;
  auto blk = make_mcab(store, "mcab", bc, {1, 2, 3}, init);
  Rng rng(47);
  Tensor<float> x = rand_tensor<float>(rng, Shape{1, 64, 6, 6});

  // Tap the last DRB's input through the documented wiring: block k reads
  // compress[k-1] applied to [x, F'_1..F'_{k-1}].
  auto last_input = [&]() {
    Tape<float> t;
    Value xv = t.leaf(x);
    std::vector<Value> feats{xv};
    Value in = xv;
    for (std::size_t k = 0; k + 1 < blk.drbs.size(); ++k) {
      in = (k == 0) ? xv : blk.compress[k - 1](t, concat(t, feats));
      feats.push_back(blk.drbs[k](t, in));
    }
    Value tap = blk.compress.back()(t, concat(t, feats));
    return t.val(tap);
  };

  Tensor<float> before = last_input();
  blk.drbs[0].conv[0].w->value.data[0] += 0.25f;
  Tensor<float> after = last_input();
  REQUIRE(max_abs_diff(before, after) > 0.0);

  // and the perturbation propagates to the MCAB output
  blk.drbs[0].conv[0].w->value.data[0] -= 0.25f;
  Tensor<float> out_before = run_block(blk, x);
  blk.drbs[0].conv[0].w->value.data[0] += 0.25f;
  Tensor<float> out_after = run_block(blk, x);
  REQUIRE(max_abs_diff(out_before, out_after) > 0.0);
}

TEST_CASE("mcab: ablation flags drop the corresponding parameters") {
  BlockConfig all;
  ParamStore<float> s_all;
  Rng i1(13);
  auto m_all = make_mcab(s_all, "m", all, {1, 2}, i1);

  BlockConfig nocsb = all;
  nocsb.use_csb = false;
  ParamStore<float> s_nocsb;
  Rng i2(13);
  auto m2 = make_mcab(s_nocsb, "m", nocsb, {1, 2}, i2);
  REQUIRE(s_nocsb.find("m.csb.conv.weight") == nullptr);
  REQUIRE(s_all.find("m.csb.conv.weight") != nullptr);
  REQUIRE(s_all.total_params() > s_nocsb.total_params());

  BlockConfig hw = all;
  hw.t1_hw_only = true;
  ParamStore<float> s_hw;
  Rng i3(13);
  auto m3 = make_mcab(s_hw, "m", hw, {1, 2}, i3);
  // hw-only keeps the MLP but the row/col transforms stay registered-free of
  // the forward path; parameter count is unchanged only for used branches
  REQUIRE(s_hw.find("m.t1.mlp.0.weight") != nullptr);
  (void)m_all;
  (void)m2;
  (void)m3;
}

TEST_CASE("rab: zeroed final conv gives exactly 1.5x") {
  ParamStore<float> store;
  Rng init(14);
  auto blk = make_rab(store, "rab", 3, 64, init);
  zero_param(blk.conv2.w);
  zero_param(blk.conv2.b);
  Rng rng(48);
  Tensor<float> y = rand_tensor<float>(rng, Shape{2, 3, 9, 8}, -100.0, 100.0);
  Tensor<float> out = run_block(blk, y);
  REQUIRE(out.shape == y.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    REQUIRE(std::abs(out.data[i] - 1.5f * y.data[i]) < 1e-6 * std::max(1.0f, std::abs(y.data[i])));
}

TEST_CASE("sigmoid-gated paths stay in the open interval (0,1)") {
  ParamStore<float> store;
  Rng init(15);
  auto t1 = make_triplet1(store, "t1", 64, 4, false, init);
  Rng rng(49);
  Tensor<float> x = rand_tensor<float>(rng, Shape{1, 64, 4, 4});
  Tape<float> t;
  Value xv = t.leaf(x);
  Value desc = mean_over_axes(t, xv, kMeanH | kMeanW);
  Value flat = reshape(t, desc, Shape{1, 64});
  Value gate = sigmoid(t, t1.mlp1(t, relu(t, t1.mlp0(t, flat))));
  for (float v : t.val(gate).data) {
    REQUIRE(v > 0.0f);
    REQUIRE(v < 1.0f);
  }
}

TEST_CASE("blocks pass 64-bit gradcheck on three seeds") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    SuiteReport rep = gradcheck_blocks(seed);
    for (const auto& e : rep.entries) {
      INFO(e.name << " seed " << seed << " rel err " << e.rep.max_rel_err << " checked "
                  << e.rep.checked << " skipped " << e.rep.skipped);
      REQUIRE(e.rep.checked > 0);
      REQUIRE(e.rep.max_rel_err < 1e-4);
    }
  }
}
