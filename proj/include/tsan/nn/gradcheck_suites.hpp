#pragma once

// 64-bit finite-difference suites over ops, blocks and the micro model.
// Shared by the CLI `gradcheck` command, the unit tests and the acceptance
// suite. All functions are deterministic in the seed.

#include <functional>
#include <string>
#include <vector>

#include "tsan/core/gradcheck.hpp"
#include "tsan/nn/model.hpp"

namespace tsan {

struct SuiteEntry {
  std::string name;
  GradcheckReport rep;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;

  double worst() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.rep.max_rel_err);
    return m;
  }
  bool pass(double tol = 1e-4) const {
    for (const auto& e : entries)
      if (!(e.rep.checked > 0 && e.rep.max_rel_err < tol)) return false;
    return true;
  }
};

namespace detail {

// Strided deterministic subsample of [0, n): spread across the range with a
// seeded offset.
inline std::vector<std::int64_t> sample_indices(std::int64_t n, int max_coords, Rng& rng) {
  std::vector<std::int64_t> idx;
  if (n <= max_coords) {
    for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  const std::int64_t stride = n / max_coords;
  const std::int64_t offset = rng.uniform_int(static_cast<int>(std::min<std::int64_t>(stride, 1 << 30)));
  for (int k = 0; k < max_coords; ++k) idx.push_back((offset + k * stride) % n);
  return idx;
}

}  // namespace detail

// Checks d(loss)/dx on sampled input coordinates and d(loss)/dtheta on
// sampled parameter coordinates, with loss = <forward(x), probe> (linear in
// the output, so the probe adds no kinks of its own).
inline GradcheckReport check_function_with_params(
    ParamStore<double>& store, const std::function<Value(Tape<double>&, Value)>& fwd,
    Tensor<double>& x, int max_input_coords, int max_param_coords, Rng& rng, double h = 1e-3) {
  Tensor<double> probe;
  {
    Tape<double> t;
    Value xv = t.leaf(x, false);
    Value out = fwd(t, xv);
    probe = Tensor<double>(t.shape(out));
  }
  for (auto& v : probe.data) v = rng.uniform(-1.0, 1.0);

  store.zero_grads();
  std::vector<double> gx;
  {
    Tape<double> t;
    Value xv = t.leaf(x, true);
    Value loss = sum_all(t, mul(t, fwd(t, xv), t.leaf(probe)));
    t.backward(loss);
    gx = t.grad(xv);
  }
  if (gx.empty()) gx.assign(x.data.size(), 0.0);

  auto f = [&]() {
    Tape<double> t;
    Value xv = t.leaf(x, false);
    Value loss = sum_all(t, mul(t, fwd(t, xv), t.leaf(probe)));
    return t.val(loss).data[0];
  };

  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::int64_t i : detail::sample_indices(static_cast<std::int64_t>(x.data.size()),
                                               max_input_coords, rng)) {
    coords.push_back(&x.data[static_cast<std::size_t>(i)]);
    analytic.push_back(gx[static_cast<std::size_t>(i)]);
  }
  std::int64_t total = store.total_params();
  if (total > 0 && max_param_coords > 0) {
    std::vector<std::int64_t> sel = detail::sample_indices(total, max_param_coords, rng);
    for (std::int64_t flat : sel) {
      std::int64_t off = flat;
      for (const auto& p : store.items()) {
        if (off < p->numel()) {
          coords.push_back(&p->value.data[static_cast<std::size_t>(off)]);
          analytic.push_back(p->grad[static_cast<std::size_t>(off)]);
          break;
        }
        off -= p->numel();
      }
    }
  }
  return check_coordinates(f, coords, analytic, h);
}

// ------------------------------------------------------------- ops suite ---

inline SuiteReport gradcheck_ops(std::uint64_t seed) {
  SuiteReport out;
  Rng rng(Rng::stream_seed(seed, 101));
  auto rand_t = [&](const Shape& s, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
  };
  auto run = [&](const std::string& name, Tensor<double> x,
                 std::function<Value(Tape<double>&, Value)> fn) {
    auto rep = gradcheck([&](Tape<double>& t, Value v) { return fn(t, v); }, x);
    out.entries.push_back(SuiteEntry{name, rep});
  };

  {
    Tensor<double> w = rand_t(Shape{4, 3, 3, 3});
    Tensor<double> b = rand_t(Shape{4});
    run("conv2d.3x3", rand_t(Shape{2, 3, 5, 4}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, conv2d(t, v, t.leaf(w), t.leaf(b), 1, 1)));
    });
    run("conv2d.dilated", rand_t(Shape{1, 3, 7, 7}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, conv2d(t, v, t.leaf(w), t.leaf(b), 2, 2)));
    });
  }
  {
    Tensor<double> w = rand_t(Shape{4, 2, 3, 3});
    Tensor<double> b = rand_t(Shape{4});
    run("conv2d.grouped", rand_t(Shape{2, 4, 5, 5}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, conv2d(t, v, t.leaf(w), t.leaf(b), 1, 1, 2)));
    });
  }
  {
    Tensor<double> w = rand_t(Shape{1, 1, 3, 1});
    Tensor<double> b = rand_t(Shape{1});
    run("conv1d.h", rand_t(Shape{2, 1, 6, 1}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, conv1d_axis(t, v, t.leaf(w), t.leaf(b), true)));
    });
  }
  {
    // keep relu inputs away from the kink
    Tensor<double> x(Shape{3, 5});
    for (auto& v : x.data) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 1.0);
    run("relu", std::move(x),
        [](Tape<double>& t, Value v) { return sum_all(t, relu(t, v)); });
  }
  run("sigmoid", rand_t(Shape{2, 3, 3, 2}, -2, 2),
      [](Tape<double>& t, Value v) { return sum_all(t, sigmoid(t, v)); });
  {
    Tensor<double> g = rand_t(Shape{1, 3, 1, 1});
    run("mul.broadcast", rand_t(Shape{2, 3, 4, 3}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, add(t, mul(t, v, t.leaf(g)), t.leaf(g))));
    });
  }
  {
    Tensor<double> other = rand_t(Shape{1, 3, 4, 3});
    run("concat.mean", rand_t(Shape{1, 2, 4, 3}), [=](Tape<double>& t, Value v) {
      Value cat = concat(t, {v, t.leaf(other)});
      return sum_all(t, sigmoid(t, mean_over_axes(t, cat, kMeanC | kMeanH)));
    });
  }
  {
    Tensor<double> w = rand_t(Shape{3, 4});
    Tensor<double> b = rand_t(Shape{3});
    run("dense", rand_t(Shape{5, 4}), [=](Tape<double>& t, Value v) {
      return sum_all(t, sigmoid(t, dense(t, v, t.leaf(w), t.leaf(b))));
    });
  }
  run("pixel_shuffle", rand_t(Shape{1, 8, 2, 3}), [](Tape<double>& t, Value v) {
    return sum_all(t, sigmoid(t, pixel_shuffle(t, v, 2)));
  });
  run("csb.cut_splice", rand_t(Shape{1, 2, 5, 3}), [](Tape<double>& t, Value v) {
    Value cut = csb_cut(t, v, 2);
    return sum_all(t, csb_splice(t, sigmoid(t, cut), 2, 5, 3));
  });
  {
    Tensor<double> tgt = rand_t(Shape{3, 4}, 2.0, 3.0);
    run("mae", rand_t(Shape{3, 4}), [=](Tape<double>& t, Value v) {
      return mae_loss(t, v, t.leaf(tgt));
    });
  }
  run("scale.reshape.crop", rand_t(Shape{1, 2, 4, 4}), [](Tape<double>& t, Value v) {
    Value c = crop_spatial(t, v, 3, 3);
    Value r = reshape(t, c, Shape{2, 9});
    return scale(t, sum_all(t, sigmoid(t, r)), 0.73);
  });
  return out;
}

// ----------------------------------------------------------- block suite ---

inline SuiteReport gradcheck_blocks(std::uint64_t seed) {
  SuiteReport out;
  Rng rng(Rng::stream_seed(seed, 202));
  const Shape in_shape{2, 64, 6, 5};
  auto rand_x = [&]() {
    Tensor<double> t(in_shape);
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
  };
  auto run = [&](const std::string& name, std::function<Value(Tape<double>&, Value)> fwd,
                 ParamStore<double>& store, Tensor<double> x) {
    out.entries.push_back(
        SuiteEntry{name, check_function_with_params(store, fwd, x, 120, 120, rng)});
  };

  for (BlockStyle style : {BlockStyle::kDrb, BlockStyle::kCascaded, BlockStyle::kParallel}) {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 7));
    auto blk = make_context_block(store, "blk", 64, 2, style, init);
    run(std::string("block.") + block_style_name(style),
        [blk](Tape<double>& t, Value v) { return blk(t, v); }, store, rand_x());
  }
  {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 8));
    auto blk = make_csb(store, "csb", 64, 2, init);
    run("block.csb", [blk](Tape<double>& t, Value v) { return blk(t, v); }, store, rand_x());
  }
  {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 9));
    auto blk = make_triplet1(store, "t1", 64, 4, false, init);
    run("block.triplet1", [blk](Tape<double>& t, Value v) { return blk(t, v); }, store, rand_x());
  }
  {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 10));
    auto blk = make_triplet2(store, "t2", false, init);
    run("block.triplet2", [blk](Tape<double>& t, Value v) { return blk(t, v); }, store, rand_x());
  }
  {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 11));
    BlockConfig bc;
    auto blk = make_mcab(store, "mcab", bc, {1, 2}, init);
    run("block.mcab", [&blk](Tape<double>& t, Value v) { return blk(t, v); }, store, rand_x());
  }
  {
    ParamStore<double> store;
    Rng init(Rng::stream_seed(seed, 12));
    auto blk = make_rab(store, "rab", 3, 64, init);
    Tensor<double> y(Shape{2, 3, 6, 5});
    for (auto& v : y.data) v = rng.uniform(-1.0, 1.0);
    run("block.rab", [blk](Tape<double>& t, Value v) { return blk(t, v); }, store, std::move(y));
  }
  return out;
}

// ----------------------------------------------------------- model suite ---

// Micro configuration (one MCAB, two DRBs) on an 8x8 input; checks a spread
// subsample of parameters plus a few input coordinates.
inline SuiteReport gradcheck_model(std::uint64_t seed, int param_coords = 240) {
  SuiteReport out;
  Rng rng(Rng::stream_seed(seed, 303));
  ModelConfig cfg;
  cfg.mcab_count = 1;
  cfg.dilation_schedule = {1, 2};
  cfg.scale = 2;
  cfg.validate();
  TsanModel<double> model(cfg, seed);

  Tensor<double> x(Shape{1, 3, 8, 8});
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);

  Tensor<double> p1(Shape{1, 3, 16, 16}), p2(Shape{1, 3, 16, 16});
  for (auto& v : p1.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : p2.data) v = rng.uniform(-1.0, 1.0);

  auto fwd = [&](Tape<double>& t, Value v) {
    auto o = model.forward(t, v);
    // probe both heads so every parameter (including the refinement stage)
    // is on the checked path
    return concat(t, {o.sr1, o.sr2});
  };
  auto probe_loss = [&](Tape<double>& t, Value v) {
    auto o = model.forward(t, v);
    return add(t, sum_all(t, mul(t, o.sr1, t.leaf(p1))), sum_all(t, mul(t, o.sr2, t.leaf(p2))));
  };

  model.params().zero_grads();
  std::vector<double> gx;
  {
    Tape<double> t;
    Value xv = t.leaf(x, true);
    Value loss = probe_loss(t, xv);
    t.backward(loss);
    gx = t.grad(xv);
  }
  auto f = [&]() {
    Tape<double> t;
    Value xv = t.leaf(x, false);
    return t.val(probe_loss(t, xv)).data[0];
  };
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::int64_t i :
       detail::sample_indices(static_cast<std::int64_t>(x.data.size()), 24, rng)) {
    coords.push_back(&x.data[static_cast<std::size_t>(i)]);
    analytic.push_back(gx[static_cast<std::size_t>(i)]);
  }
  auto& store = model.params();
  for (std::int64_t flat : detail::sample_indices(store.total_params(), param_coords, rng)) {
    std::int64_t off = flat;
    for (const auto& p : store.items()) {
      if (off < p->numel()) {
        coords.push_back(&p->value.data[static_cast<std::size_t>(off)]);
        analytic.push_back(p->grad[static_cast<std::size_t>(off)]);
        break;
      }
      off -= p->numel();
    }
  }
  out.entries.push_back(SuiteEntry{"model.micro", check_coordinates(f, coords, analytic)});
  (void)fwd;
  return out;
}

}  // namespace tsan
