#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tsan/core/gradcheck.hpp"
#include "tsan/core/ops.hpp"

using namespace tsan;
using testutil::rand_tensor;

TEST_CASE("backward of sum gives ones") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{2, 3}, 4.0f), true);
  t.backward(sum_all(t, x));
  for (float g : t.grad(x)) REQUIRE(g == 1.0f);
}

TEST_CASE("hand-differentiated mae of a product") {
  // loss = mae(w*x, 0) with scalar w,x > 0  =>  d loss / d w = x
  Tape<float> t;
  Value w = t.leaf(Tensor<float>(Shape{1}, {0.7f}), true);
  Value x = t.leaf(Tensor<float>(Shape{1}, {1.3f}));
  Value zero = t.leaf(Tensor<float>(Shape{1}, 0.0f));
  t.backward(mae_loss(t, mul(t, x, w), zero));
  REQUIRE(t.grad(w)[0] == Catch::Approx(1.3f));
}

TEST_CASE("successive backward calls accumulate") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{4}, 2.0f), true);
  Value loss = sum_all(t, x);
  t.backward(loss);
  t.backward(loss);
  for (float g : t.grad(x)) REQUIRE(g == 2.0f);
}

TEST_CASE("fan-out sums both contributions") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{3}, 1.0f), true);
  Value loss = add(t, sum_all(t, x), sum_all(t, x));
  t.backward(loss);
  for (float g : t.grad(x)) REQUIRE(g == 2.0f);
}

TEST_CASE("unreachable grads stay untouched") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{2}, 1.0f), true);
  Value y = t.leaf(Tensor<float>(Shape{2}, 1.0f), true);
  (void)y;
  t.backward(sum_all(t, x));
  REQUIRE(t.grad(y).empty());
  REQUIRE_THROWS_AS(t.backward(x), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("gradcheck: sum is exact up to rounding") {
  Rng rng(1);
  Tensor<double> x = rand_tensor<double>(rng, Shape{3, 4});
  auto rep = gradcheck([](Tape<double>& t, Value v) { return sum_all(t, v); }, x);
  REQUIRE(rep.checked == 12);
  REQUIRE(rep.max_rel_err < 1e-9);
}

TEST_CASE("gradcheck: sigmoid chain under 1e-6") {
  Rng rng(2);
  Tensor<double> x = rand_tensor<double>(rng, Shape{2, 3, 3, 2}, -2.0, 2.0);
  auto rep = gradcheck(
      [](Tape<double>& t, Value v) { return sum_all(t, sigmoid(t, v)); }, x);
  REQUIRE(rep.checked > 0);
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: full conv2d layer under 1e-4") {
  Rng rng(3);
  Tensor<double> x = rand_tensor<double>(rng, Shape{2, 3, 6, 5});
  Tensor<double> w = rand_tensor<double>(rng, Shape{4, 3, 3, 3});
  Tensor<double> b = rand_tensor<double>(rng, Shape{4});

  // d/dx
  auto repx = gradcheck(
      [&](Tape<double>& t, Value v) {
        Value y = conv2d(t, v, t.leaf(w), t.leaf(b), 2, 2);
        return sum_all(t, sigmoid(t, y));
      },
      x);
  REQUIRE(repx.max_rel_err < 1e-4);

  // d/dw and d/db
  auto repw = gradcheck(
      [&](Tape<double>& t, Value v) {
        Value y = conv2d(t, t.leaf(x), v, t.leaf(b), 2, 2);
        return sum_all(t, sigmoid(t, y));
      },
      w);
  REQUIRE(repw.max_rel_err < 1e-4);
  auto repb = gradcheck(
      [&](Tape<double>& t, Value v) {
        Value y = conv2d(t, t.leaf(x), t.leaf(w), v, 2, 2);
        return sum_all(t, sigmoid(t, y));
      },
      b);
  REQUIRE(repb.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: remaining ops") {
  Rng rng(4);
  const double tol = 1e-4;

  SECTION("relu away from the kink") {
    Tensor<double> x(Shape{3, 4});
    for (auto& v : x.data) {
      const double m = rng.uniform(0.2, 1.0);
      v = rng.uniform() < 0.5 ? -m : m;
    }
    auto rep = gradcheck([](Tape<double>& t, Value v) { return sum_all(t, relu(t, v)); }, x);
    REQUIRE(rep.max_rel_err < tol);
  }

  SECTION("add and mul with broadcast") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{2, 3, 4, 2});
    Tensor<double> g = rand_tensor<double>(rng, Shape{1, 3, 1, 1});
    auto repx = gradcheck(
        [&](Tape<double>& t, Value v) {
          Value y = mul(t, v, t.leaf(g));
          return sum_all(t, sigmoid(t, add(t, y, t.leaf(g))));
        },
        x);
    REQUIRE(repx.max_rel_err < tol);
    auto repg = gradcheck(
        [&](Tape<double>& t, Value v) {
          Value y = mul(t, t.leaf(x), v);
          return sum_all(t, sigmoid(t, y));
        },
        g);
    REQUIRE(repg.max_rel_err < tol);
  }

  SECTION("concat, mean, reshape, crop") {
    Tensor<double> a = rand_tensor<double>(rng, Shape{1, 2, 4, 3});
    Tensor<double> b = rand_tensor<double>(rng, Shape{1, 3, 4, 3});
    auto rep = gradcheck(
        [&](Tape<double>& t, Value v) {
          Value cat = concat(t, {v, t.leaf(b)});
          Value m = mean_over_axes(t, cat, kMeanC | kMeanW);
          Value r = reshape(t, m, Shape{4});
          return sum_all(t, sigmoid(t, r));
        },
        a);
    REQUIRE(rep.max_rel_err < tol);

    auto repc = gradcheck(
        [&](Tape<double>& t, Value v) {
          return sum_all(t, crop_spatial(t, v, 2, 2));
        },
        a);
    REQUIRE(repc.max_rel_err < tol);
  }

  SECTION("dense") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{3, 4});
    Tensor<double> w = rand_tensor<double>(rng, Shape{2, 4});
    Tensor<double> b = rand_tensor<double>(rng, Shape{2});
    auto rep = gradcheck(
        [&](Tape<double>& t, Value v) {
          return sum_all(t, sigmoid(t, dense(t, v, t.leaf(w), t.leaf(b))));
        },
        x);
    REQUIRE(rep.max_rel_err < tol);
    auto repw = gradcheck(
        [&](Tape<double>& t, Value v) {
          return sum_all(t, sigmoid(t, dense(t, t.leaf(x), v, t.leaf(b))));
        },
        w);
    REQUIRE(repw.max_rel_err < tol);
  }

  SECTION("pixel_shuffle and scale") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{1, 8, 3, 2});
    auto rep = gradcheck(
        [](Tape<double>& t, Value v) {
          return scale(t, sum_all(t, sigmoid(t, pixel_shuffle(t, v, 2))), 0.37);
        },
        x);
    REQUIRE(rep.max_rel_err < tol);
  }

  SECTION("csb cut and splice, odd extents") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{1, 2, 5, 3});
    auto rep = gradcheck(
        [](Tape<double>& t, Value v) {
          Value cut = csb_cut(t, v, 2);
          Value sig = sigmoid(t, cut);
          return sum_all(t, csb_splice(t, sig, 2, 5, 3));
        },
        x);
    REQUIRE(rep.max_rel_err < tol);
  }

  SECTION("mae at non-kink points") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{2, 3});
    Tensor<double> y = rand_tensor<double>(rng, Shape{2, 3}, 2.0, 3.0);
    auto rep = gradcheck(
        [&](Tape<double>& t, Value v) { return mae_loss(t, v, t.leaf(y)); }, x);
    REQUIRE(rep.max_rel_err < tol);
  }

  SECTION("1-D convs along H and W") {
    Tensor<double> x = rand_tensor<double>(rng, Shape{2, 1, 6, 1});
    Tensor<double> w = rand_tensor<double>(rng, Shape{1, 1, 3, 1});
    Tensor<double> b = rand_tensor<double>(rng, Shape{1});
    auto rep = gradcheck(
        [&](Tape<double>& t, Value v) {
          return sum_all(t, sigmoid(t, conv1d_axis(t, v, t.leaf(w), t.leaf(b), true)));
        },
        x);
    REQUIRE(rep.max_rel_err < tol);

    Tensor<double> xw = rand_tensor<double>(rng, Shape{2, 1, 1, 6});
    Tensor<double> ww = rand_tensor<double>(rng, Shape{1, 1, 1, 3});
    auto repw = gradcheck(
        [&](Tape<double>& t, Value v) {
          return sum_all(t, sigmoid(t, conv1d_axis(t, t.leaf(xw), v, t.leaf(b), false)));
        },
        ww);
    REQUIRE(repw.max_rel_err < tol);
  }
}

TEST_CASE("forward is identical across thread counts") {
  Rng rng(5);
  Tensor<float> x = rand_tensor<float>(rng, Shape{4, 3, 8, 8});
  Tensor<float> w = rand_tensor<float>(rng, Shape{5, 3, 3, 3});
  Tensor<float> b = rand_tensor<float>(rng, Shape{5});
  std::vector<float> first;
  for (int threads : {1, 2, 4}) {
    set_thread_count(threads);
    Tape<float> t;
    Value y = conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1, 1);
    if (first.empty())
      first = t.val(y).data;
    else
      REQUIRE(first == t.val(y).data);
  }
  set_thread_count(0);
}
