#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tsan/core/ops.hpp"

using namespace tsan;
using testutil::conv_oracle;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

template <typename T>
Tensor<T> run_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int dilation,
                   int padding, int groups = 1) {
  Tape<T> t;
  Value xv = t.leaf(x), wv = t.leaf(w), bv = t.leaf(b);
  Value y = conv2d(t, xv, wv, bv, dilation, padding, groups);
  return t.val(y);
}

}  // namespace

TEST_CASE("conv2d all-ones kernel counts window overlap") {
  Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> b(Shape{1}, 0.0f);
  Tensor<float> y = run_conv(x, w, b, 1, 1);
  const std::vector<float> expected = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  REQUIRE(y.shape == Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) REQUIRE(y.data[i] == Catch::Approx(expected[i]));
}

TEST_CASE("conv2d identity impulse kernel is the identity") {
  Rng rng(7);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 3, 5, 4});
  Tensor<float> w(Shape{3, 3, 3, 3}, 0.0f);
  for (int c = 0; c < 3; ++c) w.at4(c, c, 1, 1) = 1.0f;
  Tensor<float> b(Shape{3}, 0.0f);
  Tensor<float> y = run_conv(x, w, b, 1, 1);
  REQUIRE(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d dilated impulse response matches the stated grid") {
  Tensor<float> x(Shape{1, 1, 5, 5}, 0.0f);
  x.at4(0, 0, 2, 2) = 1.0f;
  Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
  Tensor<float> b(Shape{1}, 0.0f);
  Tensor<float> y = run_conv(x, w, b, 2, 2);
  Tensor<float> want = conv_oracle(x, w, b, 2, 2, 2, 2);
  REQUIRE(max_abs_diff(y, want) == 0.0);
  for (int h = 0; h < 5; ++h)
    for (int v = 0; v < 5; ++v) {
      const bool on = (h % 2 == 0) && (v % 2 == 0);
      REQUIRE(y.at4(0, 0, h, v) == (on ? 1.0f : 0.0f));
    }
}

TEST_CASE("conv2d equals the brute-force direct-summation oracle") {
  Rng rng(11);
  struct Case {
    int n, cin, h, w, cout, k, dil, groups;
  };
  const Case cases[] = {
      {2, 3, 7, 6, 4, 3, 1, 1}, {1, 4, 9, 9, 4, 3, 2, 1}, {2, 2, 6, 5, 3, 1, 1, 1},
      {1, 6, 8, 7, 6, 3, 3, 1}, {2, 4, 6, 6, 4, 3, 1, 2}, {1, 8, 5, 5, 8, 3, 1, 4},
      {1, 3, 11, 4, 2, 7, 1, 1},
  };
  for (const Case& c : cases) {
    Tensor<float> x = rand_tensor<float>(rng, Shape{c.n, c.cin, c.h, c.w});
    Tensor<float> w = rand_tensor<float>(rng, Shape{c.cout, c.cin / c.groups, c.k, c.k});
    Tensor<float> b = rand_tensor<float>(rng, Shape{c.cout});
    const int pad = c.dil * (c.k - 1) / 2;
    Tensor<float> got = run_conv(x, w, b, c.dil, pad, c.groups);
    Tensor<float> want = conv_oracle(x, w, b, c.dil, c.dil, pad, pad, c.groups);
    REQUIRE(got.shape == want.shape);
    REQUIRE(max_abs_diff(got, want) < 1e-5);
  }
}

TEST_CASE("conv2d contract violations") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{1, 2, 4, 4}, 1.0f));
  Value w = t.leaf(Tensor<float>(Shape{1, 3, 3, 3}, 1.0f));
  Value b = t.leaf(Tensor<float>(Shape{1}, 0.0f));
  REQUIRE_THROWS_AS(conv2d(t, x, w, b, 1, 1), std::invalid_argument);

  Value w2 = t.leaf(Tensor<float>(Shape{1, 2, 3, 3}, 1.0f));
  // dilation 3 on a 4-pixel extent with no padding: output extent <= 0.
  REQUIRE_THROWS_AS(conv2d(t, x, w2, b, 3, 0), std::invalid_argument);
  // kernel size outside {1,3,7}
  Value w5 = t.leaf(Tensor<float>(Shape{1, 2, 5, 5}, 1.0f));
  REQUIRE_THROWS_AS(conv2d(t, x, w5, b, 1, 2), std::invalid_argument);
}

TEST_CASE("relu and sigmoid pointwise values") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{4}, {-1.0f, 2.0f, 0.0f, -20.0f}));
  Value r = relu(t, x);
  REQUIRE(t.val(r).data == std::vector<float>{0.0f, 2.0f, 0.0f, 0.0f});

  Value s = sigmoid(t, x);
  REQUIRE(t.val(s).data[0] == Catch::Approx(1.0 / (1.0 + std::exp(1.0))));
  REQUIRE(std::abs(t.val(s).data[3] - 0.0f) < 1e-8);

  Value zero = t.leaf(Tensor<float>(Shape{1}, {0.0f}));
  REQUIRE(t.val(sigmoid(t, zero)).data[0] == Catch::Approx(0.5));
  Value big = t.leaf(Tensor<float>(Shape{1}, {20.0f}));
  REQUIRE(std::abs(t.val(sigmoid(t, big)).data[0] - 1.0f) < 1e-8);
}

TEST_CASE("add and mul identities") {
  Rng rng(3);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 3, 4, 5});
  Tape<float> t;
  Value xv = t.leaf(x);
  Value zeros = t.leaf(Tensor<float>(x.shape, 0.0f));
  Value ones = t.leaf(Tensor<float>(x.shape, 1.0f));
  REQUIRE(max_abs_diff(t.val(add(t, xv, zeros)), x) == 0.0);
  REQUIRE(max_abs_diff(t.val(mul(t, xv, ones)), x) == 0.0);
}

TEST_CASE("mul broadcasts a per-channel gate") {
  Tensor<float> x(Shape{1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
  Tensor<float> gate(Shape{1, 2, 1, 1}, {0.5f, 2.0f});
  Tape<float> t;
  Value y = mul(t, t.leaf(x), t.leaf(gate));
  // brute-force broadcast oracle
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 2; ++w)
        REQUIRE(t.val(y).at4(0, c, h, w) ==
                Catch::Approx(x.at4(0, c, h, w) * gate.data[static_cast<std::size_t>(c)]));
}

TEST_CASE("broadcast contract rejects non-broadcastable shapes") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{1, 2, 2, 2}, 1.0f));
  Value y = t.leaf(Tensor<float>(Shape{1, 3, 1, 1}, 1.0f));
  REQUIRE_THROWS_AS(add(t, x, y), std::invalid_argument);
  REQUIRE_THROWS_AS(mul(t, x, y), std::invalid_argument);
}

TEST_CASE("concat shape law and boundary recovery") {
  Rng rng(5);
  Tensor<float> a = rand_tensor<float>(rng, Shape{1, 2, 3, 4});
  Tensor<float> bten = rand_tensor<float>(rng, Shape{1, 3, 3, 4});
  Tape<float> t;
  Value av = t.leaf(a), bv = t.leaf(bten);
  Value single = concat(t, {av});
  REQUIRE(max_abs_diff(t.val(single), a) == 0.0);

  Value cat = concat(t, {av, bv});
  REQUIRE(t.shape(cat) == Shape{1, 5, 3, 4});
  // slicing at the partition boundary recovers the inputs bit-exactly
  const Tensor<float>& cv = t.val(cat);
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) REQUIRE(cv.at4(0, c, h, w) == a.at4(0, c, h, w));
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) REQUIRE(cv.at4(0, 2 + c, h, w) == bten.at4(0, c, h, w));

  Value bad = t.leaf(Tensor<float>(Shape{1, 2, 2, 4}, 0.0f));
  REQUIRE_THROWS_AS(concat(t, {av, bad}), std::invalid_argument);
}

TEST_CASE("mean_over_axes values and shape laws") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{1, 1, 2, 2}, {1, 3, 5, 7}));
  Value m = mean_over_axes(t, x, kMeanH | kMeanW);
  REQUIRE(t.shape(m) == Shape{1, 1, 1, 1});
  REQUIRE(t.val(m).data[0] == Catch::Approx(4.0));

  Rng rng(9);
  Tensor<float> c = rand_tensor<float>(rng, Shape{2, 4, 3, 5});
  Value cv = t.leaf(c);
  Value mc = mean_over_axes(t, cv, kMeanC);
  REQUIRE(t.shape(mc) == Shape{2, 1, 3, 5});

  Value constant = t.leaf(Tensor<float>(Shape{2, 3, 4, 5}, 2.5f));
  for (int axes : {int(kMeanC), int(kMeanH | kMeanW), int(kMeanC | kMeanH | kMeanW)}) {
    Value mm = mean_over_axes(t, constant, axes);
    for (float v : t.val(mm).data) REQUIRE(v == Catch::Approx(2.5));
  }
  REQUIRE_THROWS_AS(mean_over_axes(t, cv, 0), std::invalid_argument);
}

TEST_CASE("dense affine map") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{1, 2}, {1, 2}));
  Value w = t.leaf(Tensor<float>(Shape{2, 2}, {1, 1, 0, 1}));
  Value b = t.leaf(Tensor<float>(Shape{2}, {0, 1}));
  Value y = dense(t, x, w, b);
  REQUIRE(t.val(y).data == std::vector<float>{3, 3});

  // identity weights leave x unchanged
  Rng rng(13);
  Tensor<float> xr = rand_tensor<float>(rng, Shape{3, 4});
  Tensor<float> eye(Shape{4, 4}, 0.0f);
  for (int i = 0; i < 4; ++i) eye.data[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
  Value idy = dense(t, t.leaf(xr), t.leaf(eye), t.leaf(Tensor<float>(Shape{4}, 0.0f)));
  REQUIRE(max_abs_diff(t.val(idy), xr) < 1e-6);

  // zero weights, constant bias
  Value zy = dense(t, t.leaf(xr), t.leaf(Tensor<float>(Shape{4, 4}, 0.0f)),
                   t.leaf(Tensor<float>(Shape{4}, 7.0f)));
  for (float v : t.val(zy).data) REQUIRE(v == 7.0f);

  Value wbad = t.leaf(Tensor<float>(Shape{2, 3}, 0.0f));
  Value xv = t.leaf(xr);
  Value bbad = t.leaf(Tensor<float>(Shape{2}, 0.0f));
  REQUIRE_THROWS_AS(dense(t, xv, wbad, bbad), std::invalid_argument);
}

TEST_CASE("pixel_shuffle index law and bijection") {
  Tape<float> t;
  Value x = t.leaf(Tensor<float>(Shape{1, 4, 1, 1}, {1, 2, 3, 4}));
  Value y = pixel_shuffle(t, x, 2);
  REQUIRE(t.shape(y) == Shape{1, 1, 2, 2});
  REQUIRE(t.val(y).data == std::vector<float>{1, 2, 3, 4});

  // r=1 is the identity
  Rng rng(17);
  Tensor<float> xr = rand_tensor<float>(rng, Shape{2, 3, 4, 5});
  Value same = pixel_shuffle(t, t.leaf(xr), 1);
  REQUIRE(max_abs_diff(t.val(same), xr) == 0.0);

  // bijection: applying the inverse index map recovers the input bit-exactly
  for (int r : {2, 3}) {
    Tensor<float> big = rand_tensor<float>(rng, Shape{2, 2 * r * r, 3, 4});
    Tape<float> t2;
    Value shuffled = pixel_shuffle(t2, t2.leaf(big), r);
    const Tensor<float>& sv = t2.val(shuffled);
    Tensor<float> back(big.shape);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 3; ++h)
          for (int w = 0; w < 4; ++w)
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < r; ++j)
                back.at4(n, c * r * r + i * r + j, h, w) = sv.at4(n, c, h * r + i, w * r + j);
    REQUIRE(max_abs_diff(back, big) == 0.0);
  }

  Value bad = t.leaf(Tensor<float>(Shape{1, 3, 2, 2}, 0.0f));
  REQUIRE_THROWS_AS(pixel_shuffle(t, bad, 2), std::invalid_argument);
}

TEST_CASE("mae_loss values") {
  Tape<float> t;
  Value a = t.leaf(Tensor<float>(Shape{3}, {1, -1, 3}));
  Value z = t.leaf(Tensor<float>(Shape{3}, 0.0f));
  REQUIRE(t.val(mae_loss(t, a, z)).data[0] == Catch::Approx(5.0 / 3.0));
  REQUIRE(t.val(mae_loss(t, a, a)).data[0] == 0.0f);

  Value p = t.leaf(Tensor<float>(Shape{1}, {0.0f}));
  Value q = t.leaf(Tensor<float>(Shape{1}, {2.0f}));
  REQUIRE(t.val(mae_loss(t, p, q)).data[0] == Catch::Approx(2.0));
  REQUIRE_THROWS_AS(mae_loss(t, p, a), std::invalid_argument);
}

TEST_CASE("csb cut/splice index map and identity") {
  // 4x4 plane holding 0..15: quadrants stacked in TL,TR,BL,BR channel order.
  Tensor<float> x(Shape{1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Tape<float> t;
  Value cut = csb_cut(t, t.leaf(x), 2);
  REQUIRE(t.shape(cut) == Shape{1, 4, 2, 2});
  const std::vector<float> want = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  REQUIRE(t.val(cut).data == want);

  Value back = csb_splice(t, cut, 2, 4, 4);
  REQUIRE(max_abs_diff(t.val(back), x) == 0.0);

  // odd extents take the symmetric-pad path and still restore bit-exactly
  Rng rng(23);
  for (auto [h, w] : {std::pair{5, 7}, std::pair{1, 4}, std::pair{3, 3}}) {
    Tensor<float> odd = rand_tensor<float>(rng, Shape{2, 3, h, w});
    Tape<float> t2;
    Value c2 = csb_cut(t2, t2.leaf(odd), 2);
    Value s2 = csb_splice(t2, c2, 2, h, w);
    REQUIRE(max_abs_diff(t2.val(s2), odd) == 0.0);
  }
}

TEST_CASE("forward ops keep finite values on finite inputs") {
  Rng rng(29);
  Tensor<float> x = rand_tensor<float>(rng, Shape{2, 4, 6, 6}, -300.0, 300.0);
  Tape<float> t;
  Value xv = t.leaf(x);
  REQUIRE(t.val(sigmoid(t, xv)).all_finite());
  REQUIRE(t.val(relu(t, xv)).all_finite());
  Value cut = csb_cut(t, xv, 2);
  REQUIRE(t.val(csb_splice(t, cut, 2, 6, 6)).all_finite());
}
