#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "vsocc/attention.hpp"
#include "vsocc/ops.hpp"
#include "vsocc/rng.hpp"

using namespace vsocc;

namespace {

std::vector<Real> random_vec(Rng& rng, i64 n, double lo = -1.0, double hi = 1.0) {
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (Real& x : v) x = rng.uniform(lo, hi);
  return v;
}

void zero_params(SEParams& p) {
  for (ParamTensor* t : {p.reduce_w, p.reduce_b, p.expand_w, p.expand_b})
    std::fill(t->value.begin(), t->value.end(), 0.0);
}

inline i64 vidx(i64 c, i64 C, i64 i, i64 X, i64 j, i64 Y, i64 z, i64 Z) {
  (void)X;
  return ((c * X + i) * Y + j) * Z + z;
}

}  // namespace

TEST_CASE("se params register with the documented shapes") {
  ModuleParams store(7);
  SEParams p = make_se_params(store, "a", 8, 4);
  CHECK(p.channels == 8);
  CHECK(p.ratio == 4);
  CHECK(store.at("a.reduce.w").shape == Shape{2, 8, 1});
  CHECK(store.at("a.reduce.b").shape == Shape{2});
  CHECK(store.at("a.expand.w").shape == Shape{8, 2, 1});
  CHECK(store.at("a.expand.b").shape == Shape{8});
  CHECK_THROWS_AS(make_se_params(store, "bad", 6, 4), ShapeError);
  CHECK_THROWS_AS(make_se_params(store, "bad2", 4, 0), ShapeError);
}

TEST_CASE("excite with all-zero params gates at one half") {
  ModuleParams store(0);
  SEParams p = make_se_params(store, "se", 4, 2);
  zero_params(p);
  Tape tape;
  Rng rng(11);
  Tensor s = tape.input(Shape{2, 4, 3}, random_vec(rng, 24, -3.0, 3.0));
  for (Real v : excite(s, p).value()) CHECK(v == 0.5);
}

TEST_CASE("excite hand example with unit kernels") {
  // C=2, r=2; both kernels all-ones, zero biases. s = [[1,2],[3,4]]:
  // reduce sums channels -> [4,6]; expand copies -> sigmoid([4,6]) per channel.
  ModuleParams store(0);
  SEParams p = make_se_params(store, "se", 2, 2);
  zero_params(p);
  std::fill(p.reduce_w->value.begin(), p.reduce_w->value.end(), 1.0);
  std::fill(p.expand_w->value.begin(), p.expand_w->value.end(), 1.0);
  Tape tape;
  Tensor s = tape.input(Shape{1, 2, 2}, {1, 2, 3, 4});
  const std::vector<Real> g = excite(s, p).value();
  CHECK(g[0] == doctest::Approx(0.98201379003790845).epsilon(1e-15));  // sigmoid(4)
  CHECK(g[1] == doctest::Approx(0.99752737684336534).epsilon(1e-15));  // sigmoid(6)
  CHECK(g[2] == g[0]);
  CHECK(g[3] == g[1]);
}

TEST_CASE("excite outputs are bounded gates") {
  ModuleParams store(3);
  SEParams p = make_se_params(store, "se", 8, 4);
  Tape tape;
  Rng rng(5);
  // Moderate profiles keep the pre-activation away from saturation: strictly
  // inside (0,1).
  Tensor s = tape.input(Shape{1, 8, 6}, random_vec(rng, 48, -3.0, 3.0));
  for (Real v : excite(s, p).value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // Huge profiles saturate the sigmoid to exactly 1.0 in double arithmetic
  // (exp(-x) underflows against 1), so only the closed bound can hold there.
  Tensor big = tape.input(Shape{1, 8, 6}, random_vec(rng, 48, -1000.0, 1000.0));
  for (Real v : excite(big, p).value()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("zero params halve the input through either forward") {
  ModuleParams store(0);
  SEParams p = make_se_params(store, "se", 4, 2);
  zero_params(p);
  Tape tape;
  Rng rng(17);
  const auto xv = random_vec(rng, 1 * 4 * 3 * 2 * 5, -2.0, 2.0);
  Tensor x = tape.input(Shape{1, 4, 3, 2, 5}, xv);
  const std::vector<Real> ya = seattention3d_forward(x, p).value();
  const std::vector<Real> yb = senet_forward(x, p).value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    CHECK(ya[i] == 0.5 * xv[i]);
    CHECK(yb[i] == 0.5 * xv[i]);
  }
}

TEST_CASE("height-resolved and plain pooling coincide at Z=1, bitwise") {
  ModuleParams store(21);
  SEParams p = make_se_params(store, "se", 8, 4);
  Tape tape;
  Rng rng(23);
  Tensor x = tape.input(Shape{2, 8, 3, 5, 1}, random_vec(rng, 2 * 8 * 3 * 5, -2.0, 2.0));
  Tensor ya = seattention3d_forward(x, p);
  Tensor yb = senet_forward(x, p);
  CHECK(ya.value() == yb.value());
}

TEST_CASE("plain pooling gate is constant along z by construction") {
  ModuleParams store(29);
  SEParams p = make_se_params(store, "se", 4, 2);
  Tape tape;
  Rng rng(31);
  const i64 C = 4, X = 3, Y = 3, Z = 6;
  const auto xv = random_vec(rng, C * X * Y * Z, -2.0, 2.0);
  Tensor x = tape.input(Shape{1, C, X, Y, Z}, xv);
  const std::vector<Real> g = excite(squeeze_xyz(x), p).value();
  CHECK(g.size() == static_cast<std::size_t>(C));  // one gate per channel, not per (c,z)
  const std::vector<Real> y = senet_forward(x, p).value();
  for (i64 c = 0; c < C; ++c)
    for (i64 i = 0; i < X; ++i)
      for (i64 j = 0; j < Y; ++j)
        for (i64 z = 0; z < Z; ++z) {
          const i64 idx = vidx(c, C, i, X, j, Y, z, Z);
          CHECK(y[static_cast<std::size_t>(idx)] ==
                xv[static_cast<std::size_t>(idx)] * g[static_cast<std::size_t>(c)]);
        }
}

TEST_CASE("witness input where height-resolved gates differ across z") {
  // Hand-set excitation: reduce sums both channels, expand scales by 3.
  // z=0 planes are all zero (profile 0 -> gate 0.5); z=1 planes are all ten
  // (profile 10 -> pre-activation 60 -> gate ~1). Difference far above 0.01.
  ModuleParams store(0);
  SEParams p = make_se_params(store, "se", 2, 2);
  zero_params(p);
  std::fill(p.reduce_w->value.begin(), p.reduce_w->value.end(), 1.0);
  std::fill(p.expand_w->value.begin(), p.expand_w->value.end(), 3.0);
  Tape tape;
  std::vector<Real> xv(2 * 2 * 2 * 2, 0.0);
  for (i64 c = 0; c < 2; ++c)
    for (i64 i = 0; i < 2; ++i)
      for (i64 j = 0; j < 2; ++j) xv[static_cast<std::size_t>(vidx(c, 2, i, 2, j, 2, 1, 2))] = 10.0;
  Tensor x = tape.input(Shape{1, 2, 2, 2, 2}, xv);
  const std::vector<Real> g = excite(squeeze_xy(x), p).value();
  // g laid out (B,C,Z): [c0z0, c0z1, c1z0, c1z1].
  CHECK(g[0] == 0.5);
  CHECK(g[1] > 0.99);
  CHECK(std::abs(g[1] - g[0]) > 0.01);
  CHECK(std::abs(g[3] - g[2]) > 0.01);
}

TEST_CASE("input constant along z makes both variants agree") {
  ModuleParams store(37);
  SEParams p = make_se_params(store, "se", 4, 2);
  Tape tape;
  const i64 C = 4, X = 3, Y = 2, Z = 4;
  Tensor x = tape.input(Shape{1, C, X, Y, Z}, std::vector<Real>(C * X * Y * Z, 3.0));
  const std::vector<Real> ya = seattention3d_forward(x, p).value();
  const std::vector<Real> yb = senet_forward(x, p).value();
  for (std::size_t i = 0; i < ya.size(); ++i)
    CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-15));
}

TEST_CASE("permuting z planes permutes the height-resolved output with them") {
  ModuleParams store(41);
  SEParams p = make_se_params(store, "se", 4, 4);
  const i64 C = 4, X = 3, Y = 3, Z = 5;
  Tape tape;
  Rng rng(43);
  const auto xv = random_vec(rng, C * X * Y * Z, -2.0, 2.0);
  std::vector<Real> xr(xv.size());
  for (i64 c = 0; c < C; ++c)
    for (i64 i = 0; i < X; ++i)
      for (i64 j = 0; j < Y; ++j)
        for (i64 z = 0; z < Z; ++z)
          xr[static_cast<std::size_t>(vidx(c, C, i, X, j, Y, Z - 1 - z, Z))] =
              xv[static_cast<std::size_t>(vidx(c, C, i, X, j, Y, z, Z))];
  Tensor x = tape.input(Shape{1, C, X, Y, Z}, xv);
  Tensor xrev = tape.input(Shape{1, C, X, Y, Z}, xr);
  const std::vector<Real> y = seattention3d_forward(x, p).value();
  const std::vector<Real> yr = seattention3d_forward(xrev, p).value();
  for (i64 c = 0; c < C; ++c)
    for (i64 i = 0; i < X; ++i)
      for (i64 j = 0; j < Y; ++j)
        for (i64 z = 0; z < Z; ++z)
          CHECK(yr[static_cast<std::size_t>(vidx(c, C, i, X, j, Y, Z - 1 - z, Z))] ==
                y[static_cast<std::size_t>(vidx(c, C, i, X, j, Y, z, Z))]);
}

TEST_CASE("gating never amplifies a coordinate") {
  ModuleParams store(47);
  SEParams p = make_se_params(store, "se", 8, 4);
  Tape tape;
  Rng rng(53);
  const auto xv = random_vec(rng, 8 * 4 * 4 * 3, -5.0, 5.0);
  Tensor x = tape.input(Shape{1, 8, 4, 4, 3}, xv);
  const std::vector<Real> ya = seattention3d_forward(x, p).value();
  const std::vector<Real> yb = senet_forward(x, p).value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    CHECK(std::abs(ya[i]) <= std::abs(xv[i]));
    CHECK(std::abs(yb[i]) <= std::abs(xv[i]));
  }
}

TEST_CASE("variant names round-trip and reject junk") {
  CHECK(attention_variant_from_string("seattention3d") == AttentionVariant::SEAttention3D);
  CHECK(attention_variant_from_string("senet") == AttentionVariant::SENet);
  CHECK(to_string(AttentionVariant::SEAttention3D) == std::string("seattention3d"));
  CHECK(to_string(AttentionVariant::SENet) == std::string("senet"));
  CHECK_THROWS_AS(attention_variant_from_string("se3d"), ConfigError);
}
