#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "vsocc/ops.hpp"
#include "vsocc/rng.hpp"
#include "vsocc/tensor.hpp"

using namespace vsocc;

namespace {

std::vector<Real> random_vec(Rng& rng, i64 n, double lo = -1.0, double hi = 1.0) {
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (Real& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Reference convolution: direct six-nested-loop summation, no shared code
// with the library kernel.
std::vector<Real> conv3d_reference(const std::vector<Real>& x, const std::vector<Real>& w,
                                   const std::vector<Real>& bias, i64 B, i64 Ci, i64 Co,
                                   i64 X, i64 Y, i64 Z, i64 k) {
  const i64 r = k / 2;
  std::vector<Real> out(static_cast<std::size_t>(B * Co * X * Y * Z));
  for (i64 b = 0; b < B; ++b)
    for (i64 co = 0; co < Co; ++co)
      for (i64 i = 0; i < X; ++i)
        for (i64 j = 0; j < Y; ++j)
          for (i64 z = 0; z < Z; ++z) {
            Real acc = bias[static_cast<std::size_t>(co)];
            for (i64 ci = 0; ci < Ci; ++ci)
              for (i64 dx = -r; dx <= r; ++dx)
                for (i64 dy = -r; dy <= r; ++dy)
                  for (i64 dz = -r; dz <= r; ++dz) {
                    const i64 ii = i + dx, jj = j + dy, zz = z + dz;
                    if (ii < 0 || ii >= X || jj < 0 || jj >= Y || zz < 0 || zz >= Z)
                      continue;
                    const i64 wi =
                        (((co * Ci + ci) * k + (dx + r)) * k + (dy + r)) * k + (dz + r);
                    const i64 xi = (((b * Ci + ci) * X + ii) * Y + jj) * Z + zz;
                    acc += w[static_cast<std::size_t>(wi)] * x[static_cast<std::size_t>(xi)];
                  }
            out[static_cast<std::size_t>((((b * Co + co) * X + i) * Y + j) * Z + z)] = acc;
          }
  return out;
}

}  // namespace

TEST_CASE("conv3d identity kernel maps ones to ones") {
  Tape tape;
  Tensor x = tape.input(Shape{1, 1, 3, 3, 3}, std::vector<Real>(27, 1.0));
  Tensor w = tape.input(Shape{1, 1, 1, 1, 1}, {1.0});
  Tensor b = tape.input(Shape{1}, {0.0});
  Tensor y = conv3d(x, w, b);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3, 3});
  for (Real v : y.value()) CHECK(v == 1.0);
}

TEST_CASE("conv3d zero kernel yields the bias everywhere") {
  Rng rng(11);
  Tape tape;
  Tensor x = tape.input(Shape{2, 3, 3, 2, 4}, random_vec(rng, 2 * 3 * 3 * 2 * 4));
  Tensor w = tape.input(Shape{2, 3, 3, 3, 3}, std::vector<Real>(2 * 3 * 27, 0.0));
  Tensor b = tape.input(Shape{2}, {-1.25, 4.5});
  Tensor y = conv3d(x, w, b);
  const auto& v = y.value();
  const i64 vol = 3 * 2 * 4;
  for (i64 b2 = 0; b2 < 2; ++b2)
    for (i64 co = 0; co < 2; ++co)
      for (i64 n = 0; n < vol; ++n)
        CHECK(v[static_cast<std::size_t>((b2 * 2 + co) * vol + n)] ==
              (co == 0 ? -1.25 : 4.5));
}

TEST_CASE("conv3d matches the brute-force oracle on 140 random instances") {
  Rng rng(7001);
  double worst = 0.0;
  for (int cs = 0; cs < 140; ++cs) {
    const i64 B = rng.uniform_int(1, 5), Ci = rng.uniform_int(1, 5);
    const i64 Co = rng.uniform_int(1, 5);
    const i64 X = rng.uniform_int(1, 5), Y = rng.uniform_int(1, 5), Z = rng.uniform_int(1, 5);
    const i64 k = rng.uniform(0.0, 1.0) < 0.5 ? 1 : 3;
    auto xv = random_vec(rng, B * Ci * X * Y * Z, -2.0, 2.0);
    auto wv = random_vec(rng, Co * Ci * k * k * k, -1.5, 1.5);
    auto bv = random_vec(rng, Co, -1.0, 1.0);
    Tape tape;
    Tensor y = conv3d(tape.input(Shape{B, Ci, X, Y, Z}, xv),
                      tape.input(Shape{Co, Ci, k, k, k}, wv), tape.input(Shape{Co}, bv));
    auto ref = conv3d_reference(xv, wv, bv, B, Ci, Co, X, Y, Z, k);
    const auto& got = y.value();
    REQUIRE(got.size() == ref.size());
    for (std::size_t n = 0; n < ref.size(); ++n) {
      const double rel = std::fabs(got[n] - ref[n]) / std::max(1.0, std::fabs(ref[n]));
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("conv3d k=5 path matches the oracle") {
  Rng rng(7002);
  for (int cs = 0; cs < 8; ++cs) {
    const i64 X = rng.uniform_int(3, 7), Y = rng.uniform_int(3, 7), Z = rng.uniform_int(1, 7);
    auto xv = random_vec(rng, 2 * X * Y * Z);
    auto wv = random_vec(rng, 2 * 125);
    auto bv = random_vec(rng, 1);
    Tape tape;
    Tensor y = conv3d(tape.input(Shape{1, 2, X, Y, Z}, xv),
                      tape.input(Shape{1, 2, 5, 5, 5}, wv), tape.input(Shape{1}, bv));
    auto ref = conv3d_reference(xv, wv, bv, 1, 2, 1, X, Y, Z, 5);
    const auto& got = y.value();
    for (std::size_t n = 0; n < ref.size(); ++n)
      CHECK(std::fabs(got[n] - ref[n]) <= 1e-12 * std::max(1.0, std::fabs(ref[n])));
  }
}

TEST_CASE("conv3d and conv1d_channel are linear in the input") {
  Rng rng(31);
  const Shape xs{2, 2, 3, 4, 3};
  auto av = random_vec(rng, xs.numel());
  auto bv = random_vec(rng, xs.numel());
  auto wv = random_vec(rng, 2 * 2 * 27);
  const double al = 0.7, be = -1.3;
  std::vector<Real> mixed(av.size());
  for (std::size_t n = 0; n < av.size(); ++n) mixed[n] = al * av[n] + be * bv[n];

  Tape tape;
  Tensor w = tape.input(Shape{2, 2, 3, 3, 3}, wv);
  Tensor zb = tape.input(Shape{2}, {0.0, 0.0});
  // Copies: growing the tape may reallocate node storage.
  const std::vector<Real> ya = conv3d(tape.input(xs, av), w, zb).value();
  const std::vector<Real> yb = conv3d(tape.input(xs, bv), w, zb).value();
  const std::vector<Real> ym = conv3d(tape.input(xs, mixed), w, zb).value();
  for (std::size_t n = 0; n < ym.size(); ++n)
    CHECK(ym[n] == doctest::Approx(al * ya[n] + be * yb[n]).epsilon(1e-10));
}

TEST_CASE("conv1d_channel identity and hand dot product") {
  Tape tape;
  // Identity: diagonal 1x1 kernel reproduces the input.
  Tensor s = tape.input(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor wid = tape.input(Shape{2, 2, 1}, {1, 0, 0, 1});
  Tensor zb = tape.input(Shape{2}, {0.0, 0.0});
  Tensor sid = conv1d_channel(s, wid, zb);  // emit before taking value refs
  CHECK(sid.value() == s.value());

  // (1,2,2) values [[1,2],[3,4]], single out-channel summing rows -> [4,6].
  Tensor s2 = tape.input(Shape{1, 2, 2}, {1, 2, 3, 4});
  Tensor w2 = tape.input(Shape{1, 2, 1}, {1, 1});
  Tensor b2 = tape.input(Shape{1}, {0.0});
  const auto& y = conv1d_channel(s2, w2, b2).value();
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 6.0);

  // Zero kernel, bias 5 -> all outputs 5.
  Tensor w3 = tape.input(Shape{1, 2, 1}, {0.0, 0.0});
  Tensor b3 = tape.input(Shape{1}, {5.0});
  for (Real v : conv1d_channel(s2, w3, b3).value()) CHECK(v == 5.0);
}

TEST_CASE("pointwise activations") {
  Tape tape;
  Tensor x = tape.input(Shape{1, 1, 1, 1, 4}, {0.0, -3.2, 3.2, 2.0});
  const std::vector<Real> sg = sigmoid(x).value();
  CHECK(sg[0] == 0.5);
  CHECK(sg[3] == doctest::Approx(0.88079707797788231).epsilon(1e-15));
  const std::vector<Real> rl = relu(x).value();
  CHECK(rl[1] == 0.0);
  CHECK(rl[2] == 3.2);
  for (Real v : sg) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("concat_channels layout and round-trip") {
  Rng rng(5);
  Tape tape;
  auto av = random_vec(rng, 2 * 3 * 2 * 2);
  Tensor a = tape.input(Shape{1, 2, 3, 2, 2}, av);
  Tensor b = tape.input(Shape{1, 3, 3, 2, 2}, random_vec(rng, 3 * 3 * 2 * 2));
  Tensor cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape{1, 5, 3, 2, 2});

  Tensor zeros = tape.input(Shape{1, 2, 3, 2, 2}, std::vector<Real>(av.size(), 0.0));
  Tensor back = slice_channels(concat_channels(a, zeros), 0, 2);
  CHECK(back.value() == av);

  // Gradient of sum(concat(a,b)) w.r.t. a is all ones.
  Tensor total = sum_all(cat);
  tape.backward(total);
  for (Real g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("mul_broadcast gates per z") {
  Tape tape;
  Tensor x = tape.input(Shape{1, 1, 1, 1, 2}, {3.0, 5.0});
  Tensor ones = tape.input(Shape{1, 1, 2}, {1.0, 1.0});
  Tensor gated = mul_broadcast(x, ones);  // emit before taking value refs
  CHECK(gated.value() == x.value());
  Tensor zero = tape.input(Shape{1, 1, 2}, {0.0, 0.0});
  for (Real v : mul_broadcast(x, zero).value()) CHECK(v == 0.0);
  Tensor g = tape.input(Shape{1, 1, 2}, {0.5, 2.0});
  const auto& y = mul_broadcast(x, g).value();
  CHECK(y[0] == 1.5);
  CHECK(y[1] == 10.0);
}

TEST_CASE("squeeze_xy plane means") {
  Tape tape;
  Tensor c = tape.input(Shape{1, 1, 2, 2, 1}, std::vector<Real>(4, 3.0));
  CHECK(squeeze_xy(c).value()[0] == 3.0);

  // z=0 plane [[1,2],[3,4]], z=1 plane [[5,6],[7,8]] -> [2.5, 6.5].
  Tensor x = tape.input(Shape{1, 1, 2, 2, 2}, {1, 5, 2, 6, 3, 7, 4, 8});
  const std::vector<Real> s = squeeze_xy(x).value();
  CHECK(s[0] == 2.5);
  CHECK(s[1] == 6.5);

  // Swapping the two x-rows leaves the mean unchanged.
  Tensor xp = tape.input(Shape{1, 1, 2, 2, 2}, {3, 7, 4, 8, 1, 5, 2, 6});
  CHECK(squeeze_xy(xp).value() == s);
}

TEST_CASE("backward basics and state errors") {
  Rng rng(77);
  {
    Tape tape;
    Tensor x = tape.input(Shape{2, 1, 2, 2, 2}, random_vec(rng, 16));
    Tensor loss = sum_all(x);
    tape.backward(loss);
    for (Real g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
  }
  {
    Tape tape;
    Tensor x = tape.input(Shape{1, 1, 1, 2, 3}, std::vector<Real>(6, 0.0));
    tape.backward(sum_all(sigmoid(x)));
    for (Real g : x.grad()) CHECK(g == 0.25);
  }
}

TEST_CASE("forward ops are deterministic") {
  Rng rng(123);
  auto xv = random_vec(rng, 2 * 2 * 3 * 3 * 4);
  auto wv = random_vec(rng, 2 * 2 * 27);
  auto bv = random_vec(rng, 2);
  auto run = [&] {
    Tape tape;
    Tensor y = conv3d(tape.input(Shape{2, 2, 3, 3, 4}, xv),
                      tape.input(Shape{2, 2, 3, 3, 3}, wv), tape.input(Shape{2}, bv));
    return sigmoid(y).value();
  };
  CHECK(run() == run());
}

TEST_CASE("shape errors name the offending shapes") {
  Tape tape;
  Tensor x = tape.input(Shape{1, 2, 2, 2, 2}, std::vector<Real>(16, 0.0));
  Tensor w = tape.input(Shape{1, 3, 1, 1, 1}, std::vector<Real>(3, 0.0));
  Tensor b = tape.input(Shape{1}, {0.0});
  CHECK_THROWS_AS(conv3d(x, w, b), ShapeError);
  CHECK_THROWS_WITH_AS(conv3d(x, w, b), doctest::Contains("3"), ShapeError);
}

TEST_CASE("finite outputs on finite inputs") {
  Rng rng(9);
  Tape tape;
  Tensor x = tape.input(Shape{1, 2, 3, 3, 3}, random_vec(rng, 2 * 27, -100.0, 100.0));
  Tensor w = tape.input(Shape{2, 2, 3, 3, 3}, random_vec(rng, 2 * 2 * 27, -3.0, 3.0));
  Tensor b = tape.input(Shape{2}, random_vec(rng, 2));
  Tensor y = relu(conv3d(x, w, b));
  for (Real v : y.value()) CHECK(std::isfinite(v));
}
