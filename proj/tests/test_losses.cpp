#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vsocc/losses.hpp"
#include "vsocc/rng.hpp"

using namespace vsocc;

namespace {

// Random voxel-wise distributions over K classes, laid out (1,K,N,1,1).
std::vector<Real> random_probs(Rng& rng, i64 K, i64 N) {
  std::vector<Real> p(static_cast<std::size_t>(K * N));
  for (i64 i = 0; i < N; ++i) {
    Real sum = 0.0;
    for (i64 c = 0; c < K; ++c) {
      const Real v = rng.uniform(0.05, 1.0);
      p[static_cast<std::size_t>(c * N + i)] = v;
      sum += v;
    }
    for (i64 c = 0; c < K; ++c) p[static_cast<std::size_t>(c * N + i)] /= sum;
  }
  return p;
}

OccupancyGrid random_labels(Rng& rng, i64 K, i64 N) {
  OccupancyGrid y(1, N, 1, 1);
  for (i64 i = 0; i < N; ++i)
    y.at(0, i, 0, 0) = static_cast<std::uint8_t>(rng.uniform_int(0, K));
  return y;
}

// Direct Lovász-extension evaluation: sort errors descending, accumulate the
// Jaccard gradient, dot. Shares nothing with the library's autodiff path.
double lovasz_reference(const std::vector<Real>& probs, const OccupancyGrid& y, i64 K,
                        i64 N) {
  double total = 0.0;
  i64 present = 0;
  for (i64 c = 0; c < K; ++c) {
    i64 gt_count = 0;
    for (i64 i = 0; i < N; ++i)
      if (y.at(0, i, 0, 0) == c) ++gt_count;
    if (gt_count == 0) continue;
    ++present;

    std::vector<std::pair<double, int>> err(static_cast<std::size_t>(N));
    for (i64 i = 0; i < N; ++i) {
      const bool is_c = y.at(0, i, 0, 0) == c;
      const double p = probs[static_cast<std::size_t>(c * N + i)];
      err[static_cast<std::size_t>(i)] = {is_c ? 1.0 - p : p, is_c ? 1 : 0};
    }
    std::sort(err.begin(), err.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    double inter = static_cast<double>(gt_count);
    double uni = static_cast<double>(gt_count);
    double prev_jac = 0.0, loss = 0.0;
    for (i64 k = 0; k < N; ++k) {
      inter -= err[static_cast<std::size_t>(k)].second;
      uni += 1 - err[static_cast<std::size_t>(k)].second;
      const double jac = 1.0 - inter / uni;
      loss += err[static_cast<std::size_t>(k)].first * (jac - prev_jac);
      prev_jac = jac;
    }
    total += loss;
  }
  return present ? total / static_cast<double>(present) : 0.0;
}

}  // namespace

TEST_CASE("focal at gamma 0 on a half-confident voxel is ln 2") {
  Tape tape;
  Tensor p = tape.input(Shape{1, 2, 1, 1, 1}, {0.5, 0.5});
  OccupancyGrid y(1, 1, 1, 1);
  y.at(0, 0, 0, 0) = 0;
  const Real loss = focal_loss(p, y, 0.0, {}).value()[0];
  CHECK(loss == doctest::Approx(0.69314718055994529).epsilon(1e-15));
}

TEST_CASE("focal is zero on certain correct predictions for any gamma") {
  Tape tape;
  // Channel-major layout: class-0 channel holds 1 for both voxels.
  Tensor p = tape.input(Shape{1, 3, 2, 1, 1}, {1, 1, 0, 0, 0, 0});
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 0;
  y.at(0, 1, 0, 0) = 0;
  for (Real gamma : {0.0, 1.0, 2.0, 5.0})
    CHECK(focal_loss(p, y, gamma, {}).value()[0] == 0.0);
}

TEST_CASE("focal hand example at gamma 2") {
  // mean of 0.01*(-ln 0.9) and 0.16*(-ln 0.6).
  Tape tape;
  Tensor p = tape.input(Shape{1, 2, 2, 1, 1}, {0.9, 0.4, 0.1, 0.6});
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 0;
  y.at(0, 1, 0, 0) = 1;
  const Real loss = focal_loss(p, y, 2.0, {}).value()[0];
  const Real want = 0.5 * (0.01 * -std::log(0.9) + 0.16 * -std::log(0.6));
  CHECK(loss == doctest::Approx(want).epsilon(1e-15));
  CHECK(loss == doctest::Approx(0.0413928524795684).epsilon(1e-13));
}

TEST_CASE("focal at gamma 0 reduces to cross-entropy on random instances") {
  Rng rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    const i64 K = 2 + rep % 4, N = 1 + static_cast<i64>(rng.uniform_int(1, 30));
    const auto pv = random_probs(rng, K, N);
    OccupancyGrid y = random_labels(rng, K, N);
    Tape tape;
    Tensor p = tape.input(Shape{1, K, N, 1, 1}, pv);
    const Real got = focal_loss(p, y, 0.0, {}).value()[0];
    double ce = 0.0;
    for (i64 i = 0; i < N; ++i)
      ce -= std::log(pv[static_cast<std::size_t>(y.at(0, i, 0, 0) * N + i)]);
    ce /= static_cast<double>(N);
    CHECK(got == doctest::Approx(ce).epsilon(1e-12));
  }
}

TEST_CASE("focal respects per-class alpha weights") {
  Tape tape;
  Tensor p = tape.input(Shape{1, 2, 2, 1, 1}, {0.5, 0.5, 0.5, 0.5});
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 0;
  y.at(0, 1, 0, 0) = 1;
  const Real loss = focal_loss(p, y, 0.0, {2.0, 4.0}).value()[0];
  CHECK(loss == doctest::Approx(0.5 * (2.0 + 4.0) * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("focal rejects out-of-range labels") {
  Tape tape;
  Tensor p = tape.input(Shape{1, 2, 1, 1, 1}, {0.5, 0.5});
  OccupancyGrid y(1, 1, 1, 1);
  y.at(0, 0, 0, 0) = 2;
  CHECK_THROWS_AS(focal_loss(p, y, 2.0, {}), ValidationError);
  CHECK_THROWS_AS(lovasz_softmax_loss(p, y), ValidationError);
  CHECK_THROWS_AS(scal_geo_loss(p, y), ValidationError);
  CHECK_THROWS_AS(scal_sem_loss(p, y), ValidationError);
}

TEST_CASE("lovasz on the documented four-voxel instance") {
  Tape tape;
  const std::vector<Real> p1 = {0.8, 0.6, 0.3, 0.1};
  std::vector<Real> pv(8);
  for (int i = 0; i < 4; ++i) {
    pv[static_cast<std::size_t>(4 + i)] = p1[static_cast<std::size_t>(i)];
    pv[static_cast<std::size_t>(i)] = 1.0 - p1[static_cast<std::size_t>(i)];
  }
  Tensor p = tape.input(Shape{1, 2, 4, 1, 1}, pv);
  OccupancyGrid y(1, 4, 1, 1);
  y.at(0, 0, 0, 0) = 1;
  y.at(0, 1, 0, 0) = 0;
  y.at(0, 2, 0, 0) = 1;
  y.at(0, 3, 0, 0) = 0;
  const Real got = lovasz_softmax_loss(p, y).value()[0];
  CHECK(got == doctest::Approx(lovasz_reference(pv, y, 2, 4)).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.49583333333333329).epsilon(1e-13));
}

TEST_CASE("lovasz equals the direct-formula reference on small random instances") {
  Rng rng(211);
  for (int rep = 0; rep < 60; ++rep) {
    const i64 K = 2 + rep % 3;
    const i64 N = 2 + static_cast<i64>(rng.uniform_int(0, 15));  // at most 16 voxels
    const auto pv = random_probs(rng, K, N);
    OccupancyGrid y = random_labels(rng, K, N);
    Tape tape;
    Tensor p = tape.input(Shape{1, K, N, 1, 1}, pv);
    const Real got = lovasz_softmax_loss(p, y).value()[0];
    CHECK(got == doctest::Approx(lovasz_reference(pv, y, K, N)).epsilon(1e-10));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("lovasz extremes") {
  Tape tape;
  // Hard-perfect: zero.
  Tensor good = tape.input(Shape{1, 2, 2, 1, 1}, {1, 0, 0, 1});
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 0;
  y.at(0, 1, 0, 0) = 1;
  CHECK(lovasz_softmax_loss(good, y).value()[0] == 0.0);

  // Single present class, perfectly wrong one-hot: Jaccard error one.
  Tensor bad = tape.input(Shape{1, 2, 2, 1, 1}, {1, 1, 0, 0});  // predicts class 0
  OccupancyGrid y1(1, 2, 1, 1);
  y1.at(0, 0, 0, 0) = 1;
  y1.at(0, 1, 0, 0) = 1;
  CHECK(lovasz_softmax_loss(bad, y1).value()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("geo affinity hand example") {
  // Soft occupancy [0.9, 0.2] against targets [1, 0]:
  // P = 0.9/1.1, R = 0.9, S = 0.8.
  Tape tape;
  Tensor p = tape.input(Shape{1, 2, 2, 1, 1}, {0.1, 0.8, 0.9, 0.2});
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 1;
  y.at(0, 1, 0, 0) = 0;
  const Real got = scal_geo_loss(p, y).value()[0];
  const double want = -(std::log(0.9 / 1.1) + std::log(0.9) + std::log(0.8));
  CHECK(got == doctest::Approx(want).epsilon(1e-14));
  CHECK(got == doctest::Approx(0.52917476243418726).epsilon(1e-13));
}

TEST_CASE("geo affinity skip rules at degenerate targets") {
  Tape tape;
  // All-empty scene: only the specificity term survives.
  Tensor p = tape.input(Shape{1, 2, 2, 1, 1}, {0.7, 0.9, 0.3, 0.1});
  OccupancyGrid empty(1, 2, 1, 1);
  const Real got = scal_geo_loss(p, empty).value()[0];
  CHECK(got == doctest::Approx(-std::log((0.7 + 0.9) / 2.0)).epsilon(1e-14));

  // All-occupied scene: the specificity term is skipped.
  OccupancyGrid fullg(1, 2, 1, 1);
  fullg.at(0, 0, 0, 0) = 1;
  fullg.at(0, 1, 0, 0) = 1;
  Tensor p2 = tape.input(Shape{1, 2, 2, 1, 1}, {0.1, 0.2, 0.9, 0.8});
  const Real got2 = scal_geo_loss(p2, fullg).value()[0];
  const double want2 = -(std::log((0.9 + 0.8) / (0.9 + 0.8)) + std::log((0.9 + 0.8) / 2.0));
  CHECK(got2 == doctest::Approx(want2).epsilon(1e-14));
}

TEST_CASE("sem affinity averages present classes and ignores absent ones") {
  Tape tape;
  // K=3, class 1 present on voxel 0 only, class 2 absent.
  const std::vector<Real> pv = {0.2, 0.7,   // empty channel
                                0.6, 0.2,   // class 1 mass
                                0.2, 0.1};  // class 2 mass
  Tensor p = tape.input(Shape{1, 3, 2, 1, 1}, pv);
  OccupancyGrid y(1, 2, 1, 1);
  y.at(0, 0, 0, 0) = 1;
  const Real got = scal_sem_loss(p, y).value()[0];
  // Class 1 alone: x=[0.6,0.2], t=[1,0] -> P=0.6/0.8, R=0.6, S=0.8.
  const double want = -(std::log(0.6 / 0.8) + std::log(0.6) + std::log(0.8));
  CHECK(got == doctest::Approx(want).epsilon(1e-14));

  // No semantic class present at all: exactly zero.
  OccupancyGrid none(1, 2, 1, 1);
  CHECK(scal_sem_loss(p, none).value()[0] == 0.0);
}

TEST_CASE("all four components vanish on hard-perfect predictions") {
  const i64 K = 4, N = 8;
  Rng rng(307);
  OccupancyGrid y = random_labels(rng, K, N);
  std::vector<Real> pv(static_cast<std::size_t>(K * N), 0.0);
  for (i64 i = 0; i < N; ++i)
    pv[static_cast<std::size_t>(y.at(0, i, 0, 0) * N + i)] = 1.0;
  Tape tape;
  Tensor p = tape.input(Shape{1, K, N, 1, 1}, pv);
  LossConfig cfg;
  LossBreakdown b = total_loss(p, y, cfg);
  CHECK(b.focal == 0.0);
  CHECK(b.lovasz == 0.0);
  CHECK(b.scal_geo == 0.0);
  CHECK(b.scal_sem == 0.0);
  CHECK(b.total == 0.0);
}

TEST_CASE("total is exactly the component sum at unit weights") {
  Rng rng(401);
  const i64 K = 3, N = 12;
  const auto pv = random_probs(rng, K, N);
  OccupancyGrid y = random_labels(rng, K, N);
  Tape tape;
  Tensor p = tape.input(Shape{1, K, N, 1, 1}, pv);
  LossConfig cfg;
  LossBreakdown b = total_loss(p, y, cfg);
  CHECK(b.total == b.focal + b.lovasz + b.scal_geo + b.scal_sem);
  CHECK(b.total_tensor.value()[0] == b.total);
  CHECK(b.total > 0.0);

  // Non-unit weights scale the corresponding components.
  Tape t2;
  Tensor p2 = t2.input(Shape{1, K, N, 1, 1}, pv);
  LossConfig cfg2;
  cfg2.w_focal = 2.0;
  cfg2.w_lovasz = 0.0;
  cfg2.w_geo = 1.0;
  cfg2.w_sem = 0.5;
  LossBreakdown b2 = total_loss(p2, y, cfg2);
  CHECK(b2.total ==
        doctest::Approx(2.0 * b.focal + b.scal_geo + 0.5 * b.scal_sem).epsilon(1e-14));
}

TEST_CASE("losses are invariant to a consistent voxel shuffle") {
  Rng rng(503);
  const i64 K = 3, N = 10;
  const auto pv = random_probs(rng, K, N);
  OccupancyGrid y = random_labels(rng, K, N);

  std::vector<i64> perm(static_cast<std::size_t>(N));
  std::iota(perm.begin(), perm.end(), 0);
  for (i64 i = N - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.uniform_int(0, i + 1))]);

  std::vector<Real> pv2(pv.size());
  OccupancyGrid y2(1, N, 1, 1);
  for (i64 i = 0; i < N; ++i) {
    const i64 src = perm[static_cast<std::size_t>(i)];
    for (i64 c = 0; c < K; ++c)
      pv2[static_cast<std::size_t>(c * N + i)] = pv[static_cast<std::size_t>(c * N + src)];
    y2.at(0, i, 0, 0) = y.at(0, src, 0, 0);
  }

  Tape ta, tb;
  Tensor pa = ta.input(Shape{1, K, N, 1, 1}, pv);
  Tensor pb = tb.input(Shape{1, K, N, 1, 1}, pv2);
  LossConfig cfg;
  LossBreakdown a = total_loss(pa, y, cfg);
  LossBreakdown b = total_loss(pb, y2, cfg);
  CHECK(a.focal == doctest::Approx(b.focal).epsilon(1e-10));
  CHECK(a.lovasz == doctest::Approx(b.lovasz).epsilon(1e-10));
  CHECK(a.scal_geo == doctest::Approx(b.scal_geo).epsilon(1e-10));
  CHECK(a.scal_sem == doctest::Approx(b.scal_sem).epsilon(1e-10));
}

TEST_CASE("inverse-frequency weights normalize to mean one over occurring classes") {
  OccupancyGrid g(1, 3, 1, 1);
  g.at(0, 0, 0, 0) = 0;
  g.at(0, 1, 0, 0) = 0;
  g.at(0, 2, 0, 0) = 1;  // class 2 never occurs
  const auto alpha = inverse_frequency_alpha({&g}, 3);
  REQUIRE(alpha.size() == 3);
  // Raw inverse frequencies 1/2 and 1/1; mean 3/4; normalized 2/3 and 4/3.
  CHECK(alpha[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(alpha[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(alpha[2] == 1.0);
  const auto uniform = inverse_frequency_alpha({}, 3);
  for (Real a : uniform) CHECK(a == 1.0);
}
