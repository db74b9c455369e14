#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>
#include <vector>

#include "vsocc/metrics.hpp"
#include "vsocc/synthscene.hpp"

using namespace vsocc;

TEST_CASE("generation is a pure function of config and seed") {
  SceneConfig cfg;
  SceneSample a = generate(cfg, 42);
  SceneSample b = generate(cfg, 42);
  CHECK(a.gt.labels == b.gt.labels);
  CHECK(a.feat_cam.data == b.feat_cam.data);
  CHECK(a.feat_lidar.data == b.feat_lidar.data);
  CHECK(a.seed == 42);

  SceneSample c = generate(cfg, 43);
  CHECK(a.gt.labels != c.gt.labels);
}

TEST_CASE("single class confined to its band occupies only those layers") {
  SceneConfig cfg;
  cfg.classes = {{1, "shelf", 0.0, 1.0, 2, 4, 2.0}};
  // [0,1] m over [-5,3] at 0.5 m/voxel is exactly z indices [10,12).
  for (std::uint64_t seed : {1ull, 7ull, 19ull}) {
    SceneSample s = generate(cfg, seed);
    i64 occupied = 0;
    for (i64 i = 0; i < cfg.x; ++i)
      for (i64 j = 0; j < cfg.y; ++j)
        for (i64 z = 0; z < cfg.z; ++z)
          if (s.gt.at(0, i, j, z) != 0) {
            ++occupied;
            CHECK(z >= 10);
            CHECK(z < 12);
          }
    CHECK(occupied > 0);
  }
}

TEST_CASE("every placed voxel respects its class height band") {
  SceneConfig cfg;
  std::map<int, std::pair<i64, i64>> band;  // class -> [zlo, zhi)
  for (const auto& p : cfg.classes) {
    const double v = cfg.voxel_m();
    band[p.class_id] = {static_cast<i64>((p.lo_m - cfg.z_min_m) / v + 0.5),
                        static_cast<i64>((p.hi_m - cfg.z_min_m) / v + 0.5)};
  }
  for (std::uint64_t seed : {0ull, 5ull, 11ull, 23ull}) {
    SceneSample s = generate(cfg, seed);
    for (i64 i = 0; i < cfg.x; ++i)
      for (i64 j = 0; j < cfg.y; ++j)
        for (i64 z = 0; z < cfg.z; ++z) {
          const int c = s.gt.at(0, i, j, z);
          if (c == 0) continue;
          const auto [lo, hi] = band.at(c);
          CHECK(z >= lo);
          CHECK(z < hi);
        }
  }
}

TEST_CASE("seed-averaged pedestrian mass concentrates inside its band") {
  SceneConfig cfg;
  const i64 K = 7;
  HeightHistogram h = height_histogram(generate(cfg, 0).gt, K);
  for (std::uint64_t seed = 1; seed < 100; ++seed) accumulate(h, generate(cfg, seed).gt);
  REQUIRE(h.defined[3]);  // pedestrian-like id
  Real inside = 0.0, total = 0.0;
  for (i64 z = 0; z < 16; ++z) {
    total += h.dist[3][static_cast<std::size_t>(z)];
    if (z >= 6 && z < 14) inside += h.dist[3][static_cast<std::size_t>(z)];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(inside >= 0.95 * total);
}

TEST_CASE("feature volumes share the grid dims and stay finite") {
  SceneConfig cfg;
  SceneSample s = generate(cfg, 9);
  CHECK(s.feat_cam.shape == Shape{1, cfg.channels, cfg.x, cfg.y, cfg.z});
  CHECK(s.feat_lidar.shape == Shape{1, cfg.channels, cfg.x, cfg.y, cfg.z});
  for (Real v : s.feat_cam.data) CHECK(std::isfinite(v));
  for (Real v : s.feat_lidar.data) CHECK(std::isfinite(v));
}

TEST_CASE("dataset streams draw disjoint reproducible seed ranges") {
  SceneConfig cfg;
  auto [train, val] = make_datasets(cfg, 8, 2, 1000);
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  std::set<std::uint64_t> seeds;
  for (i64 i = 0; i < train.size(); ++i) seeds.insert(train.seed_of(i));
  for (i64 i = 0; i < val.size(); ++i) seeds.insert(val.seed_of(i));
  CHECK(seeds.size() == 10);  // all distinct
  CHECK(*seeds.begin() == 1000);
  CHECK(*seeds.rbegin() == 1009);

  // Validation content does not depend on how much training data was asked
  // for, only on its own seed slot; and re-creation reproduces it.
  auto [train2, val2] = make_datasets(cfg, 8, 2, 1000);
  CHECK(val.sample(0).gt.labels == val2.sample(0).gt.labels);
  CHECK(val.sample(1).feat_cam.data == val2.sample(1).feat_cam.data);
  SceneSample direct = generate(cfg, 1008);
  CHECK(val.sample(0).gt.labels == direct.gt.labels);
}

TEST_CASE("overfull scenes fail with the offending seed attached") {
  SceneConfig cfg;
  cfg.x = 6;
  cfg.y = 6;
  cfg.max_place_retries = 8;
  cfg.classes = {{1, "slab", -3.0, -2.5, 6, 6, 3.0}};  // 3 grid-filling slabs can't fit
  bool threw = false;
  try {
    generate(cfg, 77);
  } catch (const GenerationError& e) {
    threw = true;
    CHECK(e.seed() == 77);
    CHECK(std::string(e.what()).find("77") != std::string::npos);
    CHECK(std::string(e.what()).find("slab") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("config validation names the problem") {
  SceneConfig cfg;
  cfg.channels = 3;
  CHECK_THROWS_AS(validate(cfg), ConfigError);

  SceneConfig above;
  above.classes = {{1, "kite", 2.0, 9.0, 1, 2, 1.0}};  // band exceeds z_max
  CHECK_THROWS_AS(validate(above), ConfigError);

  SceneConfig wide;
  wide.classes = {{1, "plate", -1.0, 0.0, 30, 40, 1.0}};  // footprint exceeds grid
  CHECK_THROWS_AS(validate(wide), ConfigError);

  SceneConfig dup;
  dup.classes = {{1, "a", -1.0, 0.0, 1, 2, 1.0}, {1, "b", 0.0, 1.0, 1, 2, 1.0}};
  CHECK_THROWS_AS(validate(dup), ConfigError);

  SceneConfig thin;
  thin.classes = {{1, "film", -1.0, -0.9, 1, 2, 1.0}};  // thinner than a voxel
  CHECK_THROWS_AS(validate(thin), ConfigError);

  SceneConfig ok;
  validate(ok);  // the default config is fine
}

TEST_CASE("modalities specialize: lidar reads geometry, camera reads class") {
  SceneConfig cfg;
  ModalProbeResult r = modal_asymmetry_probe(cfg, {0, 1, 2});
  CHECK(r.occ_acc_lidar > r.occ_acc_cam);
  CHECK(r.cls_acc_cam > r.cls_acc_lidar);
  // Sanity floors: well above chance on each modality's specialty (class
  // chance is 1/6; the structured band noise caps a linear class probe).
  CHECK(r.occ_acc_lidar > 0.6);
  CHECK(r.cls_acc_cam > 0.35);
}
