#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vsocc/config.hpp"
#include "vsocc/io.hpp"
#include "vsocc/rng.hpp"

using namespace vsocc;

namespace {

struct TempDir {
  std::filesystem::path p;
  TempDir() {
    p = std::filesystem::temp_directory_path() /
        ("vsocc-test-" + std::to_string(::getpid()));
    std::filesystem::create_directories(p);
  }
  ~TempDir() { std::filesystem::remove_all(p); }
  std::string file(const std::string& name) const { return (p / name).string(); }
};

std::vector<Real> random_vec(Rng& rng, i64 n) {
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (Real& x : v) x = rng.uniform(-10.0, 10.0);
  return v;
}

void corrupt_byte(const std::string& path, std::size_t offset, std::uint8_t value) {
  auto bytes = read_file_bytes(path);
  bytes.at(offset) = value;
  write_file_bytes(path, bytes.data(), bytes.size());
}

}  // namespace

TEST_CASE("dense tensors round-trip exactly") {
  TempDir dir;
  Rng rng(1);
  DenseTensor t(Shape{2, 3, 4, 5, 6}, random_vec(rng, 2 * 3 * 4 * 5 * 6));
  const std::string path = dir.file("a.ten");
  write_tensor(path, t);
  DenseTensor back = read_tensor(path);
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);
}

TEST_CASE("label grids round-trip exactly") {
  TempDir dir;
  Rng rng(2);
  OccupancyGrid g(1, 4, 5, 6);
  for (auto& v : g.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 7));
  const std::string path = dir.file("a.lab");
  write_labels(path, g);
  OccupancyGrid back = read_labels(path);
  CHECK(back.b == 1);
  CHECK(back.x == 4);
  CHECK(back.y == 5);
  CHECK(back.z == 6);
  CHECK(back.labels == g.labels);
}

TEST_CASE("tensor reader rejects malformed files") {
  TempDir dir;
  Rng rng(3);
  DenseTensor t(Shape{1, 2, 3, 3, 4}, random_vec(rng, 2 * 3 * 3 * 4));
  const std::string path = dir.file("bad.ten");

  // Wrong magic.
  write_tensor(path, t);
  corrupt_byte(path, 0, 'X');
  CHECK_THROWS_AS(read_tensor(path), ValidationError);

  // Truncated payload.
  write_tensor(path, t);
  auto bytes = read_file_bytes(path);
  write_file_bytes(path, bytes.data(), bytes.size() - 9);
  CHECK_THROWS_AS(read_tensor(path), ValidationError);

  // Trailing garbage.
  write_tensor(path, t);
  bytes = read_file_bytes(path);
  bytes.push_back(0);
  write_file_bytes(path, bytes.data(), bytes.size());
  CHECK_THROWS_AS(read_tensor(path), ValidationError);

  // Implausible dimension (0 voxels on one axis).
  write_tensor(path, t);
  corrupt_byte(path, 8, 0);  // first u32 dim -> 0
  corrupt_byte(path, 9, 0);
  corrupt_byte(path, 10, 0);
  corrupt_byte(path, 11, 0);
  CHECK_THROWS_AS(read_tensor(path), ValidationError);

  // Missing file.
  CHECK_THROWS_AS(read_tensor(dir.file("absent.ten")), ValidationError);

  // Label magic on the tensor reader.
  OccupancyGrid g(1, 2, 2, 2);
  write_labels(path, g);
  CHECK_THROWS_AS(read_tensor(path), ValidationError);
}

TEST_CASE("checkpoints carry params, seed and config text") {
  TempDir dir;
  ModuleParams store(99);
  store.add_uniform("enc.w", Shape{4, 2, 3, 3, 3}, 54);
  store.add_zeros("enc.b", Shape{4});
  store.add_full("head.scale", Shape{1}, 2.5);
  const std::string cfg = "[model]\nchannels = 4\n";
  Checkpoint ck = snapshot(store, cfg);
  CHECK(ck.seed == 99);
  CHECK(ck.config_text == cfg);
  REQUIRE(ck.entries.size() == 3);
  CHECK(ck.entries[0].name == "enc.w");  // registration order preserved

  const std::string path = dir.file("m.ckpt");
  write_checkpoint(path, ck);
  Checkpoint back = read_checkpoint(path);
  CHECK(back.seed == 99);
  CHECK(back.config_text == cfg);
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].name == ck.entries[i].name);
    CHECK(back.entries[i].shape == ck.entries[i].shape);
    CHECK(back.entries[i].value == ck.entries[i].value);
  }

  // Loading restores values bit-for-bit and zeroes gradients.
  ModuleParams store2(99);
  ParamTensor& w = store2.add_zeros("enc.w", Shape{4, 2, 3, 3, 3});
  store2.add_zeros("enc.b", Shape{4});
  ParamTensor& s = store2.add_zeros("head.scale", Shape{1});
  w.grad.assign(w.grad.size(), 7.0);
  load_into(store2, back);
  CHECK(w.value == store.at("enc.w").value);
  CHECK(s.value[0] == 2.5);
  for (Real g : w.grad) CHECK(g == 0.0);
}

TEST_CASE("checkpoint loading rejects mismatched stores") {
  ModuleParams store(1);
  store.add_zeros("a", Shape{2});
  Checkpoint ck = snapshot(store, "");

  ModuleParams wrong_shape(1);
  wrong_shape.add_zeros("a", Shape{3});
  CHECK_THROWS_AS(load_into(wrong_shape, ck), ValidationError);

  ModuleParams missing(1);
  CHECK_THROWS_AS(load_into(missing, ck), ValidationError);

  ModuleParams extra(1);
  extra.add_zeros("a", Shape{2});
  extra.add_zeros("b", Shape{2});
  CHECK_THROWS_AS(load_into(extra, ck), ValidationError);
}

TEST_CASE("corrupted checkpoints are rejected") {
  TempDir dir;
  ModuleParams store(5);
  store.add_uniform("w", Shape{8, 8}, 8);
  const std::string path = dir.file("c.ckpt");
  write_checkpoint(path, snapshot(store, "x = 1\n"));

  corrupt_byte(path, 2, 'Z');
  CHECK_THROWS_AS(read_checkpoint(path), ValidationError);

  write_checkpoint(path, snapshot(store, "x = 1\n"));
  auto bytes = read_file_bytes(path);
  write_file_bytes(path, bytes.data(), bytes.size() / 2);
  CHECK_THROWS_AS(read_checkpoint(path), ValidationError);
}

TEST_CASE("digests are stable and match known vectors") {
  // Published FNV-1a 64 test vectors.
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);
  CHECK(digest_hex(0xcbf29ce484222325ull) == "cbf29ce484222325");

  TempDir dir;
  const std::string path = dir.file("blob");
  write_file_text(path, "foobar");
  CHECK(fnv1a64_file(path) == 0x85944171f73967e8ull);
}

TEST_CASE("default config round-trips through its text form") {
  ExperimentConfig c = default_config();
  const std::string text = config_to_text(c);
  ExperimentConfig back = config_from_text(text);
  CHECK(config_to_text(back) == text);

  // Spot-check the round-trip is semantic, not just textual.
  CHECK(back.model.channels == c.model.channels);
  CHECK(back.model.classes == c.model.classes);
  CHECK(back.train.steps == c.train.steps);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.train.seeds == c.train.seeds);
  CHECK(back.scene.sigma_distractor == c.scene.sigma_distractor);
  CHECK(back.loss.gamma == c.loss.gamma);
}

TEST_CASE("non-default values survive the round-trip") {
  ExperimentConfig c = default_config();
  c.model.channels = 16;
  c.model.classes = 3;  // alpha below must match this length
  c.model.reduction = 8;
  c.model.vsf_mode = VsfMode::ConcatFusion;
  c.model.attention = AttentionVariant::SENet;
  c.model.partition.kind = PartitionSpec::Kind::Uniform;
  c.model.partition.uniform_n = 4;
  c.train.learning_rate = 0.0125;
  c.train.seeds = {7, 8, 9};
  c.loss.alpha = {1.0, 0.5, 1.5};
  c.scene.sigma_distractor = 0.75;
  ExperimentConfig back = config_from_text(config_to_text(c));
  CHECK(back.model.channels == 16);
  CHECK(back.model.reduction == 8);
  CHECK(back.model.vsf_mode == VsfMode::ConcatFusion);
  CHECK(back.model.attention == AttentionVariant::SENet);
  CHECK(back.model.partition.kind == PartitionSpec::Kind::Uniform);
  CHECK(back.model.partition.uniform_n == 4);
  CHECK(back.train.learning_rate == 0.0125);
  CHECK(back.train.seeds == std::vector<std::uint64_t>{7, 8, 9});
  CHECK(back.loss.alpha == std::vector<Real>{1.0, 0.5, 1.5});
  CHECK(back.scene.sigma_distractor == 0.75);
}

TEST_CASE("explicit partitions parse and validate") {
  ExperimentConfig c = default_config();
  c.model.partition.kind = PartitionSpec::Kind::Explicit;
  c.model.partition.intervals = {{-5, -1}, {-1, 3}};
  ExperimentConfig back = config_from_text(config_to_text(c));
  CHECK(back.model.partition.kind == PartitionSpec::Kind::Explicit);
  REQUIRE(back.model.partition.intervals.size() == 2);
  CHECK(back.model.partition.intervals[0] == std::pair<double, double>{-5.0, -1.0});

  // A non-aligning interval is rejected with the interval in the message.
  using doctest::Contains;
  const std::string bad =
      "[model]\npartition = \"explicit\"\npartition_intervals = [[-5, -4.7], [-4.7, 3]]\n";
  CHECK_THROWS_WITH_AS(config_from_text(bad), Contains("-4.7"), ConfigError);
}

TEST_CASE("config errors name the offending key") {
  using doctest::Contains;
  CHECK_THROWS_WITH_AS(config_from_text("[model]\nchannles = 8\n"), Contains("channles"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[mdoel]\n"), Contains("mdoel"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[model]\nchannels = 8\nchannels = 9\n"),
                       Contains("channels"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[model]\nchannels = \"lots\"\n"),
                       Contains("channels"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[train]\nlearning_rate = -0.5\n"),
                       Contains("learning_rate"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[model]\nchannels = 10\nreduction = 4\n"),
                       Contains("channels"), ConfigError);  // divisibility
  CHECK_THROWS_WITH_AS(config_from_text("[train]\nsteps = -1\n"), Contains("steps"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(config_from_text("[train]\nclip_norm = -2\n"), Contains("clip_norm"),
                       ConfigError);
}

TEST_CASE("config files load like config text") {
  TempDir dir;
  const std::string path = dir.file("exp.toml");
  ExperimentConfig c = default_config();
  c.model.channels = 16;
  write_file_text(path, config_to_text(c));
  ExperimentConfig back = config_from_file(path);
  CHECK(back.model.channels == 16);
  CHECK_THROWS_AS(config_from_file(dir.file("nope.toml")), ValidationError);
}
