#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vsocc/tensor.hpp"

namespace vsocc {

// One synthetic object category: a height band (meters), an x/y footprint
// range (voxels) and an expected per-scene object count.
struct ClassHeightProfile {
  int class_id = 0;
  std::string name;
  double lo_m = 0.0, hi_m = 0.0;
  i64 min_extent = 1, max_extent = 1;
  double frequency = 1.0;
};

// Six classes echoing the usual outdoor height stratification: a thin ground
// layer, low barriers, mid-height pedestrians/cars, taller trucks, and high
// vegetation.
std::vector<ClassHeightProfile> default_class_profiles();

struct SceneConfig {
  i64 x = 24, y = 24, z = 16;
  double z_min_m = -5.0, z_max_m = 3.0;
  i64 channels = 8;
  double sigma_cam = 0.5;      // per-channel noise on camera-like features
  double sigma_lidar = 0.2;    // per-channel noise on lidar-like features
  double sigma_distractor = 2.0;  // extra height-band-localized channel noise
  i64 max_place_retries = 64;
  std::vector<ClassHeightProfile> classes = default_class_profiles();

  double voxel_m() const { return (z_max_m - z_min_m) / static_cast<double>(z); }
};

// Throws ConfigError on out-of-band class profiles, bad dims, etc.
void validate(const SceneConfig& cfg);

// One labeled scene plus its two pseudo-modality feature volumes, each
// (1,C,X,Y,Z). feat_cam carries class identity (one-hot-ish channels) but
// its content is shifted by a per-column z jitter and heavy noise, so
// occupancy reads poorly; feat_lidar carries crisp occupancy geometry with
// only a faint class cue. Both carry strong structured noise on a couple of
// channels inside fixed height bands -- suppressible by height-resolved
// gating, not by uniform channel weighting.
struct SceneSample {
  OccupancyGrid gt;
  DenseTensor feat_cam;
  DenseTensor feat_lidar;
  std::uint64_t seed = 0;
};

// Deterministic: the same (config, seed) always yields identical bytes.
// Throws GenerationError (carrying the seed) if object placement cannot
// find room after max_place_retries attempts.
SceneSample generate(const SceneConfig& cfg, std::uint64_t seed);

// Lazy sample stream: sample(i) is generate(cfg, base_seed + offset + i).
class Dataset {
 public:
  Dataset() = default;
  Dataset(SceneConfig cfg, std::uint64_t base_seed, i64 offset, i64 n)
      : cfg_(std::move(cfg)), base_seed_(base_seed), offset_(offset), n_(n) {}

  i64 size() const { return n_; }
  std::uint64_t seed_of(i64 i) const {
    return base_seed_ + static_cast<std::uint64_t>(offset_ + i);
  }
  SceneSample sample(i64 i) const { return generate(cfg_, seed_of(i)); }
  const SceneConfig& config() const { return cfg_; }

 private:
  SceneConfig cfg_;
  std::uint64_t base_seed_ = 0;
  i64 offset_ = 0;
  i64 n_ = 0;
};

// Train/val streams on disjoint seed ranges: train gets [base, base+n_train),
// val gets [base+n_train, base+n_train+n_val).
std::pair<Dataset, Dataset> make_datasets(const SceneConfig& cfg, i64 n_train,
                                          i64 n_val, std::uint64_t base_seed);

// Fixed-probe self-test of the modal split: ridge-regression linear probes
// for occupancy (all voxels) and class-given-occupied, fit per modality.
struct ModalProbeResult {
  double occ_acc_cam = 0.0;
  double occ_acc_lidar = 0.0;
  double cls_acc_cam = 0.0;
  double cls_acc_lidar = 0.0;
};

ModalProbeResult modal_asymmetry_probe(const SceneConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds);

}  // namespace vsocc
