#include "vsocc/synthscene.hpp"

#include <algorithm>
#include <cmath>

#include "vsocc/rng.hpp"

namespace vsocc {

std::vector<ClassHeightProfile> default_class_profiles() {
  return {
      {1, "ground", -3.0, -2.5, 12, 16, 1.0},
      {2, "barrier", -2.5, -1.0, 1, 3, 3.0},
      {3, "pedestrian", -2.0, 2.0, 1, 2, 4.0},
      {4, "car", -2.5, 0.0, 3, 5, 3.0},
      {5, "truck", -2.5, 1.5, 4, 7, 2.0},
      {6, "vegetation", -1.0, 3.0, 2, 5, 2.0},
  };
}

namespace {

// Height-band-localized distractor interference: (channel, band in meters,
// mean offset) per modality. Each band adds mean + noise inside its height
// range. The mean is the load-bearing part: to any height-blind readout it is
// indistinguishable from genuine channel activity (spatial averaging removes
// variance, never a mean), while in per-height channel statistics it stands
// out plainly, so a height-resolved gate can null the band without losing the
// same channel's signal at other heights. The noise term punishes any readout
// that keeps the band open anyway.
struct DistractorBand {
  i64 channel;
  double lo_m, hi_m;
  double mean;
};
constexpr DistractorBand kCamDistractors[] = {{1, -5.0, -2.0, 1.2},
                                              {2, -5.0, -2.5, 1.2},
                                              {4, -5.0, -2.0, 1.2},
                                              {5, -5.0, -2.5, 1.2}};
// Lidar's geometry channels go bad low down (ground clutter) and its surface
// channel up high, so neither modality is reliable at every height.
constexpr DistractorBand kLidarDistractors[] = {
    {0, -5.0, -2.0, 1.2}, {2, -5.0, -2.0, 1.0}, {1, 0.0, 3.0, 1.0}};

std::pair<i64, i64> band_voxels(const SceneConfig& cfg, double lo_m, double hi_m) {
  const double v = cfg.voxel_m();
  i64 lo = static_cast<i64>(std::llround((lo_m - cfg.z_min_m) / v));
  i64 hi = static_cast<i64>(std::llround((hi_m - cfg.z_min_m) / v));
  lo = std::max<i64>(lo, 0);
  hi = std::min<i64>(hi, cfg.z);
  return {lo, hi};
}

}  // namespace

void validate(const SceneConfig& cfg) {
  if (cfg.x <= 0 || cfg.y <= 0 || cfg.z <= 0)
    throw ConfigError("scene: grid dims must be positive");
  if (!(cfg.z_max_m > cfg.z_min_m)) throw ConfigError("scene: z range is empty");
  if (cfg.channels < 4)
    throw ConfigError("scene: need at least 4 feature channels, got " +
                      std::to_string(cfg.channels));
  if (cfg.sigma_cam < 0 || cfg.sigma_lidar < 0 || cfg.sigma_distractor < 0)
    throw ConfigError("scene: noise levels must be nonnegative");
  if (cfg.max_place_retries <= 0)
    throw ConfigError("scene: max_place_retries must be positive");
  if (cfg.classes.empty()) throw ConfigError("scene: no class profiles");
  std::vector<bool> seen(256, false);
  for (const auto& p : cfg.classes) {
    if (p.class_id < 1 || p.class_id > 255)
      throw ConfigError("scene: class id " + std::to_string(p.class_id) +
                        " outside [1,255]");
    if (seen[static_cast<std::size_t>(p.class_id)])
      throw ConfigError("scene: duplicate class id " + std::to_string(p.class_id));
    seen[static_cast<std::size_t>(p.class_id)] = true;
    if (!(p.lo_m < p.hi_m) || p.lo_m < cfg.z_min_m - 1e-9 || p.hi_m > cfg.z_max_m + 1e-9)
      throw ConfigError("scene: class '" + p.name + "' height band [" +
                        std::to_string(p.lo_m) + "," + std::to_string(p.hi_m) +
                        "] outside scene range");
    auto [blo, bhi] = band_voxels(cfg, p.lo_m, p.hi_m);
    if (bhi <= blo)
      throw ConfigError("scene: class '" + p.name + "' band maps to no voxel layer");
    if (p.min_extent < 1 || p.max_extent < p.min_extent)
      throw ConfigError("scene: class '" + p.name + "' footprint range invalid");
    if (p.max_extent > std::min(cfg.x, cfg.y))
      throw ConfigError("scene: class '" + p.name + "' footprint exceeds grid");
    if (p.frequency < 0) throw ConfigError("scene: negative frequency");
  }
}

namespace {

void place_objects(const SceneConfig& cfg, std::uint64_t seed, OccupancyGrid& gt) {
  Rng rng(Rng::mix(seed, "place"));
  for (const auto& prof : cfg.classes) {
    const auto [blo, bhi] = band_voxels(cfg, prof.lo_m, prof.hi_m);
    const i64 band_h = bhi - blo;
    i64 count = static_cast<i64>(prof.frequency);
    if (rng.uniform() < prof.frequency - static_cast<double>(count)) ++count;
    for (i64 obj = 0; obj < count; ++obj) {
      bool placed = false;
      for (i64 attempt = 0; attempt < cfg.max_place_retries && !placed; ++attempt) {
        const i64 ex = rng.uniform_int(prof.min_extent, prof.max_extent + 1);
        const i64 ey = rng.uniform_int(prof.min_extent, prof.max_extent + 1);
        const i64 ez = rng.uniform_int(1, band_h + 1);
        const i64 px = rng.uniform_int(0, cfg.x - ex + 1);
        const i64 py = rng.uniform_int(0, cfg.y - ey + 1);
        const i64 pz = blo + rng.uniform_int(0, band_h - ez + 1);
        bool free = true;
        for (i64 i = px; i < px + ex && free; ++i)
          for (i64 j = py; j < py + ey && free; ++j)
            for (i64 z = pz; z < pz + ez && free; ++z)
              if (gt.at(0, i, j, z) != 0) free = false;
        if (!free) continue;
        for (i64 i = px; i < px + ex; ++i)
          for (i64 j = py; j < py + ey; ++j)
            for (i64 z = pz; z < pz + ez; ++z)
              gt.at(0, i, j, z) = static_cast<std::uint8_t>(prof.class_id);
        placed = true;
      }
      if (!placed)
        throw GenerationError("scene generation: no room for class '" + prof.name +
                              "' after " + std::to_string(cfg.max_place_retries) +
                              " attempts (seed " + std::to_string(seed) + ")",
                              seed);
    }
  }
}

inline i64 fidx(const SceneConfig& cfg, i64 c, i64 i, i64 j, i64 z) {
  return ((c * cfg.x + i) * cfg.y + j) * cfg.z + z;
}

void add_distractors(const SceneConfig& cfg, DenseTensor& feat,
                     const DistractorBand* bands, std::size_t n_bands, Rng& rng) {
  for (std::size_t d = 0; d < n_bands; ++d) {
    if (bands[d].channel >= cfg.channels) continue;
    const auto [zlo, zhi] = band_voxels(cfg, bands[d].lo_m, bands[d].hi_m);
    for (i64 i = 0; i < cfg.x; ++i)
      for (i64 j = 0; j < cfg.y; ++j)
        for (i64 z = zlo; z < zhi; ++z)
          feat.data[static_cast<std::size_t>(fidx(cfg, bands[d].channel, i, j, z))] +=
              bands[d].mean + cfg.sigma_distractor * rng.normal();
  }
}

DenseTensor make_cam_features(const SceneConfig& cfg, std::uint64_t seed,
                              const OccupancyGrid& gt) {
  DenseTensor feat = DenseTensor::zeros(Shape{1, cfg.channels, cfg.x, cfg.y, cfg.z});
  const i64 C = cfg.channels;

  // Per-column depth error: the whole column's semantic content shifts by one
  // voxel up or down, emulating imprecise camera depth.
  Rng jitter_rng(Rng::mix(seed, "cam.jitter"));
  std::vector<i64> jitter(static_cast<std::size_t>(cfg.x * cfg.y));
  for (auto& v : jitter) v = jitter_rng.uniform_int(-1, 2);

  for (i64 i = 0; i < cfg.x; ++i)
    for (i64 j = 0; j < cfg.y; ++j) {
      const i64 jit = jitter[static_cast<std::size_t>(i * cfg.y + j)];
      for (i64 z = 0; z < cfg.z; ++z) {
        const i64 src = z - jit;
        const std::uint8_t label =
            (src >= 0 && src < cfg.z) ? gt.at(0, i, j, src) : 0;
        if (label == 0) continue;
        // One channel per class identity plus a shared (weak) occupancy cue.
        feat.data[static_cast<std::size_t>(fidx(cfg, (label - 1) % C, i, j, z))] += 1.0;
        if (C > 6)
          feat.data[static_cast<std::size_t>(fidx(cfg, 6, i, j, z))] += 0.6;
      }
    }

  Rng noise_rng(Rng::mix(seed, "cam.noise"));
  for (auto& v : feat.data) v += cfg.sigma_cam * noise_rng.normal();

  Rng dist_rng(Rng::mix(seed, "cam.distract"));
  add_distractors(cfg, feat, kCamDistractors, std::size(kCamDistractors), dist_rng);
  return feat;
}

DenseTensor make_lidar_features(const SceneConfig& cfg, std::uint64_t seed,
                                const OccupancyGrid& gt) {
  DenseTensor feat = DenseTensor::zeros(Shape{1, cfg.channels, cfg.x, cfg.y, cfg.z});
  auto occ = [&gt](i64 i, i64 j, i64 z) { return gt.at(0, i, j, z) != 0 ? 1.0 : 0.0; };

  for (i64 i = 0; i < cfg.x; ++i)
    for (i64 j = 0; j < cfg.y; ++j)
      for (i64 z = 0; z < cfg.z; ++z) {
        const double o = occ(i, j, z);
        // ch0: crisp occupancy return; ch1: vertical surface (occupancy onset);
        // ch2: lateral support count; ch3: faint class leak.
        feat.data[static_cast<std::size_t>(fidx(cfg, 0, i, j, z))] = 1.2 * o;
        const double below = z > 0 ? occ(i, j, z - 1) : 0.0;
        feat.data[static_cast<std::size_t>(fidx(cfg, 1, i, j, z))] = o - below;
        double lateral = 0.0;
        if (i > 0) lateral += occ(i - 1, j, z);
        if (i + 1 < cfg.x) lateral += occ(i + 1, j, z);
        if (j > 0) lateral += occ(i, j - 1, z);
        if (j + 1 < cfg.y) lateral += occ(i, j + 1, z);
        feat.data[static_cast<std::size_t>(fidx(cfg, 2, i, j, z))] = 0.25 * lateral;
        feat.data[static_cast<std::size_t>(fidx(cfg, 3, i, j, z))] =
            0.05 * static_cast<double>(gt.at(0, i, j, z));
      }

  Rng noise_rng(Rng::mix(seed, "lidar.noise"));
  for (auto& v : feat.data) v += cfg.sigma_lidar * noise_rng.normal();

  Rng dist_rng(Rng::mix(seed, "lidar.distract"));
  add_distractors(cfg, feat, kLidarDistractors, std::size(kLidarDistractors), dist_rng);
  return feat;
}

}  // namespace

SceneSample generate(const SceneConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  SceneSample s;
  s.seed = seed;
  s.gt = OccupancyGrid(1, cfg.x, cfg.y, cfg.z);
  place_objects(cfg, seed, s.gt);
  s.feat_cam = make_cam_features(cfg, seed, s.gt);
  s.feat_lidar = make_lidar_features(cfg, seed, s.gt);
  return s;
}

std::pair<Dataset, Dataset> make_datasets(const SceneConfig& cfg, i64 n_train,
                                          i64 n_val, std::uint64_t base_seed) {
  if (n_train < 0 || n_val < 0)
    throw ConfigError("datasets: sample counts must be nonnegative");
  validate(cfg);
  return {Dataset(cfg, base_seed, 0, n_train), Dataset(cfg, base_seed, n_train, n_val)};
}

// ---------------------------------------------------------------------------
// Modal-asymmetry probe: ridge regression via normal equations.
// ---------------------------------------------------------------------------

namespace {

// Solves (A + lambda I) w = b in place for a small symmetric system.
std::vector<double> solve_ridge(std::vector<std::vector<double>> A,
                                std::vector<double> b, double lambda) {
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) A[i][i] += lambda;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    std::swap(A[col], A[piv]);
    std::swap(b[col], b[piv]);
    const double d = A[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r][col] / d;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> w(n, 0.0);
  for (std::size_t ri = n; ri-- > 0;) {
    double acc = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) acc -= A[ri][c] * w[c];
    w[ri] = acc / A[ri][ri];
  }
  return w;
}

}  // namespace

ModalProbeResult modal_asymmetry_probe(const SceneConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds) {
  validate(cfg);
  const std::size_t D = static_cast<std::size_t>(cfg.channels) + 1;  // + bias

  // Rows: one per voxel; columns: channels + constant.
  std::vector<std::vector<double>> rows_cam, rows_lidar;
  std::vector<double> occ_target;
  std::vector<int> labels;
  for (std::uint64_t seed : seeds) {
    SceneSample s = generate(cfg, seed);
    const i64 vol = cfg.x * cfg.y * cfg.z;
    for (i64 n = 0; n < vol; ++n) {
      std::vector<double> rc(D), rl(D);
      for (i64 c = 0; c < cfg.channels; ++c) {
        rc[static_cast<std::size_t>(c)] =
            s.feat_cam.data[static_cast<std::size_t>(c * vol + n)];
        rl[static_cast<std::size_t>(c)] =
            s.feat_lidar.data[static_cast<std::size_t>(c * vol + n)];
      }
      rc[D - 1] = 1.0;
      rl[D - 1] = 1.0;
      rows_cam.push_back(std::move(rc));
      rows_lidar.push_back(std::move(rl));
      occ_target.push_back(s.gt.labels[static_cast<std::size_t>(n)] != 0 ? 1.0 : 0.0);
      labels.push_back(s.gt.labels[static_cast<std::size_t>(n)]);
    }
  }

  auto fit_predict = [D](const std::vector<std::vector<double>>& rows,
                         const std::vector<double>& target) {
    std::vector<std::vector<double>> ata(D, std::vector<double>(D, 0.0));
    std::vector<double> atb(D, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t i = 0; i < D; ++i) {
        atb[i] += rows[r][i] * target[r];
        for (std::size_t j = i; j < D; ++j) ata[i][j] += rows[r][i] * rows[r][j];
      }
    }
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < i; ++j) ata[i][j] = ata[j][i];
    std::vector<double> w = solve_ridge(std::move(ata), std::move(atb), 1e-3);
    std::vector<double> pred(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < D; ++i) acc += w[i] * rows[r][i];
      pred[r] = acc;
    }
    return pred;
  };

  ModalProbeResult res;
  // Occupancy probe on all voxels.
  {
    auto pc = fit_predict(rows_cam, occ_target);
    auto pl = fit_predict(rows_lidar, occ_target);
    double accc = 0.0, accl = 0.0;
    for (std::size_t r = 0; r < occ_target.size(); ++r) {
      accc += ((pc[r] > 0.5) == (occ_target[r] > 0.5)) ? 1.0 : 0.0;
      accl += ((pl[r] > 0.5) == (occ_target[r] > 0.5)) ? 1.0 : 0.0;
    }
    res.occ_acc_cam = accc / static_cast<double>(occ_target.size());
    res.occ_acc_lidar = accl / static_cast<double>(occ_target.size());
  }
  // Class probe (one-vs-rest argmax) on occupied voxels only.
  {
    std::vector<std::size_t> occ_rows;
    for (std::size_t r = 0; r < labels.size(); ++r)
      if (labels[r] != 0) occ_rows.push_back(r);
    int max_class = 0;
    for (int l : labels) max_class = std::max(max_class, l);

    auto class_acc = [&](const std::vector<std::vector<double>>& rows) {
      std::vector<std::vector<double>> sub;
      sub.reserve(occ_rows.size());
      for (std::size_t r : occ_rows) sub.push_back(rows[r]);
      std::vector<std::vector<double>> scores(
          static_cast<std::size_t>(max_class) + 1,
          std::vector<double>(occ_rows.size(), -1e300));
      for (int c = 1; c <= max_class; ++c) {
        std::vector<double> t(occ_rows.size());
        for (std::size_t r = 0; r < occ_rows.size(); ++r)
          t[r] = labels[occ_rows[r]] == c ? 1.0 : 0.0;
        scores[static_cast<std::size_t>(c)] = fit_predict(sub, t);
      }
      double acc = 0.0;
      for (std::size_t r = 0; r < occ_rows.size(); ++r) {
        int best = 1;
        for (int c = 2; c <= max_class; ++c)
          if (scores[static_cast<std::size_t>(c)][r] >
              scores[static_cast<std::size_t>(best)][r])
            best = c;
        if (best == labels[occ_rows[r]]) acc += 1.0;
      }
      return occ_rows.empty() ? 0.0 : acc / static_cast<double>(occ_rows.size());
    };
    res.cls_acc_cam = class_acc(rows_cam);
    res.cls_acc_lidar = class_acc(rows_lidar);
  }
  return res;
}

}  // namespace vsocc
