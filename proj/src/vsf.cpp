#include "vsocc/vsf.hpp"

#include <cmath>
#include <cstdio>

namespace vsocc {

namespace {

std::string fmt_interval(double lo, double hi) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%g,%g]", lo, hi);
  return buf;
}

}  // namespace

HeightPartition HeightPartition::from_intervals(
    double z_min_m, double z_max_m, i64 Z,
    std::vector<std::pair<double, double>> intervals) {
  if (Z <= 0) throw ConfigError("partition: Z must be positive");
  if (!(z_max_m > z_min_m)) throw ConfigError("partition: z range is empty");
  if (intervals.empty()) throw ConfigError("partition: no intervals");

  const double voxel = (z_max_m - z_min_m) / static_cast<double>(Z);
  const double eps = 1e-9 * std::max(1.0, std::abs(z_max_m - z_min_m));

  HeightPartition part;
  part.z_min_m = z_min_m;
  part.z_max_m = z_max_m;
  part.z_voxels = Z;

  double cursor = z_min_m;
  i64 cursor_idx = 0;
  for (const auto& [lo, hi] : intervals) {
    if (!(hi > lo))
      throw ConfigError("partition interval " + fmt_interval(lo, hi) + " is empty");
    if (std::abs(lo - cursor) > eps)
      throw ConfigError("partition interval " + fmt_interval(lo, hi) +
                        " does not start at the previous bound " +
                        fmt_interval(cursor, cursor));
    const double span = (hi - z_min_m) / voxel;
    const double rounded = std::round(span);
    if (std::abs(span - rounded) > 1e-6)
      throw ConfigError("partition interval " + fmt_interval(lo, hi) +
                        " does not align to the " + std::to_string(voxel) +
                        " m voxel grid");
    const i64 hi_idx = static_cast<i64>(rounded);
    if (hi_idx <= cursor_idx)
      throw ConfigError("partition interval " + fmt_interval(lo, hi) +
                        " maps to an empty voxel range");
    part.intervals_m.emplace_back(lo, hi);
    part.voxel_ranges.emplace_back(cursor_idx, hi_idx);
    cursor = hi;
    cursor_idx = hi_idx;
  }
  if (std::abs(cursor - z_max_m) > eps || cursor_idx != Z)
    throw ConfigError("partition intervals end at " + fmt_interval(cursor, cursor) +
                      " instead of the scene top " + fmt_interval(z_max_m, z_max_m));
  return part;
}

HeightPartition default_partition(i64 Z) {
  return HeightPartition::from_intervals(
      -5.0, 3.0, Z, {{-5, -3}, {-3, -2}, {-2, -1}, {-1, 0}, {0, 1}, {1, 3}});
}

HeightPartition uniform_partition(i64 Z, i64 n) {
  if (n <= 0) throw ConfigError("uniform partition: n must be positive");
  if (Z % n != 0)
    throw ConfigError("uniform partition: Z=" + std::to_string(Z) +
                      " not divisible by n=" + std::to_string(n));
  std::vector<std::pair<double, double>> intervals;
  const double width = 8.0 / static_cast<double>(n);
  for (i64 i = 0; i < n; ++i)
    intervals.emplace_back(-5.0 + width * static_cast<double>(i),
                           -5.0 + width * static_cast<double>(i + 1));
  return HeightPartition::from_intervals(-5.0, 3.0, Z, std::move(intervals));
}

const char* to_string(VsfMode m) {
  switch (m) {
    case VsfMode::Full: return "full";
    case VsfMode::GlobalOnly: return "global_only";
    case VsfMode::LocalOnly: return "local_only";
    case VsfMode::ConcatFusion: return "concat_fusion";
    case VsfMode::None: return "none";
  }
  return "?";
}

VsfMode vsf_mode_from_string(const std::string& s) {
  if (s == "full") return VsfMode::Full;
  if (s == "global_only") return VsfMode::GlobalOnly;
  if (s == "local_only") return VsfMode::LocalOnly;
  if (s == "concat_fusion") return VsfMode::ConcatFusion;
  if (s == "none") return VsfMode::None;
  throw ConfigError("unknown vsf mode '" + s +
                    "' (expected full, global_only, local_only, concat_fusion or none)");
}

VSFParams make_vsf_params(ModuleParams& store, const std::string& prefix, i64 C,
                          i64 r, std::size_t n_local) {
  VSFParams p;
  p.channels = C;
  for (std::size_t i = 0; i < n_local; ++i)
    p.local_se.push_back(
        make_se_params(store, prefix + ".local" + std::to_string(i) + ".se", C, r));
  p.global_se = make_se_params(store, prefix + ".global.se", C, r);
  // Merge/fuse kernels start near the identity (fuse averages its two branches)
  // so every mode initially computes roughly the same function as the plain
  // baseline; training then has to *earn* any difference through the gates.
  p.local_merge_w =
      &store.add_identity_conv(prefix + ".local.merge.w", Shape{C, C, 3, 3, 3}, 1.0, 0.1);
  p.local_merge_b = &store.add_zeros(prefix + ".local.merge.b", Shape{C});
  p.global_merge_w =
      &store.add_identity_conv(prefix + ".global.merge.w", Shape{C, C, 3, 3, 3}, 1.0, 0.1);
  p.global_merge_b = &store.add_zeros(prefix + ".global.merge.b", Shape{C});
  p.map_global_w = &store.add_uniform(prefix + ".map.global.w", Shape{1, C, 1, 1, 1}, C);
  p.map_global_b = &store.add_full(prefix + ".map.global.b", Shape{1}, 2.0);
  p.map_local_w = &store.add_uniform(prefix + ".map.local.w", Shape{1, C, 1, 1, 1}, C);
  p.map_local_b = &store.add_full(prefix + ".map.local.b", Shape{1}, 2.0);
  p.fuse_w = &store.add_identity_conv(prefix + ".fuse.w", Shape{C, 2 * C, 3, 3, 3}, 0.75, 0.1);
  p.fuse_b = &store.add_zeros(prefix + ".fuse.b", Shape{C});
  p.fuse_se = make_se_params(store, prefix + ".fuse.se", C, r);
  return p;
}

Tensor local_gated(const Tensor& x, const VSFParams& p, const HeightPartition& part,
                   AttentionVariant v) {
  const Shape xs = x.shape();
  if (xs.rank() != 5 || xs[4] != part.z_voxels)
    throw ShapeError("local_gated: input " + xs.str() + " vs partition Z=" +
                     std::to_string(part.z_voxels));
  if (p.local_se.size() != part.slices())
    throw ShapeError("local_gated: " + std::to_string(p.local_se.size()) +
                     " slice params for " + std::to_string(part.slices()) + " slices");
  std::vector<Tensor> gated;
  gated.reserve(part.slices());
  for (std::size_t i = 0; i < part.slices(); ++i) {
    const auto& [lo, hi] = part.voxel_ranges[i];
    gated.push_back(se_apply(slice_z(x, lo, hi), p.local_se[i], v));
  }
  return concat_z(gated);
}

Tensor build_local_feature(const Tensor& x, const VSFParams& p,
                           const HeightPartition& part, AttentionVariant v) {
  Tape& t = *x.tape();
  return conv3d(local_gated(x, p, part, v), t.param(*p.local_merge_w),
                t.param(*p.local_merge_b));
}

Tensor build_global_feature(const Tensor& x, const VSFParams& p, AttentionVariant v) {
  Tape& t = *x.tape();
  return conv3d(se_apply(x, p.global_se, v), t.param(*p.global_merge_w),
                t.param(*p.global_merge_b));
}

Tensor attention_map(const Tensor& f, ParamTensor& w, ParamTensor& b) {
  Tape& t = *f.tape();
  return sigmoid(conv3d(f, t.param(w), t.param(b)));
}

std::pair<Tensor, Tensor> cross_calibrate(const Tensor& f_global, const Tensor& f_local,
                                          const Tensor& a_global, const Tensor& a_local) {
  // The swap is the point: each branch is scaled by the other's map.
  return {mul_map(f_global, a_local), mul_map(f_local, a_global)};
}

Tensor vsf_forward(const Tensor& x, const VSFParams& p, const HeightPartition& part,
                   VsfMode mode, AttentionVariant v) {
  if (mode == VsfMode::None) return x;

  Tape& t = *x.tape();
  if (mode == VsfMode::GlobalOnly)
    return se_apply(build_global_feature(x, p, v), p.fuse_se, v);
  if (mode == VsfMode::LocalOnly)
    return se_apply(build_local_feature(x, p, part, v), p.fuse_se, v);

  Tensor f_g = build_global_feature(x, p, v);
  Tensor f_l = build_local_feature(x, p, part, v);
  Tensor cat;
  if (mode == VsfMode::Full) {
    Tensor a_g = attention_map(f_g, *p.map_global_w, *p.map_global_b);
    Tensor a_l = attention_map(f_l, *p.map_local_w, *p.map_local_b);
    auto [fp_g, fp_l] = cross_calibrate(f_g, f_l, a_g, a_l);
    cat = concat_channels(fp_g, fp_l);
  } else {  // ConcatFusion
    cat = concat_channels(f_g, f_l);
  }
  Tensor fused = conv3d(cat, t.param(*p.fuse_w), t.param(*p.fuse_b));
  return se_apply(fused, p.fuse_se, v);
}

}  // namespace vsocc
