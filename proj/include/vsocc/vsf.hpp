#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vsocc/attention.hpp"

namespace vsocc {

// Ordered metric height intervals plus their derived voxel index ranges.
// Construction validates that the intervals tile [z_min_m, z_max_m] exactly
// and that every bound lands on a voxel boundary.
struct HeightPartition {
  double z_min_m = 0.0;
  double z_max_m = 0.0;
  i64 z_voxels = 0;
  std::vector<std::pair<double, double>> intervals_m;
  std::vector<std::pair<i64, i64>> voxel_ranges;  // half-open [lo, hi)

  std::size_t slices() const { return voxel_ranges.size(); }

  // Throws ConfigError naming the offending interval when bounds are out of
  // order, leave gaps/overlaps, or don't align to voxel boundaries.
  static HeightPartition from_intervals(double z_min_m, double z_max_m, i64 Z,
                                        std::vector<std::pair<double, double>> intervals);
};

// The six-way reference partition of [-5,3] m:
// [-5,-3],[-3,-2],[-2,-1],[-1,0],[0,1],[1,3].
HeightPartition default_partition(i64 Z);
// n equal-width intervals over [-5,3] m.
HeightPartition uniform_partition(i64 Z, i64 n);

enum class VsfMode { Full, GlobalOnly, LocalOnly, ConcatFusion, None };

const char* to_string(VsfMode m);
VsfMode vsf_mode_from_string(const std::string& s);

// Parameter bundle for one vertical-slice-fusion block over C channels.
struct VSFParams {
  std::vector<SEParams> local_se;  // one per local slice
  SEParams global_se;
  ParamTensor* local_merge_w = nullptr;
  ParamTensor* local_merge_b = nullptr;
  ParamTensor* global_merge_w = nullptr;
  ParamTensor* global_merge_b = nullptr;
  ParamTensor* map_global_w = nullptr;  // C -> 1, 1x1x1
  ParamTensor* map_global_b = nullptr;
  ParamTensor* map_local_w = nullptr;
  ParamTensor* map_local_b = nullptr;
  ParamTensor* fuse_w = nullptr;  // 2C -> C, 3x3x3
  ParamTensor* fuse_b = nullptr;
  SEParams fuse_se;
  i64 channels = 0;
};

VSFParams make_vsf_params(ModuleParams& store, const std::string& prefix, i64 C,
                          i64 r, std::size_t n_local);

// Per-slice gated features re-stacked at their own z ranges, before the
// merge conv. Exposed separately so slice isolation is testable.
Tensor local_gated(const Tensor& x, const VSFParams& p, const HeightPartition& part,
                   AttentionVariant v = AttentionVariant::SEAttention3D);

// local_gated followed by the 3x3x3 merge conv -> F_local.
Tensor build_local_feature(const Tensor& x, const VSFParams& p,
                           const HeightPartition& part,
                           AttentionVariant v = AttentionVariant::SEAttention3D);

// Full-height SE followed by its merge conv -> F_global.
Tensor build_global_feature(const Tensor& x, const VSFParams& p,
                            AttentionVariant v = AttentionVariant::SEAttention3D);

// C -> 1 conv then sigmoid: a single-channel map in (0,1).
Tensor attention_map(const Tensor& f, ParamTensor& w, ParamTensor& b);

// The calibration swap: each branch is weighted by the other branch's map.
// Returns (F'_global, F'_local).
std::pair<Tensor, Tensor> cross_calibrate(const Tensor& f_global, const Tensor& f_local,
                                          const Tensor& a_global, const Tensor& a_local);

// The whole block. Modes:
//   Full:         cross-calibrated concat -> fuse conv -> final SE
//   GlobalOnly:   F_global -> final SE
//   LocalOnly:    F_local -> final SE
//   ConcatFusion: concat(F_global, F_local) without calibration -> fuse -> SE
//   None:         identity
Tensor vsf_forward(const Tensor& x, const VSFParams& p, const HeightPartition& part,
                   VsfMode mode, AttentionVariant v = AttentionVariant::SEAttention3D);

}  // namespace vsocc
