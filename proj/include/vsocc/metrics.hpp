#pragma once

#include <string>
#include <vector>

#include "vsocc/tensor.hpp"

namespace vsocc {

// Confusion counts and the derived IoU family for a K-class label grid
// (class 0 = empty). Reports merge by summing counts, so multi-batch
// evaluation accumulates counts first and derives ratios once.
struct MetricsReport {
  i64 num_classes = 0;
  std::vector<i64> tp, fp, fn;   // size K, class 0 included
  std::vector<i64> support;      // ground-truth voxels per class
  std::vector<Real> per_class_iou;  // classes 1..K-1; NaN when union is 0
  Real miou = 0.0;               // mean over classes with nonzero union
  Real geo_iou = 0.0;            // occupied/empty binarization
  i64 geo_tp = 0, geo_fp = 0, geo_fn = 0;

  // Recomputes the derived ratios from the counts.
  void finalize();
};

MetricsReport iou_per_class(const OccupancyGrid& pred, const OccupancyGrid& gt, i64 K);

// Sums confusion counts of two reports over the same K and re-derives.
MetricsReport merge(const MetricsReport& a, const MetricsReport& b);

// CSV: one row per semantic class: name,tp,fp,fn,iou. `names` may supply
// display names per class id; missing entries fall back to "class_<id>".
std::string metrics_csv(const MetricsReport& r,
                        const std::vector<std::string>& names = {});
// JSON summary {"miou": ..., "geo_iou": ...} (null for undefined values).
std::string metrics_json(const MetricsReport& r);

// Per-class distribution of ground-truth voxels over z bins.
struct HeightHistogram {
  i64 num_classes = 0;
  i64 bin_width = 1;
  i64 bins = 0;
  std::vector<std::vector<i64>> counts;  // [K][bins]
  std::vector<std::vector<Real>> dist;   // normalized per class where defined
  std::vector<bool> defined;             // false for classes with no voxels
};

HeightHistogram height_histogram(const OccupancyGrid& gt, i64 K, i64 bin_width = 1);

// Accumulates a second grid into an existing histogram (same K/bin layout).
void accumulate(HeightHistogram& h, const OccupancyGrid& gt);

}  // namespace vsocc
