#pragma once

#include <vector>

#include "vsocc/ops.hpp"

namespace vsocc {

// Objective configuration. alpha holds one weight per class (size K); leave
// it empty for uniform weights. The w_* factors scale the four components in
// the combined objective (all 1.0 by default, a plain sum).
struct LossConfig {
  Real gamma = 2.0;
  std::vector<Real> alpha;
  Real w_focal = 1.0;
  Real w_lovasz = 1.0;
  Real w_geo = 1.0;
  Real w_sem = 1.0;
};

struct LossBreakdown {
  Real focal = 0.0;
  Real lovasz = 0.0;
  Real scal_geo = 0.0;
  Real scal_sem = 0.0;
  Real total = 0.0;
  Tensor total_tensor;  // differentiable combined objective
};

// All losses take class probabilities (B,K,X,Y,Z) -- softmax outputs, every
// voxel's K values positive and summing to 1 -- and a label grid with values
// in [0,K). Labels >= K raise ValidationError. Each returns a scalar node.

// Mean over voxels of -alpha_y * (1-p_y)^gamma * log p_y.
Tensor focal_loss(const Tensor& probs, const OccupancyGrid& y, Real gamma,
                  const std::vector<Real>& alpha);

// Lovász extension of the Jaccard loss, averaged over classes present in y.
// Per class: errors (1-p on the class's voxels, p elsewhere) are sorted
// descending and dotted with the Jaccard-gradient vector of the sorted
// ground-truth indicators. Values lie in [0,1] for probability inputs.
Tensor lovasz_softmax_loss(const Tensor& probs, const OccupancyGrid& y);

// Scene-wise affinity on the occupied/empty dichotomy: soft occupancy
// x = 1 - p_empty against binary occupancy targets, loss
// -(log P + log R + log S) over precision/recall/specificity. A term is
// skipped when its target-side denominator is zero (e.g. an all-empty scene
// keeps only the specificity term).
Tensor scal_geo_loss(const Tensor& probs, const OccupancyGrid& y);

// Class-wise affinity: the same P/R/S construction per semantic class
// (1..K-1) present in y, averaged over those classes. Absent classes are
// skipped entirely; an all-empty grid gives 0.
Tensor scal_sem_loss(const Tensor& probs, const OccupancyGrid& y);

// Weighted sum of the four components (unit weights by default, in which
// case total is exactly focal + lovasz + geo + sem in that order).
LossBreakdown total_loss(const Tensor& probs, const OccupancyGrid& y,
                         const LossConfig& cfg);

// Per-class weights proportional to inverse frequency over `grids`,
// normalized to mean 1 across the classes that occur; classes that never
// occur get weight 1.
std::vector<Real> inverse_frequency_alpha(const std::vector<const OccupancyGrid*>& grids,
                                          i64 K);

}  // namespace vsocc
