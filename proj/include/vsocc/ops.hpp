#pragma once

#include <vector>

#include "vsocc/tensor.hpp"

namespace vsocc {

// Differentiable op vocabulary over tape tensors. Voxel features are rank 5
// (batch, channel, x, y, z), row-major with z fastest. Every op validates
// shapes eagerly (ShapeError) and records its own gradient closure.

// Same-padded stride-1 3D convolution. kernel (Co,Ci,k,k,k) with k odd,
// bias (Co). x (B,Ci,X,Y,Z) -> (B,Co,X,Y,Z). Padding is implicit zeros.
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// 1D convolution over a height profile. x (B,Ci,Z), kernel (Co,Ci,k) with
// k odd, bias (Co) -> (B,Co,Z). Same-padded along z; k=1 is a per-height
// channel mix, which is how the excitation stages use it.
Tensor conv1d_channel(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Elementwise, any rank.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_elem(const Tensor& x);              // requires x > 0
Tensor pow_const(const Tensor& x, Real e);     // requires x >= 0
Tensor affine(const Tensor& x, Real scale, Real offset);
// Per-element constant coefficients: out = scale[i]*x[i] + offset[i].
Tensor affine_vec(const Tensor& x, std::vector<Real> scale, std::vector<Real> offset);

// Same-shape elementwise arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // requires b != 0

// Channel-axis surgery on rank-5 tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, i64 lo, i64 hi);

// x (B,C,X,Y,Z) * gate (B,C,Zg), Zg == Z or Zg == 1; the gate value is
// broadcast over x,y (and over z when Zg == 1).
Tensor mul_broadcast(const Tensor& x, const Tensor& gate);

// x (B,C,X,Y,Z) * map (B,1,X,Y,Z); the single-channel map is broadcast
// across channels.
Tensor mul_map(const Tensor& x, const Tensor& map);

// Mean over x,y: (B,C,X,Y,Z) -> (B,C,Z). Height-resolved channel profile.
Tensor squeeze_xy(const Tensor& x);
// Mean over x,y,z: (B,C,X,Y,Z) -> (B,C,1). Accumulates per-z plane sums in
// the same order as squeeze_xy so that at Z == 1 the two are bit-identical.
Tensor squeeze_xyz(const Tensor& x);

// Height-axis surgery. slice_z keeps z in [lo,hi); concat_z re-stacks
// slices in the order given.
Tensor slice_z(const Tensor& x, i64 lo, i64 hi);
Tensor concat_z(const std::vector<Tensor>& slices);

// Numerically stable softmax over the channel axis of a rank-5 tensor.
Tensor softmax_channels(const Tensor& logits);

// out[b,i,j,k] = probs[b, labels[b,i,j,k], i, j, k]; rank-5 -> rank-4.
// Throws ValidationError if any label >= the channel count.
Tensor gather_class(const Tensor& probs, const OccupancyGrid& labels);

// Flattens x and reorders: out[i] = x_flat[perm[i]]. perm must be a
// permutation of 0..numel-1 (ValidationError otherwise).
Tensor permute_flat(const Tensor& x, std::vector<i64> perm);

// Reductions to a scalar (shape {1}).
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor dot_const(const Tensor& x, std::vector<Real> weights);

}  // namespace vsocc
