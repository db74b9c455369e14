#pragma once

#include <string>

#include "vsocc/ops.hpp"
#include "vsocc/params.hpp"

namespace vsocc {

// Squeeze-excitation parameter bundle: C -> C/r (relu) -> C (sigmoid),
// realized as two k=1 channel convolutions with biases. r must divide C.
struct SEParams {
  ParamTensor* reduce_w = nullptr;
  ParamTensor* reduce_b = nullptr;
  ParamTensor* expand_w = nullptr;
  ParamTensor* expand_b = nullptr;
  i64 channels = 0;
  i64 ratio = 0;
};

// Registers the four tensors under `prefix` + {.reduce.w, .reduce.b,
// .expand.w, .expand.b}. Throws ShapeError unless r divides C.
SEParams make_se_params(ModuleParams& store, const std::string& prefix, i64 C, i64 r);

// Excitation MLP on a height profile (B,C,Z) -> gate profile in (0,1).
Tensor excite(const Tensor& profile, const SEParams& p);

// Height-resolved channel gating: pool over the x,y plane only, so each z
// level gets its own per-channel gate.
Tensor seattention3d_forward(const Tensor& x, const SEParams& p);

// Baseline: pool over x,y,z; the gate is constant along z by construction.
Tensor senet_forward(const Tensor& x, const SEParams& p);

// Which channel-attention flavor a model applies at its SE sites. The
// ablation harness swaps this without touching anything else.
enum class AttentionVariant { SEAttention3D, SENet };

const char* to_string(AttentionVariant v);
AttentionVariant attention_variant_from_string(const std::string& s);

inline Tensor se_apply(const Tensor& x, const SEParams& p, AttentionVariant v) {
  return v == AttentionVariant::SEAttention3D ? seattention3d_forward(x, p)
                                              : senet_forward(x, p);
}

}  // namespace vsocc
