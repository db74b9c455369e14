#include "vsocc/attention.hpp"

namespace vsocc {

SEParams make_se_params(ModuleParams& store, const std::string& prefix, i64 C, i64 r) {
  if (C <= 0 || r <= 0 || C % r != 0)
    throw ShapeError("SEParams: channels " + std::to_string(C) +
                     " not divisible by reduction " + std::to_string(r));
  const i64 Cr = C / r;
  SEParams p;
  p.channels = C;
  p.ratio = r;
  p.reduce_w = &store.add_uniform(prefix + ".reduce.w", Shape{Cr, C, 1}, C);
  p.reduce_b = &store.add_uniform(prefix + ".reduce.b", Shape{Cr}, C);
  p.expand_w = &store.add_uniform(prefix + ".expand.w", Shape{C, Cr, 1}, Cr);
  // Positive bias so freshly initialized gates sit near 1 (pass-through)
  // instead of halving the features they scale.
  p.expand_b = &store.add_full(prefix + ".expand.b", Shape{C}, 2.0);
  return p;
}

Tensor excite(const Tensor& profile, const SEParams& p) {
  Tape& t = *profile.tape();
  Tensor h = conv1d_channel(profile, t.param(*p.reduce_w), t.param(*p.reduce_b));
  h = relu(h);
  h = conv1d_channel(h, t.param(*p.expand_w), t.param(*p.expand_b));
  return sigmoid(h);
}

Tensor seattention3d_forward(const Tensor& x, const SEParams& p) {
  return mul_broadcast(x, excite(squeeze_xy(x), p));
}

Tensor senet_forward(const Tensor& x, const SEParams& p) {
  return mul_broadcast(x, excite(squeeze_xyz(x), p));
}

const char* to_string(AttentionVariant v) {
  return v == AttentionVariant::SEAttention3D ? "seattention3d" : "senet";
}

AttentionVariant attention_variant_from_string(const std::string& s) {
  if (s == "seattention3d") return AttentionVariant::SEAttention3D;
  if (s == "senet") return AttentionVariant::SENet;
  throw ConfigError("unknown attention variant '" + s +
                    "' (expected seattention3d or senet)");
}

}  // namespace vsocc
