#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsocc/tensor.hpp"

namespace vsocc {

// A trainable tensor living outside any tape. Tapes bind to it via
// Tape::param(); backward() accumulates into `grad`.
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;

  i64 numel() const { return static_cast<i64>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Owning registry of named parameters. Initialization is a pure function of
// (store seed, parameter name, shape), independent of registration order, so
// two models built with the same seed give identical values to identically
// named parameters -- which is what makes ablation variants paired: shared
// submodules start from the same weights no matter which variant owns them.
class ModuleParams {
 public:
  explicit ModuleParams(std::uint64_t seed) : seed_(seed) {}
  ModuleParams(const ModuleParams&) = delete;
  ModuleParams& operator=(const ModuleParams&) = delete;
  ModuleParams(ModuleParams&&) = default;
  ModuleParams& operator=(ModuleParams&&) = default;

  // Registers a zero-initialized parameter. Throws StateError on a duplicate
  // name -- names are the identity used by checkpoints and paired init.
  ParamTensor& add_zeros(const std::string& name, const Shape& shape);

  // All coordinates set to the same value (e.g. gate biases that should
  // start near pass-through).
  ParamTensor& add_full(const std::string& name, const Shape& shape, Real value);

  // Registers a parameter drawn uniformly from +-1/sqrt(fan_in).
  ParamTensor& add_uniform(const std::string& name, const Shape& shape, i64 fan_in);
  // (Co,Ci,k,k,k) conv kernel started near the identity map: `diag` on the
  // center tap of every input channel congruent to the output channel, plus
  // `noise_frac` of the usual fan-in-scaled uniform noise for symmetry breaking.
  ParamTensor& add_identity_conv(const std::string& name, const Shape& shape,
                                 Real diag, Real noise_frac);

  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;

  // Registration order (stable across runs; used for checkpoint layout).
  const std::vector<ParamTensor*>& entries() { return order_; }
  std::vector<const ParamTensor*> entries() const;

  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return order_.size(); }
  i64 total_scalars() const;
  void zero_grad();

 private:
  ParamTensor& insert(const std::string& name, const Shape& shape);

  std::uint64_t seed_;
  std::vector<std::unique_ptr<ParamTensor>> owned_;
  std::vector<ParamTensor*> order_;
  std::unordered_map<std::string, ParamTensor*> by_name_;
};

}  // namespace vsocc
