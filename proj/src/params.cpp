#include "vsocc/params.hpp"

#include <cmath>

#include "vsocc/rng.hpp"

namespace vsocc {

ParamTensor& ModuleParams::insert(const std::string& name, const Shape& shape) {
  require_positive(shape, "ModuleParams");
  if (by_name_.count(name))
    throw StateError("ModuleParams: duplicate parameter '" + name + "'");
  auto p = std::make_unique<ParamTensor>();
  p->name = name;
  p->shape = shape;
  p->value.assign(static_cast<std::size_t>(shape.numel()), 0.0);
  p->grad.assign(p->value.size(), 0.0);
  ParamTensor* raw = p.get();
  owned_.push_back(std::move(p));
  order_.push_back(raw);
  by_name_[name] = raw;
  return *raw;
}

ParamTensor& ModuleParams::add_zeros(const std::string& name, const Shape& shape) {
  return insert(name, shape);
}

ParamTensor& ModuleParams::add_full(const std::string& name, const Shape& shape, Real value) {
  ParamTensor& p = insert(name, shape);
  std::fill(p.value.begin(), p.value.end(), value);
  return p;
}

ParamTensor& ModuleParams::add_uniform(const std::string& name, const Shape& shape,
                                       i64 fan_in) {
  if (fan_in <= 0) throw ShapeError("add_uniform: fan_in must be positive");
  ParamTensor& p = insert(name, shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(Rng::mix(seed_, name));
  for (auto& v : p.value) v = rng.uniform(-bound, bound);
  return p;
}

ParamTensor& ModuleParams::add_identity_conv(const std::string& name, const Shape& shape,
                                             Real diag, Real noise_frac) {
  if (shape.rank() != 5 || shape[2] != shape[3] || shape[3] != shape[4] ||
      shape[2] % 2 == 0)
    throw ShapeError("add_identity_conv: want (Co,Ci,k,k,k) with odd k, got " +
                     shape.str());
  const i64 Co = shape[0], Ci = shape[1], k = shape[2];
  ParamTensor& p = insert(name, shape);
  const double bound = noise_frac / std::sqrt(static_cast<double>(Ci * k * k * k));
  Rng rng(Rng::mix(seed_, name));
  for (auto& v : p.value) v = rng.uniform(-bound, bound);
  const i64 mid = k / 2;
  for (i64 co = 0; co < Co; ++co)
    for (i64 ci = co; ci < Ci; ci += Co)
      p.value[static_cast<std::size_t>((((co * Ci + ci) * k + mid) * k + mid) * k + mid)] +=
          diag;
  return p;
}

ParamTensor& ModuleParams::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw StateError("ModuleParams: unknown parameter '" + name + "'");
  return *it->second;
}

const ParamTensor& ModuleParams::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw StateError("ModuleParams: unknown parameter '" + name + "'");
  return *it->second;
}

std::vector<const ParamTensor*> ModuleParams::entries() const {
  return {order_.begin(), order_.end()};
}

i64 ModuleParams::total_scalars() const {
  i64 n = 0;
  for (const auto* p : order_) n += p->numel();
  return n;
}

void ModuleParams::zero_grad() {
  for (auto* p : order_) p->zero_grad();
}

}  // namespace vsocc
