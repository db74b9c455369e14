#include "vsocc/tensor.hpp"

#include <cmath>

#include "vsocc/params.hpp"

namespace vsocc {

std::string Shape::str() const {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

void require_positive(const Shape& s, const char* what) {
  if (s.rank() == 0) throw ShapeError(std::string(what) + ": empty shape");
  for (i64 d : s.dims) {
    if (d <= 0)
      throw ShapeError(std::string(what) + ": non-positive dim in " + s.str());
  }
}

DenseTensor::DenseTensor(Shape s, std::vector<Real> d)
    : shape(std::move(s)), data(std::move(d)) {
  require_positive(shape, "DenseTensor");
  if (static_cast<i64>(data.size()) != shape.numel())
    throw ShapeError("DenseTensor: " + std::to_string(data.size()) +
                     " values for shape " + shape.str());
}

DenseTensor DenseTensor::zeros(const Shape& s) {
  require_positive(s, "DenseTensor::zeros");
  return DenseTensor(s, std::vector<Real>(static_cast<std::size_t>(s.numel()), 0.0));
}

DenseTensor DenseTensor::full(const Shape& s, Real v) {
  require_positive(s, "DenseTensor::full");
  return DenseTensor(s, std::vector<Real>(static_cast<std::size_t>(s.numel()), v));
}

bool DenseTensor::all_finite() const {
  for (Real v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

OccupancyGrid::OccupancyGrid(i64 b_, i64 x_, i64 y_, i64 z_)
    : b(b_), x(x_), y(y_), z(z_) {
  require_positive(Shape{b, x, y, z}, "OccupancyGrid");
  labels.assign(static_cast<std::size_t>(numel()), 0);
}

std::uint8_t OccupancyGrid::max_label() const {
  std::uint8_t m = 0;
  for (std::uint8_t v : labels) m = std::max(m, v);
  return m;
}

const Shape& Tensor::shape() const {
  if (!valid()) throw StateError("Tensor: null handle");
  return tape_->node(id_).shape;
}

const std::vector<Real>& Tensor::value() const {
  if (!valid()) throw StateError("Tensor: null handle");
  return tape_->node(id_).val;
}

const std::vector<Real>& Tensor::grad() const {
  if (!valid()) throw StateError("Tensor: null handle");
  if (!tape_->backward_done())
    throw StateError("Tensor::grad read before backward()");
  return tape_->node(id_).grad;
}

int Tape::emit(Shape s, std::vector<Real> val,
               std::function<void(Tape&, int)> backprop) {
  require_positive(s, "Tape::emit");
  if (static_cast<i64>(val.size()) != s.numel())
    throw ShapeError("Tape::emit: " + std::to_string(val.size()) +
                     " values for shape " + s.str());
  if (backward_done_)
    throw StateError("Tape::emit after backward(); build a fresh tape");
  Node n;
  n.shape = std::move(s);
  n.grad.assign(val.size(), 0.0);
  n.val = std::move(val);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::input(const Shape& s, std::vector<Real> values) {
  return handle(emit(s, std::move(values), nullptr));
}

Tensor Tape::input(const DenseTensor& t) { return input(t.shape, t.data); }

Tensor Tape::param(ParamTensor& p) {
  ParamTensor* pp = &p;
  int id = emit(p.shape, p.value, [pp](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
  });
  return handle(id);
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw StateError("Tape::backward called twice");
  if (loss.tape() != this) throw StateError("Tape::backward: foreign tensor");
  Node& top = node(loss.id());
  if (top.shape.numel() != 1)
    throw ShapeError("Tape::backward: loss must be scalar, got " + top.shape.str());
  top.grad[0] = 1.0;
  backward_done_ = true;  // set first so param hooks run in a defined state
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backprop) n.backprop(*this, id);
  }
}

}  // namespace vsocc
