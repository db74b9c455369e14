#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsocc {

using Real = double;
using i64 = std::int64_t;

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-recoverable derives from std::runtime_error
// so the CLI can map exception type -> exit code in one place.
// ---------------------------------------------------------------------------

// Mismatched or invalid tensor dimensions.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward twice, reading grads before backward, etc.
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration (file contents, flag combinations).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid runtime data (labels out of range, malformed tensor files, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, int step)
      : std::runtime_error(msg), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Scene synthesis gave up (e.g. no room left to place an object).
class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& msg, std::uint64_t seed)
      : std::runtime_error(msg), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

struct Shape {
  std::vector<i64> dims;

  Shape() = default;
  Shape(std::initializer_list<i64> d) : dims(d) {}
  explicit Shape(std::vector<i64> d) : dims(std::move(d)) {}

  int rank() const { return static_cast<int>(dims.size()); }
  i64 operator[](int i) const { return dims[static_cast<std::size_t>(i)]; }

  i64 numel() const {
    i64 n = 1;
    for (i64 d : dims) n *= d;
    return n;
  }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const;
};

// Throws ShapeError unless every dim is positive.
void require_positive(const Shape& s, const char* what);

// ---------------------------------------------------------------------------
// Plain dense storage (no gradient tracking). Row-major, last axis fastest.
// Voxel features use rank 5: (batch, channel, x, y, z).
// ---------------------------------------------------------------------------

struct DenseTensor {
  Shape shape;
  std::vector<Real> data;

  DenseTensor() = default;
  DenseTensor(Shape s, std::vector<Real> d);

  static DenseTensor zeros(const Shape& s);
  static DenseTensor full(const Shape& s, Real v);

  i64 numel() const { return static_cast<i64>(data.size()); }
  bool all_finite() const;
};

// Semantic labels on a voxel grid: (batch, x, y, z), one class id per voxel.
struct OccupancyGrid {
  i64 b = 0, x = 0, y = 0, z = 0;
  std::vector<std::uint8_t> labels;

  OccupancyGrid() = default;
  OccupancyGrid(i64 b_, i64 x_, i64 y_, i64 z_);

  i64 numel() const { return b * x * y * z; }

  std::uint8_t at(i64 bi, i64 xi, i64 yi, i64 zi) const {
    return labels[static_cast<std::size_t>(((bi * x + xi) * y + yi) * z + zi)];
  }
  std::uint8_t& at(i64 bi, i64 xi, i64 yi, i64 zi) {
    return labels[static_cast<std::size_t>(((bi * x + xi) * y + yi) * z + zi)];
  }

  // Highest class id present, or 0 for an all-empty grid.
  std::uint8_t max_label() const;
};

// ---------------------------------------------------------------------------
// Recorded tape for reverse-mode differentiation.
//
// Ops append value nodes during the forward pass; each node carries a closure
// that routes output gradients to its inputs. backward() replays the tape in
// reverse creation order. One backward per tape; build a fresh tape per step.
// Nodes are addressed by index because the node vector reallocates as it
// grows -- closures must capture ids, never pointers into the tape.
// ---------------------------------------------------------------------------

class Tape;
struct ParamTensor;

// Lightweight handle to a tape node.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  const std::vector<Real>& value() const;
  // Gradient of the backward() scalar w.r.t. this node. StateError before
  // backward() has run.
  const std::vector<Real>& grad() const;

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a copy of `values`; gradients are tracked and readable.
  Tensor input(const Shape& s, std::vector<Real> values);
  Tensor input(const DenseTensor& t);

  // Leaf bound to a parameter: after backward(), the node gradient is
  // accumulated into p.grad (+=). The parameter must outlive the tape.
  // Binding the same parameter more than once is fine; contributions add.
  Tensor param(ParamTensor& p);

  // Runs reverse-mode accumulation from a scalar node (numel == 1).
  // Throws StateError on a second call and ShapeError for a non-scalar.
  void backward(const Tensor& loss);

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  // --- op-author interface -------------------------------------------------

  struct Node {
    Shape shape;
    std::vector<Real> val;
    std::vector<Real> grad;
    // Pushes node_id's grad into its inputs' grads. Empty for leaves.
    std::function<void(Tape&, int)> backprop;
  };

  int emit(Shape s, std::vector<Real> val, std::function<void(Tape&, int)> backprop);

  // References are invalidated by the next emit(); re-fetch by id.
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor handle(int id) { return Tensor(this, id); }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace vsocc
