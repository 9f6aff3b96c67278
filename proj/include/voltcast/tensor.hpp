#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace voltcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Live/peak element accounting across all tensors, used by the scaling
// benchmark. Gradient storage counts too.
namespace memory {
std::size_t live_elements();
std::size_t peak_elements();
// Restart peak tracking from the current live count.
void reset_peak();
}  // namespace memory

// Dense row-major f64 array with optional gradient. A Tensor is a cheap
// handle; the underlying storage is shared. Values are written only at
// construction and (for leaf parameters) by the optimizer between training
// steps; gradients accumulate during a single backward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;

  const std::vector<double>& values() const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  // Gradient read access; returns zeros if nothing was accumulated yet.
  const std::vector<double>& grad() const;

  // Mutation points for the optimizer and the backward pass. A Tensor is a
  // handle; these mutate the shared storage and are usable through const
  // handles, matching shared_ptr semantics.
  std::vector<double>& mutable_values() const;
  std::vector<double>& mutable_grad() const;
  void zero_grad() const;

  // New tensor with the same flat values and a different shape. Copies, so
  // no mutable state is shared with the source.
  Tensor reshaped(Shape new_shape) const;
  // Same values, requires_grad stripped.
  Tensor detached() const;

  // Identity of the underlying storage, for aliasing checks in tests.
  const void* id() const;

 private:
  struct Node;
  std::shared_ptr<Node> node_;
};

// Records the backward rule of every differentiable operation executed
// against it, in execution order. Single use: backward() consumes the tape
// and a second call is an error.
class Tape {
 public:
  Tape() = default;

  // Non-recording tape for inference paths.
  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  void record(std::function<void()> backprop);

  // Seeds d(loss)/d(loss) = 1 and replays the recorded rules in reverse,
  // accumulating gradients into every requires_grad tensor reachable from
  // the loss. Throws UsageError if loss is not scalar or the tape was
  // already consumed.
  void backward(const Tensor& loss);

 private:
  explicit Tape(bool recording) : recording_(recording) {}

  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace voltcast
