#include "voltcast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <utility>

#include "voltcast/errors.hpp"

namespace voltcast {

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

void track_alloc(std::size_t n) {
  const std::size_t live = g_live.fetch_add(n) + n;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
}

void track_free(std::size_t n) { g_live.fetch_sub(n); }

}  // namespace

namespace memory {
std::size_t live_elements() { return g_live.load(); }
std::size_t peak_elements() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_live.load()); }
}  // namespace memory

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct Tensor::Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;

  Node(Shape s, std::vector<double> v, bool rg)
      : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
    track_alloc(values.size());
  }

  ~Node() { track_free(values.size() + grad.size()); }

  void ensure_grad() {
    if (grad.empty()) {
      grad.assign(values.size(), 0.0);
      track_alloc(grad.size());
    }
  }
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  Tensor t;
  t.node_ = std::make_shared<Node>(std::move(shape),
                                   std::vector<double>(n, 0.0), requires_grad);
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  Tensor t;
  t.node_ = std::make_shared<Node>(
      std::move(shape), std::vector<double>(n, value), requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw UsageError("tensor shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t;
  t.node_ =
      std::make_shared<Node>(std::move(shape), std::move(values), requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size() const { return node_->values.size(); }

const std::vector<double>& Tensor::values() const { return node_->values; }

double Tensor::item() const {
  if (size() != 1) {
    throw UsageError("item() requires a scalar tensor, have " +
                     shape_str(shape()));
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::vector<double>& Tensor::mutable_values() const {
  return node_->values;
}

std::vector<double>& Tensor::mutable_grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw UsageError("cannot reshape " + shape_str(shape()) + " into " +
                     shape_str(new_shape));
  }
  return from(std::move(new_shape), node_->values, false);
}

Tensor Tensor::detached() const { return from(shape(), node_->values, false); }

const void* Tensor::id() const { return node_.get(); }

void Tape::record(std::function<void()> backprop) {
  nodes_.push_back(std::move(backprop));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  if (consumed_) {
    throw UsageError("tape already consumed; record a fresh forward pass");
  }
  consumed_ = true;
  if (loss.requires_grad()) {
    loss.mutable_grad()[0] += 1.0;
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)();
  }
}

}  // namespace voltcast
