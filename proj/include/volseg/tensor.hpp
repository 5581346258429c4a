#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "volseg/error.hpp"

namespace volseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
std::uint64_t next_tensor_id();
}

// Dense row-major tensor handle. Copies share storage (and gradient); use
// clone() for an independent buffer. 5-D tensors are laid out N, C, D, H, W.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
    impl_->id = detail::next_tensor_id();
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  std::uint64_t id() const { return impl_->id; }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty() || numel() == 0; }
  std::span<const T> grad() const { return impl_->grad; }

  // Gradient buffer, allocated as zeros on first use.
  std::span<T> grad_buffer() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() const { std::fill(impl_->grad.begin(), impl_->grad.end(), T(0)); }
  void clear_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }

  Tensor clone() const { return Tensor(shape(), impl_->data, false); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(shape(), std::move(out), requires_grad());
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops record onto the tape that is active on the calling
// thread (see Tape::record) whenever one of their inputs requires a
// gradient. Nodes are appended in execution order, so the list is already
// topologically sorted.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::function<void()> backward;
  };

  // Activates a tape for the current thread until destroyed.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  [[nodiscard]] Recording record() { return Recording(*this); }
  static Tape* active();

  void push(Node node);

  // Seeds d(loss)/d(loss) = 1 and runs every node in reverse order,
  // accumulating into grad buffers. May run once per reset().
  void backward(const Tensor<T>& loss);

  // Drops all nodes (and the activations they keep alive).
  void reset();

  const std::vector<Node>& nodes() const { return nodes_; }
  bool consumed() const { return consumed_; }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Records `out` as produced by `op` from `inputs` when a tape is active and
// some input requires a gradient. `backward` reads out's grad and
// accumulates into the inputs' grads.
template <typename T>
void record(const char* op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& out,
            std::function<void()> backward) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr || !any_requires_grad(inputs)) return;
  out.set_requires_grad(true);
  typename Tape<T>::Node node;
  node.op = op;
  for (const auto* t : inputs) node.inputs.push_back(t->id());
  node.output = out.id();
  node.backward = [out, bw = std::move(backward)]() {
    if (!out.grad().empty()) bw();
  };
  tape->push(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T> randn(const Shape& shape, std::uint64_t seed, T scale);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

enum class ReduceKind { sum, mean };

// Scalar (shape {1}) result. Accumulates in long double.
template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a);

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  return reduce(ReduceKind::sum, a);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return reduce(ReduceKind::mean, a);
}

// Throws NumericError naming `what` if any element is NaN or Inf.
template <typename T>
void require_finite(std::span<const T> values, const std::string& what);

}  // namespace volseg
