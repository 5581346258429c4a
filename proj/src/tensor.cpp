#include "volseg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "volseg/rng.hpp"

namespace volseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

namespace {
template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;
}

template <typename T>
Tape<T>::Recording::Recording(Tape& tape) : previous_(g_active_tape<T>) {
  g_active_tape<T> = &tape;
}

template <typename T>
Tape<T>::Recording::~Recording() {
  g_active_tape<T> = previous_;
}

template <typename T>
Tape<T>::~Tape() {
  if (g_active_tape<T> == this) g_active_tape<T> = nullptr;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return g_active_tape<T>;
}

template <typename T>
void Tape<T>::push(Node node) {
  if (consumed_) throw NumericError("tape already consumed by backward(); call reset() first");
  nodes_.push_back(std::move(node));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw NumericError("backward() called twice without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw NumericError("backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output == loss.id(); });
  if (!on_tape) throw NumericError("backward(): loss was not produced on this tape");

  Tensor<T> seed = loss;
  seed.grad_buffer()[0] += T(1);
  consumed_ = true;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template <typename T>
Tensor<T> randn(const Shape& shape, std::uint64_t seed, T scale) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("randn: zero extent in shape " + shape_str(shape));
  }
  if (shape.empty()) throw ShapeError("randn: empty shape");
  SplitMix64 rng(seed);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal() * static_cast<double>(scale));
  return Tensor<T>(shape, std::move(data));
}

namespace {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}
}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  detail::record<T>("add", {&a, &b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::record<T>("mul", {&a, &b}, out, [a, b, out]() mutable {
    auto g = out.grad();
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  detail::record<T>("scale", {&a}, out, [a, out, factor]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> reduce(ReduceKind kind, const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("reduce: empty tensor");
  long double acc = 0.0L;
  for (T v : a.data()) acc += static_cast<long double>(v);
  const std::size_t n = a.numel();
  const T factor = kind == ReduceKind::mean ? T(1) / static_cast<T>(n) : T(1);
  if (kind == ReduceKind::mean) acc /= static_cast<long double>(n);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  detail::record<T>(kind == ReduceKind::sum ? "sum" : "mean", {&a}, out,
                    [a, out, factor]() mutable {
                      const T g = out.grad()[0] * factor;
                      for (auto& v : a.grad_buffer()) v += g;
                    });
  return out;
}

template <typename T>
void require_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at element " + std::to_string(i));
    }
  }
}

#define VOLSEG_INSTANTIATE(T)                                            \
  template class Tape<T>;                                                \
  template Tensor<T> randn<T>(const Shape&, std::uint64_t, T);           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                      \
  template Tensor<T> reduce<T>(ReduceKind, const Tensor<T>&);            \
  template void require_finite<T>(std::span<const T>, const std::string&);

VOLSEG_INSTANTIATE(float)
VOLSEG_INSTANTIATE(double)
#undef VOLSEG_INSTANTIATE

}  // namespace volseg
