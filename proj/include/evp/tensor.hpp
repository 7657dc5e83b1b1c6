#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace evp {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
const char* dtype_name(DType dtype);

/// Raised when operand shapes do not conform to an op's contraction or
/// broadcasting rule. The message names the op and the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN/Inf, or a numeric tolerance is
/// violated (FFT residuals, non-finite gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Invokes `fn.template operator()<T>()` with T matching `dtype`.
template <class F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

Buffer make_buffer(DType dtype, std::size_t n);

class Tensor;
struct TensorImpl;

struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(TensorImpl& out, const std::vector<Tensor>& inputs)> backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer data;
  std::unique_ptr<Buffer> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Shared handle to a shaped, row-major array. Copies alias the same storage;
/// use clone() for a deep copy. Values produced by ops are never modified
/// afterwards; only parameter leaves are updated in place by optimizers.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::f32);
  template <class T>
  static Tensor from_vector(Shape shape, std::vector<T> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return evp::numel(impl_->shape); }
  DType dtype() const { return impl_->dtype; }

  template <class T>
  std::span<const T> values() const {
    return std::get<std::vector<T>>(impl_->data);
  }
  template <class T>
  std::span<T> mutable_values() {
    return std::get<std::vector<T>>(impl_->data);
  }

  double at(std::size_t flat_index) const;
  double item() const;
  std::vector<double> to_doubles() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return impl_->grad != nullptr; }
  /// Gradient as a detached tensor; throws if absent.
  Tensor grad() const;
  template <class T>
  std::span<T> grad_values() const {
    return std::get<std::vector<T>>(*impl_->grad);
  }
  void clear_grad() { impl_->grad.reset(); }

  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

  Tensor to(DType dtype) const;
  Tensor clone() const;
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(Shape shape, DType dtype);
  std::shared_ptr<TensorImpl> impl_;
};

/// Allocates a zero-filled tensor.
Tensor make_tensor(Shape shape, DType dtype);

template <class T>
Tensor Tensor::from_vector(Shape shape, std::vector<T> values) {
  if (evp::numel(shape) != values.size()) {
    throw DimensionError("from_vector: shape " + to_string(shape) + " needs " +
                         std::to_string(evp::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t = make_tensor(std::move(shape), dtype_of<T>());
  t.impl_->data = std::move(values);
  return t;
}

// ---------------------------------------------------------------------------
// Graph recording

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// True when an op over `inputs` must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(std::span<const Tensor> inputs);

/// Attaches a backward closure to `out`. The closure receives `out` (with its
/// gradient populated) and the recorded inputs.
void record(Tensor& out, std::string op, std::vector<Tensor> inputs,
            std::function<void(TensorImpl&, const std::vector<Tensor>&)> backward);

/// Gradient slot of `t`, allocated zero-filled on first use.
template <class T>
std::span<T> grad_slot(const Tensor& t) {
  TensorImpl* impl = t.impl();
  if (!impl->grad) impl->grad = std::make_unique<Buffer>(std::vector<T>(t.numel(), T(0)));
  return std::get<std::vector<T>>(*impl->grad);
}

/// Topologically ordered view of the recorded graph reachable from a root.
class Graph {
 public:
  static Graph trace(const Tensor& root);
  /// Tensors in topological order: every tensor appears after its inputs.
  const std::vector<TensorImpl*>& order() const { return order_; }
  std::size_t node_count() const;

 private:
  std::vector<TensorImpl*> order_;
};

/// Reverse-mode sweep from a single-element root. Each recorded node runs its
/// backward closure exactly once; leaves with requires_grad=false never get a
/// gradient slot. Returns the number of nodes visited.
std::size_t backward(const Tensor& root);

/// Throws NumericError if any value of `t` is NaN/Inf.
void check_finite(const Tensor& t, const std::string& op);

}  // namespace evp
