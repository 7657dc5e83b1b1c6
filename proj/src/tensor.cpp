#include "evp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace evp {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

Buffer make_buffer(DType dtype, std::size_t n) {
  if (dtype == DType::f32) return std::vector<float>(n, 0.0f);
  return std::vector<double>(n, 0.0);
}

Tensor make_tensor(Shape shape, DType dtype) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data = make_buffer(dtype, numel(shape));
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return make_tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = make_tensor(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    for (T& v : t.mutable_values<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  if (evp::numel(shape) != values.size()) {
    throw DimensionError("from_values: shape " + to_string(shape) + " needs " +
                         std::to_string(evp::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t = make_tensor(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>() {
    auto out = t.mutable_values<T>();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

double Tensor::at(std::size_t flat_index) const {
  return dispatch(dtype(), [&]<class T>() { return static_cast<double>(values<T>()[flat_index]); });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item: tensor of shape " + to_string(shape()));
  return at(0);
}

std::vector<double> Tensor::to_doubles() const {
  return dispatch(dtype(), [&]<class T>() {
    auto v = values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.reset();
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) throw std::logic_error("grad: tensor has no gradient");
  Tensor g = make_tensor(shape(), dtype());
  g.impl_->data = *impl_->grad;
  return g;
}

Tensor Tensor::to(DType target) const {
  Tensor out = make_tensor(shape(), target);
  dispatch(dtype(), [&]<class S>() {
    auto src = values<S>();
    dispatch(target, [&]<class D>() {
      auto dst = out.mutable_values<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  out.impl_->requires_grad = impl_->requires_grad && impl_->grad_fn == nullptr;
  return out;
}

Tensor Tensor::clone() const {
  Tensor out = make_tensor(shape(), dtype());
  out.impl_->data = impl_->data;
  out.impl_->requires_grad = impl_->requires_grad && impl_->grad_fn == nullptr;
  return out;
}

Tensor Tensor::detach() const {
  Tensor out = make_tensor(shape(), dtype());
  out.impl_->data = impl_->data;
  return out;
}

// ---------------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool needs_grad(std::span<const Tensor> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record(Tensor& out, std::string op, std::vector<Tensor> inputs,
            std::function<void(TensorImpl&, const std::vector<Tensor>&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
}

Graph Graph::trace(const Tensor& root) {
  Graph graph;
  std::unordered_set<TensorImpl*> seen;
  // Iterative post-order DFS; frames hold (tensor, next input index).
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const Node* node = impl->grad_fn.get();
    if (node && next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].impl();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    graph.order_.push_back(impl);
    stack.pop_back();
  }
  return graph;
}

std::size_t Graph::node_count() const {
  std::size_t n = 0;
  for (TensorImpl* t : order_) n += t->grad_fn != nullptr;
  return n;
}

std::size_t backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw DimensionError("backward: root must hold a single element");
  }
  if (!root.requires_grad()) return 0;
  dispatch(root.dtype(), [&]<class T>() { grad_slot<T>(root)[0] += T(1); });
  const Graph graph = Graph::trace(root);
  std::size_t visited = 0;
  const auto& order = graph.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->grad_fn || !impl->grad) continue;
    impl->grad_fn->backward(*impl, impl->grad_fn->inputs);
    ++visited;
  }
  return visited;
}

void check_finite(const Tensor& t, const std::string& op) {
  dispatch(t.dtype(), [&]<class T>() {
    for (T v : t.values<T>()) {
      if (!std::isfinite(v)) throw NumericError(op + ": non-finite value in output");
    }
  });
}

}  // namespace evp
