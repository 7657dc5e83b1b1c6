#include "evp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "evp/kernels.hpp"

namespace evp {
namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b,
                              const char* what = "incompatible shapes") {
  throw DimensionError(std::string(op) + ": " + what + " " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Tensor finish(Tensor out, const char* op) {
  check_finite(out, op);
  return out;
}

template <class T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Contractions

namespace {

Tensor matmul_impl(const Tensor& a, const Tensor& w, const Tensor& bias, const char* op) {
  if (w.rank() != 2 || a.rank() < 1 || a.shape().back() != w.dim(0)) shape_error(op, a, w);
  require_same_dtype(a, w, op);
  const std::size_t kdim = w.dim(0), ndim = w.dim(1), rows = a.numel() / kdim;
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != ndim) shape_error(op, w, bias);
    require_same_dtype(a, bias, op);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(ndim);
  Tensor out = make_tensor(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    kernels::GemmArgs g;
    g.m = rows, g.n = ndim, g.k = kdim, g.lda = kdim, g.ldb = ndim, g.ldc = ndim;
    T* c = out.mutable_values<T>().data();
    if (bias.defined()) {
      auto b = bias.values<T>();
      for (std::size_t i = 0; i < rows; ++i) std::copy(b.begin(), b.end(), c + i * ndim);
      g.accumulate = true;
    }
    kernels::gemm<T>(g, a.values<T>().data(), w.values<T>().data(), c);
  });
  finish(out, op);
  if (needs_grad({&a, &w, &bias})) {
    std::vector<Tensor> inputs{a, w};
    if (bias.defined()) inputs.push_back(bias);
    record(out, op, std::move(inputs),
           [rows, kdim, ndim](TensorImpl& self, const std::vector<Tensor>& in) {
             dispatch(self.dtype, [&]<class T>() {
               const T* gout = std::get<std::vector<T>>(*self.grad).data();
               const Tensor& x = in[0];
               const Tensor& wt = in[1];
               if (x.requires_grad()) {
                 kernels::GemmArgs g;
                 g.trans_b = true, g.m = rows, g.n = kdim, g.k = ndim;
                 g.lda = ndim, g.ldb = ndim, g.ldc = kdim, g.accumulate = true;
                 kernels::gemm<T>(g, gout, wt.values<T>().data(), grad_slot<T>(x).data());
               }
               if (wt.requires_grad()) {
                 kernels::GemmArgs g;
                 g.trans_a = true, g.m = kdim, g.n = ndim, g.k = rows;
                 g.lda = kdim, g.ldb = ndim, g.ldc = ndim, g.accumulate = true;
                 kernels::gemm<T>(g, x.values<T>().data(), gout, grad_slot<T>(wt).data());
               }
               if (in.size() > 2 && in[2].requires_grad()) {
                 T* gb = grad_slot<T>(in[2]).data();
                 for (std::size_t i = 0; i < rows; ++i) kernels::axpy<T>(ndim, T(1), gout + i * ndim, gb);
               }
             });
           });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, Tensor{}, "matmul"); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return matmul_impl(x, w, bias, "linear");
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with trailing broadcast

namespace {

enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* op) {
  require_same_dtype(a, b, op);
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) shape_error(op, a, b, "shapes not broadcast-compatible");
  const Tensor& big = a_big ? a : b;
  const std::size_t n = big.numel();
  const std::size_t sa = a.numel(), sb = b.numel();
  Tensor out = make_tensor(big.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.values<T>();
    auto bv = b.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t i = 0; i < n; ++i) {
      const T x = av[i % sa], y = bv[i % sb];
      o[i] = kind == BinOp::add ? x + y : kind == BinOp::sub ? x - y : x * y;
    }
  });
  finish(out, op);
  if (needs_grad({&a, &b})) {
    record(out, op, {a, b}, [kind, n, sa, sb](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto g = std::span<const T>(std::get<std::vector<T>>(*self.grad));
        const Tensor& x = in[0];
        const Tensor& y = in[1];
        if (x.requires_grad()) {
          auto gx = grad_slot<T>(x);
          if (kind == BinOp::mul) {
            auto yv = y.values<T>();
            for (std::size_t i = 0; i < n; ++i) gx[i % sa] += g[i] * yv[i % sb];
          } else if (sa == n) {
            kernels::axpy<T>(n, T(1), g.data(), gx.data());
          } else {
            for (std::size_t i = 0; i < n; i += sa) kernels::axpy<T>(sa, T(1), g.data() + i, gx.data());
          }
        }
        if (y.requires_grad()) {
          auto gy = grad_slot<T>(y);
          if (kind == BinOp::mul) {
            auto xv = x.values<T>();
            for (std::size_t i = 0; i < n; ++i) gy[i % sb] += g[i] * xv[i % sa];
          } else {
            const T sign = kind == BinOp::sub ? T(-1) : T(1);
            for (std::size_t i = 0; i < n; i += sb) kernels::axpy<T>(sb, sign, g.data() + i, gy.data());
          }
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) o[i] = xv[i] * T(factor);
  });
  finish(out, "scale");
  if (needs_grad({&x})) {
    record(out, "scale", {x}, [factor](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        kernels::axpy<T>(g.size(), T(factor), g.data(), grad_slot<T>(in[0]).data());
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Tensor gelu(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) o[i] = gelu_scalar(xv[i]);
  });
  finish(out, "gelu");
  if (needs_grad({&x})) {
    record(out, "gelu", {x}, [](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto xv = in[0].values<T>();
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad(xv[i]);
      });
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) o[i] = sigmoid_scalar(xv[i]);
  });
  finish(out, "sigmoid");
  if (needs_grad({&x})) {
    record(out, "sigmoid", {x}, [](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto& y = std::get<std::vector<T>>(self.data);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
      });
    });
  }
  return out;
}

namespace {

template <class T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

// dx = y ⊙ (g − <g, y>) per row, accumulated.
template <class T>
void softmax_rows_backward(const T* y, const T* g, T* gx, std::size_t rows, std::size_t cols,
                           T factor) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y + r * cols;
    const T* gr = g + r * cols;
    const T d = kernels::dot<T>(cols, gr, yr);
    T* out = gx + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += factor * yr[j] * (gr[j] - d);
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const std::size_t cols = x.shape().back(), rows = x.numel() / cols;
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    softmax_rows(x.values<T>().data(), out.mutable_values<T>().data(), rows, cols);
  });
  finish(out, "softmax");
  if (needs_grad({&x})) {
    record(out, "softmax", {x}, [rows, cols](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        softmax_rows_backward(std::get<std::vector<T>>(self.data).data(),
                              std::get<std::vector<T>>(*self.grad).data(),
                              grad_slot<T>(in[0]).data(), rows, cols, T(1));
      });
    });
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t cols = x.shape().back(), rows = x.numel() / cols;
  if (gamma.rank() != 1 || gamma.dim(0) != cols) shape_error("layernorm", x, gamma);
  if (beta.rank() != 1 || beta.dim(0) != cols) shape_error("layernorm", x, beta);
  require_same_dtype(x, gamma, "layernorm");
  require_same_dtype(x, beta, "layernorm");
  Tensor out = make_tensor(x.shape(), x.dtype());
  auto stats = std::make_shared<Buffer>(make_buffer(x.dtype(), 2 * rows));
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto gv = gamma.values<T>();
    auto bv = beta.values<T>();
    auto o = out.mutable_values<T>();
    auto& st = std::get<std::vector<T>>(*stats);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * cols;
      T mu = 0;
      for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
      mu /= T(cols);
      T var = 0;
      for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= T(cols);
      const T rstd = T(1) / std::sqrt(var + T(eps));
      st[2 * r] = mu;
      st[2 * r + 1] = rstd;
      for (std::size_t j = 0; j < cols; ++j) o[r * cols + j] = (xr[j] - mu) * rstd * gv[j] + bv[j];
    }
  });
  finish(out, "layernorm");
  if (needs_grad({&x, &gamma, &beta})) {
    record(out, "layernorm", {x, gamma, beta},
           [rows, cols, stats](TensorImpl& self, const std::vector<Tensor>& in) {
             dispatch(self.dtype, [&]<class T>() {
               auto& g = std::get<std::vector<T>>(*self.grad);
               auto& st = std::get<std::vector<T>>(*stats);
               auto xv = in[0].values<T>();
               auto gv = in[1].values<T>();
               std::span<T> gx, gg, gb;
               if (in[0].requires_grad()) gx = grad_slot<T>(in[0]);
               if (in[1].requires_grad()) gg = grad_slot<T>(in[1]);
               if (in[2].requires_grad()) gb = grad_slot<T>(in[2]);
               std::vector<T> xhat(cols), dxhat(cols);
               for (std::size_t r = 0; r < rows; ++r) {
                 const T mu = st[2 * r], rstd = st[2 * r + 1];
                 const T* gr = g.data() + r * cols;
                 T mean_d = 0, mean_dx = 0;
                 for (std::size_t j = 0; j < cols; ++j) {
                   xhat[j] = (xv[r * cols + j] - mu) * rstd;
                   dxhat[j] = gr[j] * gv[j];
                   mean_d += dxhat[j];
                   mean_dx += dxhat[j] * xhat[j];
                   if (!gg.empty()) gg[j] += gr[j] * xhat[j];
                   if (!gb.empty()) gb[j] += gr[j];
                 }
                 if (gx.empty()) continue;
                 mean_d /= T(cols);
                 mean_dx /= T(cols);
                 for (std::size_t j = 0; j < cols; ++j)
                   gx[r * cols + j] += rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
               }
             });
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out = make_tensor(std::move(shape), x.dtype());
  out.impl()->data = x.impl()->data;
  if (needs_grad({&x})) {
    record(out, "reshape", {x}, [](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        kernels::axpy<T>(g.size(), T(1), g.data(), grad_slot<T>(in[0]).data());
      });
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  if (axis >= first.rank()) throw DimensionError("concat: axis out of range for " + to_string(first.shape()));
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.rank() != first.rank()) shape_error("concat", first, p);
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) shape_error("concat", first, p);
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  const std::size_t out_row = out_shape[axis] * inner;
  Tensor out = make_tensor(out_shape, first.dtype());
  dispatch(first.dtype(), [&]<class T>() {
    auto o = out.mutable_values<T>();
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t row = p.dim(axis) * inner;
      auto pv = p.values<T>();
      for (std::size_t i = 0; i < outer; ++i)
        std::copy_n(pv.data() + i * row, row, o.data() + i * out_row + offset);
      offset += row;
    }
  });
  if (needs_grad(std::span<const Tensor>(parts))) {
    record(out, "concat", parts, [outer, inner, out_row, axis](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        std::size_t offset = 0;
        for (const Tensor& p : in) {
          const std::size_t row = p.dim(axis) * inner;
          if (p.requires_grad()) {
            auto gp = grad_slot<T>(p);
            for (std::size_t i = 0; i < outer; ++i)
              kernels::axpy<T>(row, T(1), g.data() + i * out_row + offset, gp.data() + i * row);
          }
          offset += row;
        }
      });
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t in_row = x.dim(axis) * inner, out_row = (end - begin) * inner,
                    offset = begin * inner;
  Tensor out = make_tensor(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t i = 0; i < outer; ++i)
      std::copy_n(xv.data() + i * in_row + offset, out_row, o.data() + i * out_row);
  });
  if (needs_grad({&x})) {
    record(out, "slice", {x}, [outer, in_row, out_row, offset](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < outer; ++i)
          kernels::axpy<T>(out_row, T(1), g.data() + i * out_row, gx.data() + i * in_row + offset);
      });
    });
  }
  return out;
}

namespace {

Tensor reduce_all(const Tensor& x, bool average, const char* op) {
  const std::size_t n = x.numel();
  Tensor out = make_tensor({1}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    double s = 0;
    for (T v : x.values<T>()) s += v;
    out.mutable_values<T>()[0] = static_cast<T>(average ? s / double(n) : s);
  });
  finish(out, op);
  if (needs_grad({&x})) {
    record(out, op, {x}, [n, average](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const T g = std::get<std::vector<T>>(*self.grad)[0] * (average ? T(1) / T(n) : T(1));
        for (T& v : grad_slot<T>(in[0])) v += g;
      });
    });
  }
  return out;
}

}  // namespace

Tensor mean(const Tensor& x) { return reduce_all(x, true, "mean"); }
Tensor sum(const Tensor& x) { return reduce_all(x, false, "sum"); }

// ---------------------------------------------------------------------------
// Attention

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: Q/K/V shapes differ " + to_string(q.shape()) + ", " +
                         to_string(k.shape()) + ", " + to_string(v.shape()));
  }
  if (q.rank() != 2 && q.rank() != 3) throw DimensionError("attention: expected [N, d] or [B, N, d], got " + to_string(q.shape()));
  require_same_dtype(q, k, "attention");
  require_same_dtype(q, v, "attention");
  const std::size_t batch = q.rank() == 3 ? q.dim(0) : 1;
  const std::size_t n = q.dim(q.rank() - 2), d = q.shape().back();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool grad = needs_grad({&q, &k, &v});
  auto probs = std::make_shared<Buffer>(make_buffer(q.dtype(), batch * heads * n * n));
  Tensor out = make_tensor(q.shape(), q.dtype());
  dispatch(q.dtype(), [&]<class T>() {
    const T* qv = q.values<T>().data();
    const T* kv = k.values<T>().data();
    const T* vv = v.values<T>().data();
    T* o = out.mutable_values<T>().data();
    auto& p = std::get<std::vector<T>>(*probs);
    std::vector<T> scores(n * n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = b * n * d + h * dh;
        kernels::GemmArgs g;
        g.trans_b = true, g.m = n, g.n = n, g.k = dh, g.lda = d, g.ldb = d, g.ldc = n;
        kernels::gemm<T>(g, qv + off, kv + off, scores.data());
        for (T& s : scores) s *= T(scale_factor);
        T* ph = p.data() + (b * heads + h) * n * n;
        softmax_rows(scores.data(), ph, n, n);
        kernels::GemmArgs g2;
        g2.m = n, g2.n = dh, g2.k = n, g2.lda = n, g2.ldb = d, g2.ldc = d;
        kernels::gemm<T>(g2, ph, vv + off, o + off);
      }
    }
  });
  finish(out, "attention");
  if (grad) {
    record(out, "attention", {q, k, v},
           [=](TensorImpl& self, const std::vector<Tensor>& in) {
             dispatch(self.dtype, [&]<class T>() {
               const T* go = std::get<std::vector<T>>(*self.grad).data();
               const T* qv = in[0].values<T>().data();
               const T* kv = in[1].values<T>().data();
               const T* vv = in[2].values<T>().data();
               T* gq = in[0].requires_grad() ? grad_slot<T>(in[0]).data() : nullptr;
               T* gk = in[1].requires_grad() ? grad_slot<T>(in[1]).data() : nullptr;
               T* gv = in[2].requires_grad() ? grad_slot<T>(in[2]).data() : nullptr;
               auto& p = std::get<std::vector<T>>(*probs);
               std::vector<T> dp(n * n), ds(n * n);
               for (std::size_t b = 0; b < batch; ++b) {
                 for (std::size_t h = 0; h < heads; ++h) {
                   const std::size_t off = b * n * d + h * dh;
                   const T* ph = p.data() + (b * heads + h) * n * n;
                   if (gv) {
                     kernels::GemmArgs g;
                     g.trans_a = true, g.m = n, g.n = dh, g.k = n;
                     g.lda = n, g.ldb = d, g.ldc = d, g.accumulate = true;
                     kernels::gemm<T>(g, ph, go + off, gv + off);
                   }
                   if (!gq && !gk) continue;
                   kernels::GemmArgs g;
                   g.trans_b = true, g.m = n, g.n = n, g.k = dh, g.lda = d, g.ldb = d, g.ldc = n;
                   kernels::gemm<T>(g, go + off, vv + off, dp.data());
                   std::fill(ds.begin(), ds.end(), T(0));
                   softmax_rows_backward(ph, dp.data(), ds.data(), n, n, T(scale_factor));
                   if (gq) {
                     kernels::GemmArgs g2;
                     g2.m = n, g2.n = dh, g2.k = n, g2.lda = n, g2.ldb = d, g2.ldc = d, g2.accumulate = true;
                     kernels::gemm<T>(g2, ds.data(), kv + off, gq + off);
                   }
                   if (gk) {
                     kernels::GemmArgs g3;
                     g3.trans_a = true, g3.m = n, g3.n = dh, g3.k = n;
                     g3.lda = n, g3.ldb = d, g3.ldc = d, g3.accumulate = true;
                     kernels::gemm<T>(g3, ds.data(), qv + off, gk + off);
                   }
                 }
               }
             });
           });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return multi_head_attention(q, k, v, 1);
}

Tensor expand_batch(const Tensor& x, std::size_t batch) {
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.numel();
  Tensor out = make_tensor(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t b = 0; b < batch; ++b) std::copy(xv.begin(), xv.end(), o.begin() + b * n);
  });
  if (needs_grad({&x})) {
    record(out, "expand_batch", {x}, [n, batch](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t b = 0; b < batch; ++b) kernels::axpy<T>(n, T(1), g.data() + b * n, gx.data());
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial ops on channel-last token grids

Grid patchify_grid(Grid grid, PatchSpec spec) {
  if (spec.kernel == 0 || spec.stride == 0) throw DimensionError("patchify: zero kernel or stride");
  const auto out_dim = [&](std::size_t extent, const char* axis) {
    const std::size_t padded = extent + 2 * spec.pad;
    if (padded < spec.kernel || (padded - spec.kernel) % spec.stride != 0) {
      throw DimensionError(std::string("patchify: ") + axis + " extent " + std::to_string(extent) +
                           " not divisible by kernel " + std::to_string(spec.kernel) + " / stride " +
                           std::to_string(spec.stride) + " (pad " + std::to_string(spec.pad) + ")");
    }
    return (padded - spec.kernel) / spec.stride + 1;
  };
  return Grid{out_dim(grid.h, "height"), out_dim(grid.w, "width")};
}

namespace {

// Rounds floor((extent + 2p - k)/s) + 1 without requiring exact division,
// used for overlapping windows where the last window may overhang.
Grid window_grid(Grid grid, PatchSpec spec) {
  if (spec.kernel == spec.stride && spec.pad == 0) return patchify_grid(grid, spec);
  const auto out_dim = [&](std::size_t extent) {
    const std::size_t padded = extent + 2 * spec.pad;
    if (padded < spec.kernel) throw DimensionError("patchify: window larger than padded grid");
    return (padded - spec.kernel) / spec.stride + 1;
  };
  return Grid{out_dim(grid.h), out_dim(grid.w)};
}

}  // namespace

Tensor patchify(const Tensor& x, Grid grid, PatchSpec spec) {
  if (x.rank() != 3 || x.dim(1) != grid.cells()) {
    throw DimensionError("patchify: tokens " + to_string(x.shape()) + " do not match grid " +
                         std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
  const Grid og = window_grid(grid, spec);
  const std::size_t batch = x.dim(0), ch = x.dim(2), k = spec.kernel;
  const std::size_t row = k * k * ch;
  Tensor out = make_tensor({batch, og.cells(), row}, x.dtype());
  // Each output slot maps to a source cell or to padding (-1).
  std::vector<std::ptrdiff_t> src(og.cells() * k * k);
  for (std::size_t oy = 0; oy < og.h; ++oy)
    for (std::size_t ox = 0; ox < og.w; ++ox)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * spec.stride + ky) - std::ptrdiff_t(spec.pad);
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * spec.stride + kx) - std::ptrdiff_t(spec.pad);
          const bool inside = iy >= 0 && ix >= 0 && iy < std::ptrdiff_t(grid.h) && ix < std::ptrdiff_t(grid.w);
          src[(oy * og.w + ox) * k * k + ky * k + kx] = inside ? iy * std::ptrdiff_t(grid.w) + ix : -1;
        }
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < src.size(); ++s)
        if (src[s] >= 0)
          std::copy_n(xv.data() + (b * grid.cells() + std::size_t(src[s])) * ch, ch,
                      o.data() + b * og.cells() * row + s * ch);
  });
  if (needs_grad({&x})) {
    record(out, "patchify", {x}, [src = std::move(src), batch, ch, grid, og, row](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t s = 0; s < src.size(); ++s)
            if (src[s] >= 0)
              kernels::axpy<T>(ch, T(1), g.data() + b * og.cells() * row + s * ch,
                               gx.data() + (b * grid.cells() + std::size_t(src[s])) * ch);
      });
    });
  }
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t from, std::size_t to) {
  std::vector<Tap> taps(to);
  for (std::size_t i = 0; i < to; ++i) {
    const double pos = (from > 1 && to > 1) ? double(i) * double(from - 1) / double(to - 1) : 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    lo = std::min(lo, from - 1);
    const std::size_t hi = std::min(lo + 1, from - 1);
    taps[i] = Tap{lo, hi, pos - double(lo)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, Grid from, Grid to) {
  if (x.rank() != 3 || x.dim(1) != from.cells()) {
    throw DimensionError("upsample_bilinear: tokens " + to_string(x.shape()) + " do not match grid " +
                         std::to_string(from.h) + "x" + std::to_string(from.w));
  }
  const std::size_t batch = x.dim(0), ch = x.dim(2);
  const auto ty = bilinear_taps(from.h, to.h);
  const auto tx = bilinear_taps(from.w, to.w);
  Tensor out = make_tensor({batch, to.cells(), ch}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.values<T>();
    auto o = out.mutable_values<T>();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* base = xv.data() + b * from.cells() * ch;
      for (std::size_t y = 0; y < to.h; ++y)
        for (std::size_t xx = 0; xx < to.w; ++xx) {
          const T wy = T(ty[y].frac), wx = T(tx[xx].frac);
          const T* a = base + (ty[y].lo * from.w + tx[xx].lo) * ch;
          const T* bb = base + (ty[y].lo * from.w + tx[xx].hi) * ch;
          const T* c = base + (ty[y].hi * from.w + tx[xx].lo) * ch;
          const T* d = base + (ty[y].hi * from.w + tx[xx].hi) * ch;
          T* dst = o.data() + (b * to.cells() + y * to.w + xx) * ch;
          for (std::size_t j = 0; j < ch; ++j) {
            const T top = a[j] + wx * (bb[j] - a[j]);
            const T bot = c[j] + wx * (d[j] - c[j]);
            dst[j] = top + wy * (bot - top);
          }
        }
    }
  });
  finish(out, "upsample_bilinear");
  if (needs_grad({&x})) {
    record(out, "upsample_bilinear", {x}, [ty, tx, from, to, batch, ch](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        auto& g = std::get<std::vector<T>>(*self.grad);
        auto gx = grad_slot<T>(in[0]);
        for (std::size_t b = 0; b < batch; ++b) {
          T* base = gx.data() + b * from.cells() * ch;
          for (std::size_t y = 0; y < to.h; ++y)
            for (std::size_t xx = 0; xx < to.w; ++xx) {
              const T wy = T(ty[y].frac), wx = T(tx[xx].frac);
              const T* src = g.data() + (b * to.cells() + y * to.w + xx) * ch;
              kernels::axpy<T>(ch, (T(1) - wy) * (T(1) - wx), src, base + (ty[y].lo * from.w + tx[xx].lo) * ch);
              kernels::axpy<T>(ch, (T(1) - wy) * wx, src, base + (ty[y].lo * from.w + tx[xx].hi) * ch);
              kernels::axpy<T>(ch, wy * (T(1) - wx), src, base + (ty[y].hi * from.w + tx[xx].lo) * ch);
              kernels::axpy<T>(ch, wy * wx, src, base + (ty[y].hi * from.w + tx[xx].hi) * ch);
            }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

constexpr double kProbClamp = 1e-7;

void check_target(const Tensor& logits, const Tensor& target, const char* op) {
  if (logits.shape() != target.shape()) shape_error(op, logits, target);
  require_same_dtype(logits, target, op);
  for (double v : target.to_doubles()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(op) + ": target is not binary");
  }
}

// Per-pixel weights for BCE; all ones unless balanced.
std::vector<double> bce_weights(const Tensor& target, bool balanced) {
  const auto g = target.to_doubles();
  std::vector<double> w(g.size(), 1.0);
  if (!balanced) return w;
  double pos = 0;
  for (double v : g) pos += v;
  const double n = double(g.size());
  const double wpos = (n - pos) / n, wneg = pos / n;
  for (std::size_t i = 0; i < g.size(); ++i) w[i] = g[i] == 1.0 ? wpos : wneg;
  return w;
}

Tensor weighted_bce(const Tensor& logits, const Tensor& target, bool balanced, const char* op) {
  check_target(logits, target, op);
  const auto z = logits.to_doubles();
  const auto g = target.to_doubles();
  const auto w = bce_weights(target, balanced);
  const double n = double(z.size());
  double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = std::clamp(sigmoid_scalar(z[i]), kProbClamp, 1.0 - kProbClamp);
    total += -w[i] * (g[i] * std::log(p) + (1.0 - g[i]) * std::log(1.0 - p));
  }
  Tensor out = Tensor::from_values({1}, {total / n}, logits.dtype());
  finish(out, op);
  if (needs_grad({&logits})) {
    record(out, op, {logits, target}, [w, n](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const double go = std::get<std::vector<T>>(*self.grad)[0];
        const auto z = in[0].values<T>();
        const auto g = in[1].values<T>();
        auto gz = grad_slot<T>(in[0]);
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double p = sigmoid_scalar(double(z[i]));
          if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
          gz[i] += static_cast<T>(go * w[i] * (p - double(g[i])) / n);
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor bce_loss(const Tensor& logits, const Tensor& target) {
  return weighted_bce(logits, target, false, "bce_loss");
}

Tensor balanced_bce_loss(const Tensor& logits, const Tensor& target) {
  return weighted_bce(logits, target, true, "balanced_bce_loss");
}

Tensor iou_loss(const Tensor& logits, const Tensor& target) {
  check_target(logits, target, "iou_loss");
  const std::size_t batch = logits.rank() > 1 ? logits.dim(0) : 1;
  const std::size_t per = logits.numel() / batch;
  const auto z = logits.to_doubles();
  const auto g = target.to_doubles();
  std::vector<double> inter(batch, 0.0), uni(batch, 0.0);
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double i_sum = 0, p_sum = 0, g_sum = 0;
    for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
      const double p = sigmoid_scalar(z[j]);
      i_sum += p * g[j];
      p_sum += p;
      g_sum += g[j];
    }
    inter[b] = i_sum;
    uni[b] = p_sum + g_sum - i_sum;
    total += 1.0 - (i_sum + 1.0) / (uni[b] + 1.0);
  }
  Tensor out = Tensor::from_values({1}, {total / double(batch)}, logits.dtype());
  finish(out, "iou_loss");
  if (needs_grad({&logits})) {
    record(out, "iou_loss", {logits, target}, [inter, uni, batch, per](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const double go = std::get<std::vector<T>>(*self.grad)[0];
        const auto z = in[0].values<T>();
        const auto g = in[1].values<T>();
        auto gz = grad_slot<T>(in[0]);
        for (std::size_t b = 0; b < batch; ++b) {
          const double u1 = uni[b] + 1.0, i1 = inter[b] + 1.0;
          for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
            const double p = sigmoid_scalar(double(z[j]));
            const double gj = double(g[j]);
            const double dp = -(gj * u1 - i1 * (1.0 - gj)) / (u1 * u1);
            gz[j] += static_cast<T>(go * dp * p * (1.0 - p) / double(batch));
          }
        }
      });
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) shape_error("mse_loss", prediction, target);
  require_same_dtype(prediction, target, "mse_loss");
  const auto a = prediction.to_doubles();
  const auto b = target.to_doubles();
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  const double n = double(a.size());
  Tensor out = Tensor::from_values({1}, {total / n}, prediction.dtype());
  finish(out, "mse_loss");
  if (needs_grad({&prediction, &target})) {
    record(out, "mse_loss", {prediction, target}, [n](TensorImpl& self, const std::vector<Tensor>& in) {
      dispatch(self.dtype, [&]<class T>() {
        const T go = std::get<std::vector<T>>(*self.grad)[0];
        const auto a = in[0].values<T>();
        const auto b = in[1].values<T>();
        const T f = T(2) * go / T(n);
        if (in[0].requires_grad()) {
          auto ga = grad_slot<T>(in[0]);
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += f * (a[i] - b[i]);
        }
        if (in[1].requires_grad()) {
          auto gb = grad_slot<T>(in[1]);
          for (std::size_t i = 0; i < a.size(); ++i) gb[i] -= f * (a[i] - b[i]);
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor to_channels_last(const Tensor& image) {
  if (image.rank() != 3 && image.rank() != 4) {
    throw DimensionError("to_channels_last: expected [C, H, W] or [B, C, H, W], got " + to_string(image.shape()));
  }
  const std::size_t off = image.rank() - 3;
  const std::size_t batch = off ? image.dim(0) : 1;
  const std::size_t c = image.dim(off), h = image.dim(off + 1), w = image.dim(off + 2);
  Tensor out = make_tensor({batch, h * w, c}, image.dtype());
  dispatch(image.dtype(), [&]<class T>() {
    auto src = image.values<T>();
    auto dst = out.mutable_values<T>();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p)
          dst[(b * h * w + p) * c + ch] = src[(b * c + ch) * h * w + p];
  });
  return out;
}

Tensor flip_horizontal(const Tensor& x) {
  const std::size_t w = x.shape().back(), rows = x.numel() / w;
  Tensor out = make_tensor(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto src = x.values<T>();
    auto dst = out.mutable_values<T>();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dst[r * w + j] = src[r * w + (w - 1 - j)];
  });
  return out;
}

}  // namespace evp
