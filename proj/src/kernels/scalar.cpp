#include "evp/kernels.hpp"

namespace evp::kernels {
namespace {

template <class T>
void gemm_ref(const GemmArgs& g, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < g.m; ++i) {
    T* crow = c + i * g.ldc;
    if (!g.accumulate) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < g.k; ++p) {
      const T aval = g.trans_a ? a[p * g.lda + i] : a[i * g.lda + p];
      if (g.trans_b) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aval * b[j * g.ldb + p];
      } else {
        const T* brow = b + p * g.ldb;
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += aval * brow[j];
      }
    }
  }
}

template <class T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot_ref(std::size_t n, const T* x, const T* y) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

template <>
const Table<float>& scalar_table<float>() {
  static const Table<float> t{gemm_ref<float>, axpy_ref<float>, dot_ref<float>};
  return t;
}

template <>
const Table<double>& scalar_table<double>() {
  static const Table<double> t{gemm_ref<double>, axpy_ref<double>, dot_ref<double>};
  return t;
}

}  // namespace evp::kernels
