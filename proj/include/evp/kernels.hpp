#pragma once

// Dense inner-loop kernels. Every kernel has a scalar reference version and,
// on x86-64 hosts with AVX2+FMA, a vectorized version chosen at runtime.
// Setting EVP_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace evp::kernels {

enum class Isa { scalar, avx2 };

/// C[M×N] = (accumulate ? C : 0) + op(A)[M×K] · op(B)[K×N]
/// op(A)(i,k) = trans_a ? A[k*lda + i] : A[i*lda + k]
/// op(B)(k,j) = trans_b ? B[j*ldb + k] : B[k*ldb + j]
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  std::size_t lda = 0, ldb = 0, ldc = 0;
  bool accumulate = false;
};

template <class T>
struct Table {
  void (*gemm)(const GemmArgs&, const T* a, const T* b, T* c);
  /// y[i] += alpha * x[i]
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  /// sum_i x[i] * y[i]
  T (*dot)(std::size_t n, const T* x, const T* y);
};

template <class T>
const Table<T>& scalar_table();
template <class T>
const Table<T>& avx2_table();

/// True when the host supports the AVX2 table and it was compiled in.
bool avx2_available();

/// Active instruction set, fixed at first use.
Isa active_isa();
std::string_view isa_name(Isa isa);

template <class T>
const Table<T>& table(Isa isa);

template <class T>
inline const Table<T>& active() {
  return table<T>(active_isa());
}

template <class T>
inline void gemm(const GemmArgs& args, const T* a, const T* b, T* c) {
  active<T>().gemm(args, a, b, c);
}
template <class T>
inline void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active<T>().axpy(n, alpha, x, y);
}
template <class T>
inline T dot(std::size_t n, const T* x, const T* y) {
  return active<T>().dot(n, x, y);
}

}  // namespace evp::kernels
