#include <vector>

#include "evp/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define EVP_HAVE_AVX2_PATH 1
#define EVP_AVX2 __attribute__((target("avx2,fma")))
#endif

namespace evp::kernels {

#ifdef EVP_HAVE_AVX2_PATH
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t lanes = 8;
  EVP_AVX2 static V zero() { return _mm256_setzero_ps(); }
  EVP_AVX2 static V load(const T* p) { return _mm256_loadu_ps(p); }
  EVP_AVX2 static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  EVP_AVX2 static V set1(T x) { return _mm256_set1_ps(x); }
  EVP_AVX2 static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  EVP_AVX2 static V add(V a, V b) { return _mm256_add_ps(a, b); }
  EVP_AVX2 static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, lo);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t lanes = 4;
  EVP_AVX2 static V zero() { return _mm256_setzero_pd(); }
  EVP_AVX2 static V load(const T* p) { return _mm256_loadu_pd(p); }
  EVP_AVX2 static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  EVP_AVX2 static V set1(T x) { return _mm256_set1_pd(x); }
  EVP_AVX2 static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  EVP_AVX2 static V add(V a, V b) { return _mm256_add_pd(a, b); }
  EVP_AVX2 static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
  }
};

// R rows by two vectors of columns, over packed A (m×k, row-major) and
// packed B (k×n, row-major).
template <class S, int R>
EVP_AVX2 void tile_2v(std::size_t k, std::size_t n, const typename S::T* ap, const typename S::T* bp,
                      typename S::T* c, std::size_t ldc, bool accumulate) {
  using V = typename S::V;
  V acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) acc0[r] = acc1[r] = S::zero();
  for (std::size_t p = 0; p < k; ++p) {
    const V b0 = S::load(bp + p * n);
    const V b1 = S::load(bp + p * n + S::lanes);
    for (int r = 0; r < R; ++r) {
      const V a = S::set1(ap[r * k + p]);
      acc0[r] = S::fma(a, b0, acc0[r]);
      acc1[r] = S::fma(a, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    typename S::T* crow = c + r * ldc;
    if (accumulate) {
      acc0[r] = S::add(acc0[r], S::load(crow));
      acc1[r] = S::add(acc1[r], S::load(crow + S::lanes));
    }
    S::store(crow, acc0[r]);
    S::store(crow + S::lanes, acc1[r]);
  }
}

template <class S, int R>
EVP_AVX2 void tile_1v(std::size_t k, std::size_t n, const typename S::T* ap, const typename S::T* bp,
                      typename S::T* c, std::size_t ldc, bool accumulate) {
  using V = typename S::V;
  V acc[R];
  for (int r = 0; r < R; ++r) acc[r] = S::zero();
  for (std::size_t p = 0; p < k; ++p) {
    const V b0 = S::load(bp + p * n);
    for (int r = 0; r < R; ++r) acc[r] = S::fma(S::set1(ap[r * k + p]), b0, acc[r]);
  }
  for (int r = 0; r < R; ++r) {
    typename S::T* crow = c + r * ldc;
    if (accumulate) acc[r] = S::add(acc[r], S::load(crow));
    S::store(crow, acc[r]);
  }
}

template <class S, int R>
EVP_AVX2 void row_block(std::size_t k, std::size_t n, const typename S::T* ap,
                        const typename S::T* bp, typename S::T* c, std::size_t ldc,
                        bool accumulate) {
  using T = typename S::T;
  constexpr std::size_t L = S::lanes;
  std::size_t j = 0;
  for (; j + 2 * L <= n; j += 2 * L) tile_2v<S, R>(k, n, ap, bp + j, c + j, ldc, accumulate);
  for (; j + L <= n; j += L) tile_1v<S, R>(k, n, ap, bp + j, c + j, ldc, accumulate);
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += ap[r * k + p] * bp[p * n + j];
      T& dst = c[r * ldc + j];
      dst = accumulate ? dst + s : s;
    }
  }
}

template <class S>
EVP_AVX2 void gemm_avx2(const GemmArgs& g, const typename S::T* a, const typename S::T* b,
                        typename S::T* c) {
  using T = typename S::T;
  if (g.m == 0 || g.n == 0) return;
  if (g.k == 0) {
    if (!g.accumulate) {
      for (std::size_t i = 0; i < g.m; ++i)
        for (std::size_t j = 0; j < g.n; ++j) c[i * g.ldc + j] = T(0);
    }
    return;
  }
  thread_local std::vector<T> apack, bpack;
  const T* ap = a;
  if (g.trans_a || g.lda != g.k) {
    apack.resize(g.m * g.k);
    for (std::size_t i = 0; i < g.m; ++i)
      for (std::size_t p = 0; p < g.k; ++p)
        apack[i * g.k + p] = g.trans_a ? a[p * g.lda + i] : a[i * g.lda + p];
    ap = apack.data();
  }
  const T* bp = b;
  if (g.trans_b || g.ldb != g.n) {
    bpack.resize(g.k * g.n);
    for (std::size_t p = 0; p < g.k; ++p)
      for (std::size_t j = 0; j < g.n; ++j)
        bpack[p * g.n + j] = g.trans_b ? b[j * g.ldb + p] : b[p * g.ldb + j];
    bp = bpack.data();
  }
  std::size_t i = 0;
  for (; i + 4 <= g.m; i += 4)
    row_block<S, 4>(g.k, g.n, ap + i * g.k, bp, c + i * g.ldc, g.ldc, g.accumulate);
  for (; i < g.m; ++i)
    row_block<S, 1>(g.k, g.n, ap + i * g.k, bp, c + i * g.ldc, g.ldc, g.accumulate);
}

template <class S>
EVP_AVX2 void axpy_avx2(std::size_t n, typename S::T alpha, const typename S::T* x,
                        typename S::T* y) {
  const auto va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + S::lanes <= n; i += S::lanes) S::store(y + i, S::fma(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class S>
EVP_AVX2 typename S::T dot_avx2(std::size_t n, const typename S::T* x, const typename S::T* y) {
  auto acc0 = S::zero();
  auto acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * S::lanes <= n; i += 2 * S::lanes) {
    acc0 = S::fma(S::load(x + i), S::load(y + i), acc0);
    acc1 = S::fma(S::load(x + i + S::lanes), S::load(y + i + S::lanes), acc1);
  }
  for (; i + S::lanes <= n; i += S::lanes) acc0 = S::fma(S::load(x + i), S::load(y + i), acc0);
  typename S::T s = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

template <>
const Table<float>& avx2_table<float>() {
  static const Table<float> t{gemm_avx2<F32>, axpy_avx2<F32>, dot_avx2<F32>};
  return t;
}

template <>
const Table<double>& avx2_table<double>() {
  static const Table<double> t{gemm_avx2<F64>, axpy_avx2<F64>, dot_avx2<F64>};
  return t;
}

#else

template <>
const Table<float>& avx2_table<float>() {
  return scalar_table<float>();
}

template <>
const Table<double>& avx2_table<double>() {
  return scalar_table<double>();
}

#endif

}  // namespace evp::kernels
