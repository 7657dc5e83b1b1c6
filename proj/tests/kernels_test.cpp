#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "evp/kernels.hpp"
#include "evp/rng.hpp"

using namespace evp;
using namespace evp::kernels;

namespace {

template <class T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (T& x : v) x = T(rng.uniform(-1, 1));
  return v;
}

// Plain triple loop, accumulated in double.
template <class T>
void naive_gemm(const GemmArgs& g, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < g.m; ++i)
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = g.accumulate ? double(c[i * g.ldc + j]) : 0.0;
      for (std::size_t k = 0; k < g.k; ++k) {
        const T av = g.trans_a ? a[k * g.lda + i] : a[i * g.lda + k];
        const T bv = g.trans_b ? b[j * g.ldb + k] : b[k * g.ldb + j];
        s += double(av) * double(bv);
      }
      c[i * g.ldc + j] = T(s);
    }
}

template <class T>
void check_gemm(double tol) {
  Rng rng(11);
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool acc : {false, true})
        for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {8, 16, 8}, {5, 31, 2}}) {
          GemmArgs g{ta, tb, m, n, k, ta ? m : k, tb ? k : n, n, acc};
          const auto a = random_vec<T>(rng, m * k), b = random_vec<T>(rng, k * n), c0 = random_vec<T>(rng, m * n);
          std::vector<T> ref = c0, cs = c0, cv = c0;
          naive_gemm(g, a.data(), b.data(), ref.data());
          scalar_table<T>().gemm(g, a.data(), b.data(), cs.data());
          avx2_table<T>().gemm(g, a.data(), b.data(), cv.data());
          for (std::size_t i = 0; i < ref.size(); ++i) {
            REQUIRE(std::abs(double(cs[i]) - double(ref[i])) <= tol * (1 + std::abs(double(ref[i]))));
            REQUIRE(std::abs(double(cv[i]) - double(cs[i])) <= tol * (1 + std::abs(double(cs[i]))));
          }
        }
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("gemm: scalar and vector paths agree with a naive loop (f32)") { check_gemm<float>(1e-5); }
TEST_CASE("gemm: scalar and vector paths agree with a naive loop (f64)") { check_gemm<double>(1e-13); }

TEST_CASE("axpy and dot agree across paths, including ragged tails") {
  Rng rng(5);
  for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 9u, 31u, 64u, 101u}) {
    const auto x = random_vec<double>(rng, n), y0 = random_vec<double>(rng, n);
    auto ys = y0, yv = y0;
    scalar_table<double>().axpy(n, 0.75, x.data(), ys.data());
    avx2_table<double>().axpy(n, 0.75, x.data(), yv.data());
    double ref = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(ys[i] == doctest::Approx(y0[i] + 0.75 * x[i]).epsilon(1e-15));
      CHECK(yv[i] == doctest::Approx(ys[i]).epsilon(1e-15));
      ref += x[i] * y0[i];
    }
    CHECK(scalar_table<double>().dot(n, x.data(), y0.data()) == doctest::Approx(ref).epsilon(1e-13));
    CHECK(avx2_table<double>().dot(n, x.data(), y0.data()) == doctest::Approx(ref).epsilon(1e-13));

    const auto xf = random_vec<float>(rng, n), yf = random_vec<float>(rng, n);
    double reff = 0;
    for (std::size_t i = 0; i < n; ++i) reff += double(xf[i]) * double(yf[i]);
    CHECK(avx2_table<float>().dot(n, xf.data(), yf.data()) == doctest::Approx(reff).epsilon(1e-5));
  }
}

TEST_CASE("runtime selection") {
  const Isa isa = active_isa();
  CHECK((isa == Isa::scalar || avx2_available()));
  CHECK((isa_name(isa) == "scalar" || isa_name(isa) == "avx2"));
}

}  // TEST_SUITE
