#include <cmath>
#include <limits>

#include "doctest.h"
#include "evp/ops.hpp"
#include "evp/tensor.hpp"

using namespace evp;

TEST_SUITE("tensor") {

TEST_CASE("matmul shape rule and values") {
  const Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from_values({3, 2}, {1, 0, 0, 1, 1, 1});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.to_doubles() == std::vector<double>{4, 5, 10, 11});
  // leading dims of a are flattened into rows
  const Tensor a3 = Tensor::from_values({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(a3, b).shape() == Shape{2, 1, 2});
}

TEST_CASE("shape mismatches raise DimensionError naming the op") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  try {
    matmul(a, b);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 0), DimensionError);
  CHECK_THROWS_AS(slice(Tensor::zeros({2, 3}), 1, 2, 4), DimensionError);
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("trailing broadcast") {
  const Tensor x = Tensor::from_values({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor b = Tensor::from_values({2}, {10, 20});
  CHECK(add(x, b).to_doubles() == std::vector<double>{11, 22, 13, 24, 15, 26, 17, 28});
  const Tensor nb = Tensor::from_values({2, 2}, {1, 1, 2, 2});
  CHECK(mul(x, nb).to_doubles() == std::vector<double>{1, 2, 6, 8, 5, 6, 14, 16});
}

TEST_CASE("gelu and sigmoid reference values") {
  const Tensor x = Tensor::from_values({3}, {-1, 0, 2}, DType::f64);
  const auto g = gelu(x).to_doubles();
  CHECK(g[1] == 0.0);
  CHECK(g[2] == doctest::Approx(2 * 0.5 * (1 + std::erf(2 / std::sqrt(2.0)))).epsilon(1e-14));
  const auto s = sigmoid(x).to_doubles();
  CHECK(s[1] == 0.5);
  CHECK(s[0] == doctest::Approx(1 / (1 + std::exp(1.0))).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  const Tensor x = Tensor::from_values({2, 3}, {1000, 1001, 1002, -5, 0, 5}, DType::f64);
  const auto p = softmax(x).to_doubles();
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[3] + p[4] + p[5] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[2] > p[1]);
}

TEST_CASE("layernorm output is centred with unit population variance") {
  const Tensor x = Tensor::from_values({1, 4}, {1, 2, 3, 10}, DType::f64);
  const Tensor y = layernorm(x, Tensor::full({4}, 1.0, DType::f64), Tensor::zeros({4}, DType::f64), 0.0);
  double m = 0, v = 0;
  for (double a : y.to_doubles()) m += a;
  for (double a : y.to_doubles()) v += a * a;
  CHECK(m / 4 == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(v / 4 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward accumulates through shared inputs") {
  Tensor x = Tensor::from_values({2}, {3, -1}, DType::f64);
  x.set_requires_grad(true);
  // y = Σ x·x + x  →  dy/dx = 2x + 1
  const Tensor y = sum(add(mul(x, x), x));
  backward(y);
  CHECK(x.grad().to_doubles() == std::vector<double>{7, -1});
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Tensor x = Tensor::from_values({2}, {1, 2}, DType::f64);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(x, x);
    CHECK(y.is_leaf());
  }
  CHECK(grad_enabled());
  CHECK_FALSE(mul(x, x).is_leaf());
}

TEST_CASE("leaves without requires_grad never receive a gradient") {
  Tensor w = Tensor::from_values({2}, {1, 2}, DType::f64);
  const Tensor c = Tensor::from_values({2}, {5, 6}, DType::f64);
  w.set_requires_grad(true);
  backward(sum(mul(w, c)));
  CHECK(w.has_grad());
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("non-finite forward values raise NumericError") {
  const double inf = std::numeric_limits<double>::infinity();
  const Tensor x = Tensor::from_values({2}, {1, inf}, DType::f64);
  CHECK_THROWS_AS(scale(x, 2.0), NumericError);
  CHECK_THROWS_AS(check_finite(x, "test"), NumericError);
}

TEST_CASE("patchify windows are row-major with zero padding") {
  // 2×2 grid, 1 channel, kernel 2 stride 2 → one window holding the grid
  const Tensor x = Tensor::from_values({1, 4, 1}, {1, 2, 3, 4});
  CHECK(patchify(x, Grid{2, 2}, {2, 2, 0}).to_doubles() == std::vector<double>{1, 2, 3, 4});
  // kernel 3, stride 1, pad 1: the first window's top row and left column are padding
  const Tensor y = patchify(x, Grid{2, 2}, {3, 1, 1});
  CHECK(y.shape() == Shape{1, 4, 9});
  CHECK(slice(y, 1, 0, 1).to_doubles() == std::vector<double>{0, 0, 0, 0, 1, 2, 0, 3, 4});
  CHECK(patchify_grid(Grid{9, 9}, {3, 2, 1}) == Grid{5, 5});
  CHECK_THROWS_AS(patchify_grid(Grid{8, 8}, {3, 2, 1}), DimensionError);  // windows must tile exactly
}

TEST_CASE("bilinear upsampling reproduces constants and corners") {
  const Tensor c = Tensor::full({1, 6, 2}, 0.7, DType::f64);
  for (double v : upsample_bilinear(c, Grid{2, 3}, Grid{5, 4}).to_doubles()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  const Tensor x = Tensor::from_values({1, 4, 1}, {1, 2, 3, 4}, DType::f64);
  const auto up = upsample_bilinear(x, Grid{2, 2}, Grid{3, 3}).to_doubles();
  CHECK(up[0] == 1);
  CHECK(up[2] == 2);
  CHECK(up[6] == 3);
  CHECK(up[8] == 4);
  CHECK(up[4] == doctest::Approx(2.5));
}

TEST_CASE("losses at reference points") {
  const Tensor logits = Tensor::from_values({1, 2}, {0, 0}, DType::f64);
  const Tensor target = Tensor::from_values({1, 2}, {1, 0}, DType::f64);
  CHECK(bce_loss(logits, target).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // p = 0.5 everywhere: intersection 0.5, union 1.5 → 1 − 1.5/2.5
  CHECK(iou_loss(logits, target).item() == doctest::Approx(1 - 1.5 / 2.5).epsilon(1e-12));
  CHECK(mse_loss(target, target).item() == 0.0);
}

TEST_CASE("channel-last conversion and horizontal flip") {
  const Tensor img = Tensor::from_values({2, 1, 2}, {1, 2, 3, 4});
  CHECK(to_channels_last(img).shape() == Shape{1, 2, 2});
  CHECK(to_channels_last(img).to_doubles() == std::vector<double>{1, 3, 2, 4});
  CHECK(flip_horizontal(img).to_doubles() == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("dtype conversion and clone are deep") {
  const Tensor a = Tensor::from_values({2}, {1.5, 2.5}, DType::f64);
  Tensor b = a.clone();
  b.mutable_values<double>()[0] = 9;
  CHECK(a.at(0) == 1.5);
  CHECK(a.to(DType::f32).dtype() == DType::f32);
  CHECK(a.to(DType::f32).at(1) == 2.5);
}

}  // TEST_SUITE
