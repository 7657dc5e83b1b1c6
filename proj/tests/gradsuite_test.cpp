#include <cmath>

#include "doctest.h"
#include "evp/gradcheck.hpp"
#include "evp/gradsuite.hpp"
#include "evp/ops.hpp"

using namespace evp;

TEST_SUITE("gradients") {

TEST_CASE("every registered case is within 1e-6") {
  const auto cases = gradient_suite();
  CHECK(cases.size() >= 30);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const GradCheckResult r = c.run();
    CHECK(r.coordinates > 0);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("a wrong backward is caught") {
  // Forward x², backward deliberately 3x.
  auto bad_square = [](const Tensor& x) {
    Tensor out = mul(x.detach(), x.detach());
    if (needs_grad({&x})) {
      record(out, "bad_square", {x}, [](TensorImpl& o, const std::vector<Tensor>& in) {
        auto g = grad_slot<double>(in[0]);
        const auto go = std::get<std::vector<double>>(*o.grad);
        const auto xv = in[0].values<double>();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3 * xv[i] * go[i];
      });
    }
    return out;
  };
  const GradCheckResult r = grad_check([&](const std::vector<Tensor>& a) { return bad_square(a[0]); },
                                       {{"x", Tensor::from_values({3}, {0.5, -1.0, 2.0}, DType::f64)}});
  CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("kinks are reported instead of averaged") {
  Tensor x = Tensor::from_values({1}, {0.0}, DType::f64);
  auto abs_op = [](const Tensor& v) {
    Tensor out = Tensor::from_values({1}, {std::abs(v.at(0))}, DType::f64);
    if (needs_grad({&v})) {
      record(out, "abs", {v}, [](TensorImpl& o, const std::vector<Tensor>& in) {
        grad_slot<double>(in[0])[0] += (in[0].at(0) >= 0 ? 1.0 : -1.0) * std::get<std::vector<double>>(*o.grad)[0];
      });
    }
    return out;
  };
  CHECK_THROWS_AS(grad_check([&](const std::vector<Tensor>& a) { return abs_op(a[0]); }, {{"x", x}}),
                  NonDifferentiableError);
}

TEST_CASE("gelu derivative at zero is one half") {
  Tensor x = Tensor::from_values({1}, {0.0}, DType::f64);
  x.set_requires_grad(true);
  backward(sum(gelu(x)));
  CHECK(x.grad().at(0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("step size outside the allowed range is rejected") {
  auto f = [](const std::vector<Tensor>& a) { return scale(a[0], 2.0); };
  CHECK_THROWS_AS(grad_check(f, {{"x", Tensor::from_values({1}, {1.0}, DType::f64)}}, 1e-3), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(f, {{"x", Tensor::from_values({1}, {1.0}, DType::f32)}}), std::invalid_argument);
}

}  // TEST_SUITE
