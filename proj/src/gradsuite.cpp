#include "evp/gradsuite.hpp"

#include <cmath>

#include "evp/backbone.hpp"
#include "evp/decoder.hpp"
#include "evp/fft.hpp"
#include "evp/ops.hpp"
#include "evp/params.hpp"
#include "evp/prompting.hpp"
#include "evp/rng.hpp"

namespace evp {

namespace {


using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), v, DType::f64);
}

Tensor binary(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.coin() ? 1.0 : 0.0;
  return Tensor::from_values(std::move(shape), v, DType::f64);
}

// Overwrites every parameter with nonzero values so zero-initialized
// projections do not hide gradient paths: matrices uniform in ±2/√fan_in,
// norm gains in [0.7, 1.3], everything else in ±0.3.
void randomize(ParameterStore& store, Rng& rng) {
  for (const auto& spec : store.specs()) {
    Tensor t = store.get(spec.name);
    const bool matrix = spec.shape.size() == 2;
    const bool gain = spec.init == Init::ones;
    const double a = matrix ? 2.0 / std::sqrt(double(spec.shape[0])) : 0.3;
    for (double& x : t.mutable_values<double>()) x = gain ? rng.uniform(0.7, 1.3) : rng.uniform(-a, a);
  }
}

// With real input the imaginary plane is conjugate-odd, and the real output
// sees the imaginary gate only through σ(u + b) + σ(−u + b). At b = 0 that sum
// is flat in u, leaving imag.w with gradients near the finite-difference
// floor, so the fixture keeps the gate bias away from zero.
void offset_gate_bias(ParameterStore& store, Rng& rng) {
  Tensor b = store.get("imag.b");
  for (double& x : b.mutable_values<double>()) x = (rng.coin() ? 1 : -1) * rng.uniform(0.7, 1.3);
}

std::vector<GradCheckInput> with_params(std::vector<GradCheckInput> inputs, const ParameterStore& store) {
  for (const auto& s : store.specs()) inputs.push_back({s.name, store.get(s.name)});
  return inputs;
}

GradCase unary(std::string name, Shape shape, std::function<Tensor(const Tensor&)> op) {
  return {name, [=] {
            Rng rng = Rng::derive(0x6a11, name);
            return grad_check([&](const std::vector<Tensor>& a) { return op(a[0]); }, {{"x", random(rng, shape)}});
          }};
}

GradCase binary_op(std::string name, Shape sa, Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
  return {name, [=] {
            Rng rng = Rng::derive(0x6a11, name);
            return grad_check([&](const std::vector<Tensor>& a) { return op(a[0], a[1]); },
                              {{"a", random(rng, sa)}, {"b", random(rng, sb)}});
          }};
}

GradCase block_case() {
  return {"transformer_block", [] {
            Rng rng = Rng::derive(0x6a11, "block");
            ParamSpecs specs;
            Block::specs(specs, "blk", 4);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            const Block block = Block::bind(store, "blk", 2);
            auto inputs = with_params({{"x", random(rng, {1, 3, 4})}, {"prompt", random(rng, {1, 3, 4})}}, store);
            return grad_check([&](const std::vector<Tensor>& a) { return block.forward(a[0], a[1]); }, inputs);
          }};
}

GradCase block_tokens_case() {
  return {"transformer_block_with_tokens", [] {
            Rng rng = Rng::derive(0x6a11, "block-tokens");
            ParamSpecs specs;
            Block::specs(specs, "blk", 4);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            const Block block = Block::bind(store, "blk", 2);
            auto inputs = with_params({{"x", random(rng, {1, 3, 4})}, {"tokens", random(rng, {2, 4})}}, store);
            return grad_check([&](const std::vector<Tensor>& a) { return block.forward(a[0], {}, a[1]); }, inputs);
          }};
}

GradCase adaptor_v1_case() {
  return {"adaptor_v1", [] {
            Rng rng = Rng::derive(0x6a11, "adaptor_v1");
            ParamSpecs specs;
            add_linear(specs, "tune", 6, 6);
            add_linear(specs, "up", 6, 12);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            const Linear tune = Linear::bind(store, "tune"), up = Linear::bind(store, "up");
            auto inputs = with_params({{"f_pe", random(rng, {2, 4, 6})}, {"f_hfc", random(rng, {2, 4, 6})}}, store);
            return grad_check([&](const std::vector<Tensor>& a) { return adaptor_v1(a[0], a[1], tune, up); }, inputs);
          }};
}

GradCase fourier_mlp_case() {
  return {"fourier_mlp", [] {
            Rng rng = Rng::derive(0x6a11, "fourier_mlp");
            ParamSpecs specs;
            add_linear(specs, "real", 2, 2);
            add_linear(specs, "imag", 2, 2);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            offset_gate_bias(store, rng);
            const Linear re = Linear::bind(store, "real"), im = Linear::bind(store, "imag");
            // 3×3: a non-power-of-two grid on which every bin but DC is complex.
            auto inputs = with_params({{"x", random(rng, {2, 9, 2})}}, store);
            return grad_check([&](const std::vector<Tensor>& a) { return fourier_mlp(a[0], Grid{3, 3}, re, im); },
                              inputs);
          }};
}

GradCase freq_adaptor_case(FourierMode mode) {
  const std::string name = std::string("freq_enhanced_adaptor_") + fourier_mode_name(mode);
  return {name, [=] {
            Rng rng = Rng::derive(0x6a11, name);
            // Narrow widths keep the coordinate count, and with it the odds of
            // a near-zero gradient coordinate, small.
            const std::size_t d = 2, w = 1, f = mode == FourierMode::reduced ? w : d;
            ParamSpecs specs;
            add_linear(specs, "down", d, w);
            add_linear(specs, "real", f, f);
            add_linear(specs, "imag", f, f);
            add_linear(specs, "pe", w, w);
            add_linear(specs, "freq", w, w);
            add_linear(specs, "up", w, d);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            offset_gate_bias(store, rng);
            FreqAdaptor fa;
            fa.down = Linear::bind(store, "down");
            fa.real = Linear::bind(store, "real");
            fa.imag = Linear::bind(store, "imag");
            fa.pe = Linear::bind(store, "pe");
            fa.freq = Linear::bind(store, "freq");
            fa.up = Linear::bind(store, "up");
            fa.mode = mode;
            auto inputs = with_params({{"x", random(rng, {1, 9, d})}}, store);
            return grad_check([&](const std::vector<Tensor>& a) { return fa(a[0], Grid{3, 3}); }, inputs);
          }};
}

GradCase decoder_case() {
  return {"decoder", [] {
            Rng rng = Rng::derive(0x6a11, "decoder");
            BackboneConfig bc;
            bc.kind = BackboneKind::hierarchical;
            bc.image_h = bc.image_w = 8;
            bc.stages = {{2, 4, 1, 2}, {2, 6, 1, 2}};
            DecoderConfig dc{4, 1, 2};
            ParamSpecs specs;
            Decoder::specs(dc, bc, specs);
            ParameterStore store(specs, 1, DType::f64);
            randomize(store, rng);
            const Decoder dec(dc, bc, store);
            auto inputs = with_params({{"stage0", random(rng, {1, 16, 4})}, {"stage1", random(rng, {1, 4, 6})}}, store);
            return grad_check(
                [&](const std::vector<Tensor>& a) {
                  return dec.forward({{a[0], Grid{4, 4}}, {a[1], Grid{2, 2}}});
                },
                inputs);
          }};
}

GradCase loss_case(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> loss) {
  return {name, [=] {
            Rng rng = Rng::derive(0x6a11, name);
            const Tensor target = binary(rng, {2, 4, 4});
            return grad_check([&](const std::vector<Tensor>& a) { return loss(a[0], target); },
                              {{"logits", random(rng, {2, 4, 4}, -2.0, 2.0)}});
          }};
}

}  // namespace

std::vector<GradCase> gradient_suite() {
  std::vector<GradCase> cases;
  cases.push_back(binary_op("matmul", {2, 3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
  cases.push_back({"linear", [] {
                     Rng rng = Rng::derive(0x6a11, "linear");
                     return grad_check([](const std::vector<Tensor>& a) { return linear(a[0], a[1], a[2]); },
                                       {{"x", random(rng, {3, 4})}, {"w", random(rng, {4, 2})}, {"b", random(rng, {2})}});
                   }});
  cases.push_back(binary_op("add", {2, 3, 4}, {3, 4}, [](auto& a, auto& b) { return add(a, b); }));
  cases.push_back(binary_op("sub", {2, 3, 4}, {4}, [](auto& a, auto& b) { return sub(a, b); }));
  cases.push_back(binary_op("mul", {2, 3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); }));
  cases.push_back(unary("scale", {3, 4}, [](auto& x) { return scale(x, -1.7); }));
  cases.push_back(unary("gelu", {3, 5}, [](auto& x) { return gelu(x); }));
  cases.push_back(unary("sigmoid", {3, 5}, [](auto& x) { return sigmoid(x); }));
  cases.push_back(unary("softmax", {3, 5}, [](auto& x) { return softmax(x); }));
  cases.push_back({"layernorm", [] {
                     Rng rng = Rng::derive(0x6a11, "layernorm");
                     return grad_check(
                         [](const std::vector<Tensor>& a) { return layernorm(a[0], a[1], a[2]); },
                         {{"x", random(rng, {3, 6})}, {"gamma", random(rng, {6}, 0.5, 1.5)}, {"beta", random(rng, {6})}});
                   }});
  cases.push_back(unary("reshape", {2, 6}, [](auto& x) { return reshape(x, {3, 4}); }));
  cases.push_back(binary_op("concat", {2, 3}, {2, 3}, [](auto& a, auto& b) { return concat({a, b}, 1); }));
  cases.push_back(unary("slice", {4, 3}, [](auto& x) { return slice(x, 0, 1, 3); }));
  cases.push_back(unary("mean", {3, 4}, [](auto& x) { return mean(x); }));
  cases.push_back(unary("sum", {3, 4}, [](auto& x) { return sum(x); }));
  cases.push_back({"attention", [] {
                     Rng rng = Rng::derive(0x6a11, "attention");
                     return grad_check([](const std::vector<Tensor>& a) { return attention(a[0], a[1], a[2]); },
                                       {{"q", random(rng, {2, 4, 3})}, {"k", random(rng, {2, 4, 3})}, {"v", random(rng, {2, 4, 3})}});
                   }});
  cases.push_back({"multi_head_attention", [] {
                     Rng rng = Rng::derive(0x6a11, "mha");
                     return grad_check(
                         [](const std::vector<Tensor>& a) { return multi_head_attention(a[0], a[1], a[2], 2); },
                         {{"q", random(rng, {2, 4, 6})}, {"k", random(rng, {2, 4, 6})}, {"v", random(rng, {2, 4, 6})}});
                   }});
  cases.push_back(unary("expand_batch", {3, 2}, [](auto& x) { return expand_batch(x, 3); }));
  cases.push_back(unary("patchify", {2, 16, 2}, [](auto& x) { return patchify(x, Grid{4, 4}, PatchSpec{3, 2, 1}); }));
  cases.push_back(unary("upsample_bilinear", {2, 6, 2}, [](auto& x) { return upsample_bilinear(x, Grid{2, 3}, Grid{5, 4}); }));
  cases.push_back(unary("fft2", {2, 3, 4}, [](auto& x) {
    const ComplexGrid z = fft2(x);
    return concat({z.real, z.imag}, 0);
  }));
  cases.push_back({"ifft2", [] {
                     Rng rng = Rng::derive(0x6a11, "ifft2");
                     // A conjugate-symmetric spectrum, so the residual check passes.
                     const ComplexGrid z = fft2(random(rng, {2, 4, 4}));
                     return grad_check([](const std::vector<Tensor>& a) { return ifft2(ComplexGrid{a[0], a[1]}); },
                                       {{"real", z.real.detach()}, {"imag", z.imag.detach()}});
                   }});
  cases.push_back(unary("fft2_packed", {2, 6, 3}, [](auto& x) { return fft2_packed(x, fft::Layout{2, 2, 3, 3}); }));
  cases.push_back(unary("ifft2_real_packed", {2, 2, 8, 3}, [](auto& x) { return ifft2_real_packed(x, fft::Layout{2, 2, 4, 3}); }));
  cases.push_back(block_case());
  cases.push_back(block_tokens_case());
  cases.push_back(adaptor_v1_case());
  cases.push_back(fourier_mlp_case());
  cases.push_back(freq_adaptor_case(FourierMode::reduced));
  cases.push_back(freq_adaptor_case(FourierMode::full));
  cases.push_back(decoder_case());
  cases.push_back(loss_case("bce_loss", [](auto& l, auto& t) { return bce_loss(l, t); }));
  cases.push_back(loss_case("balanced_bce_loss", [](auto& l, auto& t) { return balanced_bce_loss(l, t); }));
  cases.push_back(loss_case("iou_loss", [](auto& l, auto& t) { return iou_loss(l, t); }));
  cases.push_back(binary_op("mse_loss", {2, 3, 3}, {2, 3, 3}, [](auto& a, auto& b) { return mse_loss(a, b); }));
  return cases;
}

}  // namespace evp
