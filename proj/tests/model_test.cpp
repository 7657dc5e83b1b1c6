#include <cmath>

#include "doctest.h"
#include "evp/frequency.hpp"
#include "evp/io.hpp"
#include "evp/model.hpp"
#include "evp/training.hpp"
#include "support/tiny.hpp"

using namespace evp;

namespace {

bool bit_identical(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && checksum(a) == checksum(b); }

Tensor hfc_batch(const std::vector<Sample>& s, double tau) {
  std::vector<Tensor> h;
  for (const auto& x : s) h.push_back(high_frequency(x.image, tau));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : h) ptrs.push_back(&t);
  return stack_images(ptrs);
}

Tensor image_batch(const std::vector<Sample>& s) {
  std::vector<const Tensor*> ptrs;
  for (const auto& x : s) ptrs.push_back(&x.image);
  return stack_images(ptrs);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("backbone stage grids") {
  CHECK(BackboneConfig::desk_plain().grids() == std::vector<Grid>{{8, 8}});
  CHECK(BackboneConfig::desk_hierarchical().grids() == std::vector<Grid>{{8, 8}, {4, 4}});
  BackboneConfig bad = BackboneConfig::desk_plain();
  bad.image_h = 60;
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("zeroed attention output and second MLP layer make a block the identity") {
  ParamSpecs specs;
  Block::specs(specs, "b", 8);
  ParameterStore store(specs, 4, DType::f64);
  for (const char* n : {"b.attn.o.w", "b.attn.o.b", "b.mlp.fc2.w", "b.mlp.fc2.b"}) {
    Tensor t = store.get(n);
    for (double& v : t.mutable_values<double>()) v = 0;
  }
  const Block blk = Block::bind(store, "b", 2);
  std::vector<double> v(2 * 5 * 8);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(double(i));
  const Tensor x = Tensor::from_values({2, 5, 8}, v, DType::f64);
  CHECK(bit_identical(blk.forward(x), x));
}

TEST_CASE("a zero prompt leaves the block output unchanged") {
  ParamSpecs specs;
  Block::specs(specs, "b", 8);
  const ParameterStore store(specs, 4, DType::f64);
  const Block blk = Block::bind(store, "b", 2);
  std::vector<double> v(5 * 8);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(double(i));
  const Tensor x = Tensor::from_values({1, 5, 8}, v, DType::f64);
  CHECK(bit_identical(blk.forward(x, Tensor::zeros({1, 5, 8}, DType::f64)), blk.forward(x)));
}

TEST_CASE("token banks are removed after the block") {
  ParamSpecs specs;
  Block::specs(specs, "b", 8);
  const ParameterStore store(specs, 4, DType::f64);
  const Block blk = Block::bind(store, "b", 2);
  const Tensor x = Tensor::full({2, 5, 8}, 0.3, DType::f64);
  const Tensor bank = Tensor::full({3, 8}, -0.2, DType::f64);
  const Tensor y = blk.forward(x, {}, bank);
  CHECK(y.shape() == x.shape());
  CHECK_FALSE(bit_identical(y, blk.forward(x)));
}

TEST_CASE("safe init: prompted forward equals the frozen baseline bit for bit") {
  const Dataset ds = tiny::data();
  const auto batch = ds.split("train");
  const Tensor images = image_batch(batch);
  for (Strategy s : {Strategy::evp1, Strategy::evp2}) {
    CAPTURE(strategy_name(s));
    ModelConfig mc = model_for(tiny::model(), tiny::train(s));
    Segmenter m(mc, 5);
    const Tensor hfc = m.needs_hfc() ? hfc_batch(batch, mc.prompt.tau) : Tensor();
    CHECK(bit_identical(m.forward(images, hfc), m.forward_frozen_baseline(images)));
    // and a nonzero up-projection does change it
    for (const auto& spec : m.store().specs())
      if (spec.name.find(".up") != std::string::npos) {
        Tensor t = m.store().get(spec.name);
        for (float& v : t.mutable_values<float>()) v = 0.05f;
      }
    CHECK_FALSE(bit_identical(m.forward(images, hfc), m.forward_frozen_baseline(images)));
  }
}

TEST_CASE("run config JSON round trip and presets") {
  const RunConfig rc = load_run_config(EVP_CONFIG_DIR "/desk_plain.json");
  CHECK(rc.model.backbone.stages.at(0).dim == 64);
  CHECK(rc.model.backbone.total_blocks() == 6);
  const RunConfig back = parse_run_config(to_json(rc));
  CHECK(to_json(back) == to_json(rc));
  CHECK_THROWS_AS(parse_run_config(R"({"backbone": "nope"})"), std::invalid_argument);
  CHECK_THROWS(parse_run_config(R"({"prompt": {"tau": 3}})"));
}

TEST_CASE("model_for derives prompts and token banks from the strategy") {
  const TrainConfig tc = tiny::train(Strategy::vpt);
  CHECK(model_for(tiny::model(), tc).vpt_tokens == 3);
  CHECK(model_for(tiny::model(), tiny::train(Strategy::evp1)).prompt.variant == PromptVariant::v1);
  CHECK(model_for(tiny::model(PromptVariant::v2), tiny::train(Strategy::decoder)).prompt.variant ==
        PromptVariant::none);
}

}  // TEST_SUITE

TEST_SUITE("accounting") {

TEST_CASE("B4-shape prompt parameter counts") {
  ModelConfig mc;
  mc.backbone = BackboneConfig::b4();
  mc.prompt.variant = PromptVariant::v1;
  mc.prompt.r = 4;
  const std::size_t v1 = count_prefix(Segmenter::specs(mc), "prompt.");
  CHECK(v1 == 548384);
  CHECK(std::abs(double(v1) - 0.55e6) <= 0.10 * 0.55e6);
  mc.prompt.variant = PromptVariant::v2;
  mc.prompt.r = 16;
  mc.prompt.fourier_mode = FourierMode::reduced;
  const std::size_t v2 = count_prefix(Segmenter::specs(mc), "prompt.");
  CHECK(v2 == 534504);
  CHECK(std::abs(double(v2) - 0.53e6) <= 0.20 * 0.53e6);
}

TEST_CASE("v2 adaptor count by hand for one stage") {
  // per block: down d→c, real c→c, imag c→c, pe c→c, freq c→c, up c→d, all with bias
  ModelConfig mc = tiny::model(PromptVariant::v2);
  const std::size_t d = 16, c = 4, blocks = 2;
  const std::size_t per = (d * c + c) + 4 * (c * c + c) + (c * d + d);
  CHECK(count_prefix(Segmenter::specs(mc), "prompt.") == blocks * per);
}

}  // TEST_SUITE
