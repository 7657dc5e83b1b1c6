#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "evp/compare.hpp"
#include "evp/pretrain.hpp"
#include "evp/training.hpp"
#include "support/tiny.hpp"

using namespace evp;

TEST_SUITE("training") {

TEST_CASE("AdamW drives a scalar quadratic to its minimum") {
  Tensor w = Tensor::from_values({1}, {0.0}, DType::f64);
  w.set_requires_grad(true);
  AdamW opt({w}, {false});
  const Tensor target = Tensor::from_values({1}, {3.0}, DType::f64);
  for (int t = 0; t < 500; ++t) {
    w.clear_grad();
    const Tensor d = sub(w, target);
    backward(sum(mul(d, d)));
    opt.step(0.05);
  }
  CHECK(std::abs(w.item() - 3.0) < 1e-2);
  CHECK(opt.steps() == 500);
}

TEST_CASE("AdamW first step and decoupled decay") {
  // First step moves each coordinate by lr·sign(g) (bias-corrected m/√v = ±1),
  // and decay shrinks flagged tensors by (1 − lr·λ) before that.
  Tensor a = Tensor::from_values({2}, {1.0, -2.0}, DType::f64);
  Tensor b = Tensor::from_values({2}, {1.0, -2.0}, DType::f64);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  AdamW opt({a, b}, {true, false}, {0.9, 0.999, 1e-8, 0.1});
  backward(sum(mul(add(a, b), Tensor::from_values({2}, {4.0, -0.5}, DType::f64))));
  opt.step(0.01);
  CHECK(a.at(0) == doctest::Approx(1.0 * (1 - 0.001) - 0.01).epsilon(1e-9));
  CHECK(a.at(1) == doctest::Approx(-2.0 * (1 - 0.001) + 0.01).epsilon(1e-9));
  CHECK(b.at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(b.at(1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
}

TEST_CASE("AdamW refuses non-finite gradients without touching parameters") {
  Tensor w = Tensor::from_values({2}, {1.0, 2.0}, DType::f64);
  w.set_requires_grad(true);
  AdamW opt({w}, {false});
  grad_slot<double>(w)[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(0.1), NumericError);
  CHECK(w.at(0) == 1.0);
  CHECK(w.at(1) == 2.0);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(2e-4, 0, 100) == 2e-4);
  CHECK(cosine_lr(2e-4, 50, 100) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(1.0, 25, 100) == doctest::Approx(0.5 * (1 + std::cos(std::numbers::pi / 4))).epsilon(1e-12));
  for (std::size_t t = 1; t < 100; ++t) CHECK(cosine_lr(1.0, t, 100) < cosine_lr(1.0, t - 1, 100));
  CHECK_THROWS(cosine_lr(1.0, 100, 100));
}

TEST_CASE("partitions follow the strategy table") {
  for (Strategy s : {Strategy::full, Strategy::decoder, Strategy::vpt, Strategy::evp1, Strategy::evp2}) {
    CAPTURE(strategy_name(s));
    const ParamSpecs specs = Segmenter::specs(model_for(tiny::model(), tiny::train(s)));
    const ParamPartition p = partition(s, specs);
    CHECK(p.frozen.size() + p.tunable.size() == specs.size());
    for (const auto& n : p.tunable) {
      const bool allowed = s == Strategy::full || starts_with(n, "decoder.") ||
                           (s == Strategy::vpt && starts_with(n, "vpt.")) ||
                           ((s == Strategy::evp1 || s == Strategy::evp2) && starts_with(n, "prompt."));
      CHECK(allowed);
    }
    for (const auto& n : p.frozen) CHECK(starts_with(n, "backbone."));
    const ParamCount c = count_params(specs, p);
    CHECK(c.total == count(specs));
    CHECK(c.tunable_fraction == doctest::Approx(double(c.tunable) / double(c.total)));
    if (s == Strategy::full) CHECK(c.tunable == c.total);
    else CHECK(c.tunable < c.total);
  }
}

TEST_CASE("frozen partition is untouched by training; full tuning changes it") {
  const Dataset ds = tiny::data();
  for (Strategy s : {Strategy::decoder, Strategy::vpt, Strategy::evp1, Strategy::evp2, Strategy::full}) {
    CAPTURE(strategy_name(s));
    Segmenter m(model_for(tiny::model(), tiny::train(s)), 9);
    const std::uint64_t before = m.store().checksum("backbone.");
    const std::uint64_t tunable_before = m.store().checksum("decoder.");
    const TrainResult r = train(m, ds.split("train"), ds.split("val"), tiny::train(s, 5));
    CHECK(r.steps == 5);
    CHECK(m.store().checksum("decoder.") != tunable_before);
    if (s == Strategy::full) CHECK(m.store().checksum("backbone.") != before);
    else CHECK(m.store().checksum("backbone.") == before);
  }
}

TEST_CASE("training is deterministic and logs every epoch") {
  const Dataset ds = tiny::data();
  TrainConfig tc = tiny::train(Strategy::evp2, 0);
  tc.epochs = 2;
  Segmenter a(model_for(tiny::model(), tc), 2), b(model_for(tiny::model(), tc), 2);
  std::vector<EpochRecord> seen;
  TrainOptions opt;
  opt.on_epoch = [&](const EpochRecord& r) { seen.push_back(r); };
  const TrainResult ra = train(a, ds.split("train"), ds.split("val"), tc, opt);
  const TrainResult rb = train(b, ds.split("train"), ds.split("val"), tc);
  CHECK(ra.history.size() == 2);
  CHECK(seen.size() == 2);
  CHECK(ra.steps == 2 * 3);  // 6 samples, batch 2
  CHECK(a.store().checksum() == b.store().checksum());
  CHECK(ra.history.back().loss == rb.history.back().loss);
  CHECK(to_json_line(ra.history[0]).find("\"epoch\"") != std::string::npos);
}

TEST_CASE("pretext loss falls over the first fifty steps") {
  const Dataset ds = synth_dataset(Task::shade, {16, 0, 0}, 32, 4);
  PretrainConfig pc;
  pc.steps = 50;
  pc.batch_size = 4;
  const PretrainResult r = pretrain(tiny::model().backbone, ds.split("train"), pc);
  REQUIRE(r.losses.size() == 50);
  const double early = std::accumulate(r.losses.begin(), r.losses.begin() + 10, 0.0) / 10;
  const double late = std::accumulate(r.losses.end() - 10, r.losses.end(), 0.0) / 10;
  CHECK(late < early);
  for (const auto& [name, t] : r.backbone) CHECK(starts_with(name, "backbone."));
}

TEST_CASE("compare isolates a failing row and ignores the thread count") {
  const Dataset ds = tiny::data();
  const PretrainResult pre = [&] {
    PretrainConfig pc;
    pc.steps = 2;
    pc.batch_size = 2;
    return pretrain(tiny::model().backbone, ds.split("train"), pc);
  }();
  CompareConfig cc;
  cc.model = tiny::model();
  cc.train = tiny::train(Strategy::decoder, 2);
  cc.rows = strategy_rows({Strategy::decoder, Strategy::evp2});
  cc.rows.push_back({"broken", Strategy::evp1, 7.0});  // τ outside [0, 1]
  cc.seeds = {1, 2};
  cc.threads = 1;
  const CompareReport one = compare(cc, pre.backbone, ds);
  REQUIRE(one.rows.size() == 3);
  CHECK(one.rows[0].ok());
  CHECK(one.rows[1].ok());
  CHECK_FALSE(one.rows[2].ok());
  CHECK(one.rows[2].runs[0].error.find("tau") != std::string::npos);
  CHECK(one.pretrained_checksum == checksum(pre.backbone));
  CHECK(one.rows[0].params.tunable < one.rows[1].params.tunable);

  cc.threads = 3;
  const CompareReport three = compare(cc, pre.backbone, ds);
  CHECK(report_json(one) == report_json(three));
  CHECK(format_table(one).find("broken") != std::string::npos);
}

TEST_CASE("τ rows are labelled by value") {
  const auto rows = tau_rows({0.1, 0.25});
  CHECK(rows[1].label == "tau=0.25");
  CHECK(rows[1].strategy == Strategy::evp1);
  CHECK(*rows[1].tau == 0.25);
}

}  // TEST_SUITE
