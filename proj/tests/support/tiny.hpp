#pragma once

// Small model and dataset shared by the training-level tests.

#include "evp/model.hpp"
#include "evp/synth.hpp"

namespace tiny {

inline evp::ModelConfig model(evp::PromptVariant variant = evp::PromptVariant::none) {
  evp::ModelConfig mc;
  mc.backbone.kind = evp::BackboneKind::plain;
  mc.backbone.image_h = mc.backbone.image_w = 32;
  mc.backbone.stages = {{8, 16, 2, 2}};
  mc.decoder = {16, 1, 2};
  mc.prompt.variant = variant;
  mc.prompt.r = 4;
  return mc;
}

inline evp::TrainConfig train(evp::Strategy s, std::size_t steps = 4) {
  evp::TrainConfig tc;
  tc.strategy = s;
  tc.steps = steps;
  tc.epochs = 100;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  tc.vpt_tokens = 3;
  return tc;
}

inline evp::Dataset data(std::uint64_t seed = 3) {
  return evp::synth_dataset(evp::Task::texture, {6, 2, 2}, 32, seed);
}

}  // namespace tiny
