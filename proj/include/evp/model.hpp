#pragma once

// Backbone + prompts + token banks + decoder, and the JSON run configuration.
//
// Config document:
//   {
//     "backbone": {"kind": "plain", "image": [64, 64], "channels": 3, "pos_embed": true,
//                  "stages": [{"patch": 8, "dim": 64, "blocks": 6, "heads": 4}]},
//     "decoder":  {"inner": 32, "blocks": 4, "heads": 2},
//     "prompt":   {"variant": "v2", "r": 16, "tau": 0.25, "fourier_mode": "reduced-dim",
//                  "stages": [true]},
//     "train":    {"strategy": "evp2", "lr": 2e-4, "epochs": 10, "steps": 0, "batch_size": 4,
//                  "seed": 1, "loss": "bce_plus_iou", "vpt_tokens": 50}
//   }
// "backbone" may also be a preset string: "plain", "hierarchical" or "b4".
// Missing fields take the defaults shown.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evp/backbone.hpp"
#include "evp/decoder.hpp"
#include "evp/prompting.hpp"

namespace evp {

enum class Strategy { full, decoder, vpt, evp1, evp2 };
enum class LossKind { bce, balanced_bce, iou, bce_plus_iou };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
std::string loss_name(LossKind k);
LossKind parse_loss(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::evp2;
  double lr = 2e-4;
  std::size_t epochs = 10;
  std::size_t steps = 0;  // when nonzero, caps the run at this many optimizer steps
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::bce_plus_iou;
  std::size_t vpt_tokens = 50;
};

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::desk_plain();
  DecoderConfig decoder;
  PromptConfig prompt;
  std::size_t vpt_tokens = 0;  // per-block token bank size; 0 = none
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

/// Model config with the prompt variant and token banks implied by `strategy`
/// (evp1 → v1, evp2 → v2, vpt → banks; other strategies drop both).
ModelConfig model_for(const ModelConfig& base, const TrainConfig& train);

class Segmenter {
 public:
  Segmenter(ModelConfig config, std::uint64_t seed, DType dtype = DType::f32);

  static ParamSpecs specs(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const Backbone& backbone() const { return backbone_; }
  const Prompter& prompter() const { return prompter_; }
  const Decoder& decoder() const { return decoder_; }
  bool needs_hfc() const { return config_.prompt.variant == PromptVariant::v1; }

  /// Backbone features for images [B, C, H, W]; `hfc_images` (same shape) is
  /// needed only for v1 prompts.
  std::vector<StageOutput> features(const Tensor& images, const Tensor& hfc_images = {}) const;
  /// Logits [B, H, W].
  Tensor forward(const Tensor& images, const Tensor& hfc_images = {}) const;
  /// Backbone with no prompts and no token banks.
  Tensor forward_frozen_baseline(const Tensor& images) const;

  std::vector<Tensor> vpt_banks() const { return vpt_; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  Backbone backbone_;
  Prompter prompter_;
  Decoder decoder_;
  std::vector<Tensor> vpt_;
};

}  // namespace evp
