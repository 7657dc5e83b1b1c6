#pragma once

// Vision transformer feature extractor, either a single-stage plain ViT or a
// multi-stage hierarchical encoder. Tokens are channel-last [B, h·w, d].
//
// Parameter names:
//   backbone.stage{s}.embed.{w,b}       patch embedding (stage 0: image patches,
//                                       later stages: 2×2 merges of the previous stage)
//   backbone.stage0.pos                 learned positional embedding (plain only)
//   backbone.stage{s}.block{i}.*        transformer blocks
//   backbone.stage{s}.norm.{g,b}        per-stage output norm

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "evp/ops.hpp"
#include "evp/params.hpp"

namespace evp {

struct StageConfig {
  std::size_t patch = 2;  // stride of this stage's embedding relative to its input
  std::size_t dim = 16;
  std::size_t blocks = 1;
  std::size_t heads = 1;
};

enum class BackboneKind { plain, hierarchical };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::plain;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t in_channels = 3;
  std::vector<StageConfig> stages;
  bool pos_embed = true;

  static BackboneConfig desk_plain();
  static BackboneConfig desk_hierarchical();
  /// Real B4 stage shape (blocks 3/8/27/3, dims 64/128/320/512), for parameter accounting.
  static BackboneConfig b4(std::size_t image = 512);

  std::size_t total_blocks() const;
  /// Token grid of each stage.
  std::vector<Grid> grids() const;
  /// Throws DimensionError when a stage grid is not integral, or on an
  /// inconsistent configuration.
  void validate() const;
};

std::string kind_name(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& name);

/// Pre-norm transformer block weights: LN → MHA → residual, LN → MLP(4d, GELU) → residual.
struct Block {
  Tensor ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  std::size_t heads = 1;

  static void specs(ParamSpecs& out, const std::string& prefix, std::size_t dim, std::size_t mlp_ratio = 4);
  static Block bind(const ParameterStore& store, const std::string& prefix, std::size_t heads);

  /// x ← x + prompt; x ← x + MHA(LN(x)); x ← x + MLP(LN(x)). With a token bank
  /// [T, d], the bank is prepended to the sequence for this block and removed
  /// after it.
  Tensor forward(const Tensor& x, const Tensor& prompt = {}, const Tensor& tokens = {}) const;
};

struct StageOutput {
  Tensor tokens;  // [B, h·w, d] after the stage norm
  Grid grid;
};

/// Called once per stage with that stage's patch-embedding output (before the
/// positional embedding) and returns one prompt per block of the stage; empty
/// or undefined entries mean "no prompt".
using StagePromptFn = std::function<std::vector<Tensor>(std::size_t stage, const Tensor& embed, Grid grid)>;

class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig config, const ParameterStore& store);

  static void specs(const BackboneConfig& config, ParamSpecs& out);

  const BackboneConfig& config() const { return config_; }

  /// `images` is [B, C, H, W]. `vpt` holds optional token banks per global
  /// block index (empty vector = none).
  std::vector<StageOutput> forward(const Tensor& images, const StagePromptFn& prompts = {},
                                   const std::vector<Tensor>& vpt = {}) const;
  /// Same with a precomputed per-block prompt list, which must be empty or
  /// hold exactly total_blocks() entries.
  std::vector<StageOutput> forward_with(const Tensor& images, const std::vector<Tensor>& prompts) const;

  /// Patch embedding of stage 0 only (no positional embedding).
  Tensor embed(const Tensor& images) const;

 private:
  struct Stage {
    Tensor embed_w, embed_b, pos, norm_g, norm_b;
    std::vector<Block> blocks;
  };
  BackboneConfig config_;
  std::vector<Stage> stages_;
  std::vector<Grid> grids_;
};

}  // namespace evp
