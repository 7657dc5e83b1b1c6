#pragma once

// Segmentation head: per-stage linear projection to the inner width, bilinear
// upsampling of every stage to the stage-0 grid and summation, a stack of
// transformer blocks, a linear layer to one logit per token, and bilinear
// upsampling of the logit grid to the image size.
//
// Parameter names: decoder.proj{s}.{w,b}, decoder.block{i}.*, decoder.head.{w,b}.

#include <cstddef>
#include <vector>

#include "evp/backbone.hpp"

namespace evp {

struct DecoderConfig {
  std::size_t inner = 32;
  std::size_t blocks = 4;
  std::size_t heads = 2;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig config, BackboneConfig backbone, const ParameterStore& store);

  static void specs(const DecoderConfig& config, const BackboneConfig& backbone, ParamSpecs& out);

  /// Logits [B, H, W] at the backbone's image size.
  Tensor forward(const std::vector<StageOutput>& features) const;

 private:
  DecoderConfig config_;
  BackboneConfig backbone_;
  std::vector<Grid> grids_;
  std::vector<Linear> proj_;
  std::vector<Block> blocks_;
  Linear head_;
};

}  // namespace evp
