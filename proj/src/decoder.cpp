#include "evp/decoder.hpp"

#include <stdexcept>

namespace evp {

void Decoder::specs(const DecoderConfig& config, const BackboneConfig& backbone, ParamSpecs& out) {
  if (config.inner == 0 || config.heads == 0 || config.inner % config.heads != 0) {
    throw DimensionError("decoder inner width " + std::to_string(config.inner) + " not divisible by " +
                         std::to_string(config.heads) + " heads");
  }
  for (std::size_t s = 0; s < backbone.stages.size(); ++s) {
    add_linear(out, "decoder.proj" + std::to_string(s), backbone.stages[s].dim, config.inner);
  }
  for (std::size_t i = 0; i < config.blocks; ++i) Block::specs(out, "decoder.block" + std::to_string(i), config.inner);
  add_linear(out, "decoder.head", config.inner, 1);
}

Decoder::Decoder(DecoderConfig config, BackboneConfig backbone, const ParameterStore& store)
    : config_(config), backbone_(std::move(backbone)), grids_(backbone_.grids()) {
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s)
    proj_.push_back(Linear::bind(store, "decoder.proj" + std::to_string(s)));
  for (std::size_t i = 0; i < config_.blocks; ++i)
    blocks_.push_back(Block::bind(store, "decoder.block" + std::to_string(i), config_.heads));
  head_ = Linear::bind(store, "decoder.head");
}

Tensor Decoder::forward(const std::vector<StageOutput>& features) const {
  if (features.size() != proj_.size()) {
    throw DimensionError("decoder: got " + std::to_string(features.size()) + " stage features, expected " +
                         std::to_string(proj_.size()));
  }
  Tensor x;
  for (std::size_t s = 0; s < features.size(); ++s) {
    if (!(features[s].grid == grids_[s])) throw DimensionError("decoder: stage " + std::to_string(s) + " grid mismatch");
    Tensor t = proj_[s](features[s].tokens);
    if (!(grids_[s] == grids_[0])) t = upsample_bilinear(t, grids_[s], grids_[0]);
    x = x.defined() ? add(x, t) : t;
  }
  for (const Block& b : blocks_) x = b.forward(x);
  const Tensor logits = head_(x);
  const Grid image{backbone_.image_h, backbone_.image_w};
  const Tensor up = upsample_bilinear(logits, grids_[0], image);
  return reshape(up, {up.dim(0), image.h, image.w});
}

}  // namespace evp
