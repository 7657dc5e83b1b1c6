#pragma once

// Denoising pretext for the backbone: corrupt images with additive Gaussian
// noise and regress the clean pixels of every patch from the last stage's
// tokens through a throwaway linear head. Only backbone.* survives.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "evp/backbone.hpp"
#include "evp/dataset.hpp"
#include "evp/io.hpp"

namespace evp {

struct PretrainConfig {
  std::size_t steps = 600;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double noise = 0.2;  // noise standard deviation
  std::uint64_t seed = 1;
};

struct PretrainResult {
  NamedTensors backbone;      // stripped checkpoint, backbone.* only
  std::vector<double> losses;  // one per step
};

PretrainResult pretrain(const BackboneConfig& config, const std::vector<Sample>& data, const PretrainConfig& options,
                        const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace evp
