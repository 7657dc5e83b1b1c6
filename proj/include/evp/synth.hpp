#pragma once

// Procedural binary-segmentation tasks. Every sample has a smooth closed
// foreground blob covering 10–40% of the image and at least one pixel away
// from the border.
//
//   texture  smooth low-frequency background; the foreground adds a zero-mean
//            high-frequency texture, so it differs only in its fine detail
//   blur     texture everywhere; the foreground region is Gaussian-blurred
//   shade    smooth background darkened multiplicatively inside the foreground
//   camo     an oriented grating everywhere; inside the foreground the same
//            grating is phase-shifted by half a period

#include <cstddef>
#include <cstdint>
#include <string>

#include "evp/dataset.hpp"
#include "evp/rng.hpp"

namespace evp {

enum class Task { texture, blur, shade, camo };

std::string task_name(Task t);
Task parse_task(const std::string& name);

Sample synth_sample(Task task, std::size_t size, Rng& rng);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
  /// 80/10/10 split of n (val and test get at least one sample each).
  static SplitCounts from_total(std::size_t n);
};

/// Deterministic in (task, counts, size, seed). `stride` is the backbone's
/// total downsampling, which `size` must be divisible by.
Dataset synth_dataset(Task task, SplitCounts counts, std::size_t size, std::uint64_t seed, std::size_t stride = 8);

}  // namespace evp
