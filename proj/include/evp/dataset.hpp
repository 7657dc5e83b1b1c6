#pragma once

// Segmentation samples and on-disk datasets.
//
// A dataset directory holds manifest.json plus one EVPT file per image
// ([3, H, W] in [0, 1]) and per mask ([H, W], values 0/1):
//   {"task": "texture", "seed": 7, "size": 64,
//    "samples": [{"id": "train-00000", "image": "images/train-00000.evpt",
//                 "mask": "masks/train-00000.evpt", "split": "train"}, ...]}
// Paths are relative to the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

struct Sample {
  std::string id;
  Tensor image;  // [3, H, W], f32
  Tensor mask;   // [H, W], f32, binary
  std::string split;
};

struct Dataset {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::vector<Sample> split(const std::string& name) const;
};

/// Writes manifest.json and sample files under `dir`; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& manifest);

/// Checks the sample invariants: image [3, H, W] in [0, 1], binary [H, W] mask.
void validate_sample(const Sample& sample);

/// Binary PPM (P6) → [3, H, W] and PGM (P5) → [1, H, W], scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
/// Writes an [H, W] or [1, H, W] map in [0, 1] as 8-bit PGM.
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace evp
