#pragma once

// Losses, AdamW with cosine decay, parameter partitions, parameter accounting
// and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evp/dataset.hpp"
#include "evp/model.hpp"

namespace evp {

/// logits [B, H, W] vs binary target of the same shape.
Tensor compute_loss(const Tensor& logits, const Tensor& target, LossKind kind);

/// base · 0.5 · (1 + cos(π t / T)), for 0 ≤ t < T.
double cosine_lr(double base, std::size_t t, std::size_t total);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay; decay is applied only to tensors flagged in
/// `decay` (matrix weights).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, std::vector<bool> decay, AdamWConfig config = {});
  /// Updates every parameter holding a gradient. Throws NumericError before
  /// touching anything if a gradient is non-finite.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<bool> decay_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct ParamPartition {
  std::vector<std::string> frozen;
  std::vector<std::string> tunable;
};

/// full → everything; decoder → decoder.*; vpt → decoder.* + vpt.*;
/// evp1/evp2 → decoder.* + prompt.*. backbone.* is frozen except under full.
ParamPartition partition(Strategy strategy, const ParamSpecs& specs);

struct ParamCount {
  std::size_t total = 0;
  std::size_t tunable = 0;
  double tunable_fraction = 0;
};

ParamCount count_params(const ParamSpecs& specs, const ParamPartition& partition);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;  // mean training loss over the epoch's steps
  double val_iou = 0;
  double lr = 0;    // learning rate of the epoch's last step
};

std::string to_json_line(const EpochRecord& r);

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  std::uint64_t frozen_checksum = 0;
};

/// Trains the tunable partition of `model` for `config.strategy`. Shuffling,
/// flips and everything else derive from config.seed. After each epoch the
/// frozen partition is checked to be bit-identical to its state at entry.
TrainResult train(Segmenter& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Probability maps [H, W] (sigmoid of logits) for a list of samples.
std::vector<Tensor> predict(const Segmenter& model, const std::vector<Sample>& samples, std::size_t batch = 8);
double mean_iou(const Segmenter& model, const std::vector<Sample>& samples);

/// [B, 3, H, W] stack of images (optionally mirrored per sample).
Tensor stack_images(const std::vector<const Tensor*>& images, const std::vector<bool>& flips = {});

}  // namespace evp
