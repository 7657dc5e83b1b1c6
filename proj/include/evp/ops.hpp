#pragma once

// Differentiable primitives. Each op validates shapes, checks its output for
// NaN/Inf, and records a backward closure when any input requires grad.
//
// Broadcasting: only trailing-dimension broadcast is supported. For binary
// elementwise ops the smaller operand's shape must equal a suffix of the larger
// operand's shape, e.g. [B, N, d] + [d] or [B, N, d] + [N, d].

#include <cstddef>
#include <vector>

#include "evp/tensor.hpp"

namespace evp {

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t cells() const { return h * w; }
  bool operator==(const Grid&) const = default;
};

/// a[..., K] · b[K, N] -> [..., N]. Leading dims of `a` are flattened to rows.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] · w[in, out] + bias[out]; `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Exact GELU, x·Φ(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Over the last dimension, max-subtracted.
Tensor softmax(const Tensor& x);
/// Over the last dimension, population variance, eps = 1e-5 by default.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Mean / sum of all elements; result shape [1].
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

/// Single-head scaled dot-product attention, softmax(Q·Kᵀ/√d_h)·V.
/// Shapes [N, d_h] or [B, N, d_h].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);
/// Splits the last dimension into `heads` equal slices, attends per head with
/// scale 1/√(d/heads), and concatenates the heads back. Output projection is
/// the caller's responsibility.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads);

/// [..] -> [batch, ..] by repetition.
Tensor expand_batch(const Tensor& x, std::size_t batch);

struct PatchSpec {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Channel-last grid tokens x[B, h·w, C] -> [B, h'·w', kernel²·C]. Each output
/// row holds one window flattened in (row, col, channel) order; windows are
/// emitted in row-major order and zero padding fills out-of-range cells.
Tensor patchify(const Tensor& x, Grid grid, PatchSpec spec);
Grid patchify_grid(Grid grid, PatchSpec spec);

/// Bilinear resize of channel-last grid tokens x[B, h·w, C] -> [B, H·W, C]
/// with corner-aligned sampling.
Tensor upsample_bilinear(const Tensor& x, Grid from, Grid to);

// Losses. `logits` and `target` share a shape [B, ...]; target is binary.

/// Mean BCE on sigmoid(logits), probabilities clamped to [1e-7, 1 - 1e-7].
Tensor bce_loss(const Tensor& logits, const Tensor& target);
/// BCE with positives weighted by N_neg/N and negatives by N_pos/N, with the
/// class frequencies taken over the whole batch.
Tensor balanced_bce_loss(const Tensor& logits, const Tensor& target);
/// 1 - (Σp·g + 1)/(Σp + Σg - Σp·g + 1) per sample, averaged over the batch.
Tensor iou_loss(const Tensor& logits, const Tensor& target);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

/// Channel-first [B, C, H, W] (or [C, H, W]) to channel-last tokens
/// [B, H·W, C]. Not differentiable; used for input images.
Tensor to_channels_last(const Tensor& image);
/// Horizontal mirror of the last axis. Not differentiable.
Tensor flip_horizontal(const Tensor& x);

}  // namespace evp
