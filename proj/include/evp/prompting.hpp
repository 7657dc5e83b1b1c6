#pragma once

// Explicit visual prompts: per-image prompt tensors computed from the frozen
// patch embedding of each stage (and, for v1, the image's high-frequency
// component), added to the tokens at the input of every block.
//
// v1, per prompted stage s with c = d_s / r:
//   F_pe  = L_pe(e_s)                      e_s = stage patch embedding
//   F_hfc = L_hfc(patches of the HFC image) for s = 0, and for s ≥ 1 a 3×3,
//           stride-2 overlapping embedding of the previous stage's F_hfc
//   P_i   = up(GELU(tune_i(F_pe + F_hfc)))  `up` shared by the stage's blocks
//
// v2, per block i (reduced-dim placement):
//   x  = down_i(e_s),  x_f = FourierMLP_i(x)
//   P_i = up_i( GELU(pe_i(x)) + x  +  GELU(freq_i(x_f)) + x_f )
// Full-dim placement runs FourierMLP_i on e_s at width d and maps both paths
// through down_i.
//
// Parameter names live under "prompt.stage{s}." (see specs()).

#include <cstddef>
#include <string>
#include <vector>

#include "evp/backbone.hpp"
#include "evp/params.hpp"

namespace evp {

enum class PromptVariant { none, v1, v2 };
enum class FourierMode { reduced, full };

struct PromptConfig {
  PromptVariant variant = PromptVariant::none;
  std::size_t r = 4;
  double tau = 0.25;
  FourierMode fourier_mode = FourierMode::reduced;
  std::vector<bool> stages;  // per backbone stage; empty = every stage

  bool enabled() const { return variant != PromptVariant::none; }
  bool stage_enabled(std::size_t s) const { return enabled() && (stages.empty() || stages.at(s)); }
  /// Checks r, τ and stage flags against the backbone.
  void validate(const BackboneConfig& backbone) const;
};

std::string variant_name(PromptVariant v);
PromptVariant parse_variant(const std::string& name);
std::string fourier_mode_name(FourierMode m);
FourierMode parse_fourier_mode(const std::string& name);

/// Spectral gating of channel-last tokens x [B, h·w, c] (or [h·w, c]): a 2-D
/// FFT over the token grid per channel, real and imaginary planes multiplied
/// by sigmoid(real(·)) and sigmoid(imag(·)) position-wise, then the real part
/// of the inverse FFT.
Tensor fourier_mlp(const Tensor& x, Grid grid, const Linear& real, const Linear& imag);

/// up(GELU(tune(F_pe + F_hfc)))
Tensor adaptor_v1(const Tensor& f_pe, const Tensor& f_hfc, const Linear& tune, const Linear& up);

struct FreqAdaptor {
  Linear down, real, imag, pe, freq, up;
  FourierMode mode = FourierMode::reduced;
  Tensor operator()(const Tensor& x, Grid grid) const;
};

class Prompter {
 public:
  Prompter() = default;
  Prompter(PromptConfig config, BackboneConfig backbone, const ParameterStore& store);

  static void specs(const PromptConfig& config, const BackboneConfig& backbone, ParamSpecs& out);

  const PromptConfig& config() const { return config_; }
  std::size_t width(std::size_t stage) const;

  /// Stage-0 HFC patch tokens [B, N0, P²·C] from HFC images [B, C, H, W].
  Tensor hfc_tokens(const Tensor& hfc_images) const;

  /// Prompt callback for one backbone pass. `hfc_images` is required for v1.
  StagePromptFn stage_fn(const Tensor& hfc_images = {}) const;

  /// Flat per-block prompt list for `images`; unprompted stages yield
  /// undefined entries.
  std::vector<Tensor> build_prompts(const Tensor& images, const Tensor& hfc_images, const Backbone& backbone) const;

  // Pieces, exposed for inspection.
  Tensor embedding_tune(const Tensor& embed, std::size_t stage) const;
  const Linear& tune(std::size_t stage, std::size_t block) const { return stages_.at(stage).tune.at(block); }
  const Linear& up(std::size_t stage) const { return stages_.at(stage).up; }
  const FreqAdaptor& freq_adaptor(std::size_t stage, std::size_t block) const {
    return stages_.at(stage).v2.at(block);
  }

 private:
  struct Stage {
    Linear pe, hfc, up;
    std::vector<Linear> tune;
    std::vector<FreqAdaptor> v2;
  };
  PromptConfig config_;
  BackboneConfig backbone_;
  std::vector<Grid> grids_;
  std::vector<Stage> stages_;
  std::size_t chain_stages_ = 0;  // v1 HFC chain length (up to the last prompted stage)
};

}  // namespace evp
