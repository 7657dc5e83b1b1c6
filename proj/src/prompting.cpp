#include "evp/prompting.hpp"

#include <memory>
#include <stdexcept>

#include "evp/fft.hpp"

namespace evp {

std::string variant_name(PromptVariant v) {
  switch (v) {
    case PromptVariant::v1: return "v1";
    case PromptVariant::v2: return "v2";
    default: return "none";
  }
}

PromptVariant parse_variant(const std::string& name) {
  if (name == "v1") return PromptVariant::v1;
  if (name == "v2") return PromptVariant::v2;
  if (name == "none") return PromptVariant::none;
  throw std::invalid_argument("unknown prompt variant '" + name + "'");
}

std::string fourier_mode_name(FourierMode m) { return m == FourierMode::reduced ? "reduced-dim" : "full-dim"; }

FourierMode parse_fourier_mode(const std::string& name) {
  if (name == "reduced-dim" || name == "reduced") return FourierMode::reduced;
  if (name == "full-dim" || name == "full") return FourierMode::full;
  throw std::invalid_argument("unknown fourier mode '" + name + "'");
}

void PromptConfig::validate(const BackboneConfig& backbone) const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("prompt tau must lie in [0, 1]");
  if (!enabled()) return;
  if (r == 0) throw std::invalid_argument("prompt scale factor r must be positive");
  if (!stages.empty() && stages.size() != backbone.stages.size()) {
    throw DimensionError("prompt config has " + std::to_string(stages.size()) + " stage flags for a " +
                         std::to_string(backbone.stages.size()) + "-stage backbone");
  }
  std::size_t last = 0;
  bool any = false;
  for (std::size_t s = 0; s < backbone.stages.size(); ++s)
    if (stage_enabled(s)) last = s, any = true;
  for (std::size_t s = 0; any && s <= last; ++s) {
    const bool needs_width = stage_enabled(s) || variant == PromptVariant::v1;
    if (needs_width && backbone.stages[s].dim % r != 0) {
      throw DimensionError("stage " + std::to_string(s) + " dim " + std::to_string(backbone.stages[s].dim) +
                           " not divisible by r = " + std::to_string(r));
    }
  }
}

// ---------------------------------------------------------------------------

Tensor fourier_mlp(const Tensor& x, Grid grid, const Linear& real, const Linear& imag) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("fourier_mlp: expected tokens, got " + to_string(x.shape()));
  const std::size_t n = x.dim(x.rank() - 2);
  if (grid.cells() != n) {
    throw DimensionError("fourier_mlp: " + std::to_string(n) + " tokens do not fill grid " + std::to_string(grid.h) +
                         "x" + std::to_string(grid.w));
  }
  const fft::Layout layout{x.rank() == 3 ? x.dim(0) : 1, grid.h, grid.w, x.shape().back()};
  const Tensor z = fft2_packed(x, layout);
  const Tensor re = slice(z, 0, 0, 1);
  const Tensor im = slice(z, 0, 1, 2);
  const Tensor gated = concat({mul(re, sigmoid(real(re))), mul(im, sigmoid(imag(im)))}, 0);
  // The gates differ on the real and imaginary planes, so the gated spectrum
  // is not conjugate-symmetric and the inverse carries a genuine imaginary
  // part; the real part is kept.
  return ifft2_real_packed(gated, layout);
}

Tensor adaptor_v1(const Tensor& f_pe, const Tensor& f_hfc, const Linear& tune, const Linear& up) {
  if (f_pe.shape() != f_hfc.shape()) {
    throw DimensionError("adaptor_v1: F_pe " + to_string(f_pe.shape()) + " and F_hfc " + to_string(f_hfc.shape()) +
                         " differ");
  }
  return up(gelu(tune(add(f_pe, f_hfc))));
}

Tensor FreqAdaptor::operator()(const Tensor& x, Grid grid) const {
  Tensor xd, xf;
  if (mode == FourierMode::reduced) {
    xd = down(x);
    xf = fourier_mlp(xd, grid, real, imag);
  } else {
    xd = down(x);
    xf = down(fourier_mlp(x, grid, real, imag));
  }
  const Tensor a = add(gelu(pe(xd)), xd);
  const Tensor f = add(gelu(freq(xf)), xf);
  return up(add(a, f));
}

// ---------------------------------------------------------------------------

namespace {

std::string stage_prefix(std::size_t s) { return "prompt.stage" + std::to_string(s); }
std::string block_prefix(std::size_t s, std::size_t i) { return stage_prefix(s) + ".block" + std::to_string(i); }

// Length of the v1 HFC chain: every stage up to the last prompted one.
std::size_t chain_length(const PromptConfig& config, const BackboneConfig& backbone) {
  if (config.variant != PromptVariant::v1) return 0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < backbone.stages.size(); ++s)
    if (config.stage_enabled(s)) n = s + 1;
  return n;
}

PatchSpec hfc_merge(std::size_t stride) { return {2 * stride - 1, stride, stride - 1}; }

}  // namespace

void Prompter::specs(const PromptConfig& config, const BackboneConfig& backbone, ParamSpecs& out) {
  config.validate(backbone);
  if (!config.enabled()) return;
  const std::size_t chain = chain_length(config, backbone);
  for (std::size_t s = 0; s < backbone.stages.size(); ++s) {
    const auto& st = backbone.stages[s];
    const std::size_t d = st.dim, c = d / config.r;
    const std::string p = stage_prefix(s);
    if (s < chain) {
      const std::size_t in = s == 0 ? st.patch * st.patch * backbone.in_channels
                                    : hfc_merge(st.patch).kernel * hfc_merge(st.patch).kernel *
                                          (backbone.stages[s - 1].dim / config.r);
      add_linear(out, p + ".hfc", in, c);
    }
    if (!config.stage_enabled(s)) continue;
    if (config.variant == PromptVariant::v1) {
      add_linear(out, p + ".pe", d, c);
      for (std::size_t i = 0; i < st.blocks; ++i) add_linear(out, block_prefix(s, i) + ".tune", c, c);
      add_linear(out, p + ".up", c, d, true, Init::zeros);
    } else {
      const std::size_t fw = config.fourier_mode == FourierMode::reduced ? c : d;
      for (std::size_t i = 0; i < st.blocks; ++i) {
        const std::string b = block_prefix(s, i);
        add_linear(out, b + ".down", d, c);
        add_linear(out, b + ".fourier.real", fw, fw);
        add_linear(out, b + ".fourier.imag", fw, fw);
        add_linear(out, b + ".pe", c, c);
        add_linear(out, b + ".freq", c, c);
        add_linear(out, b + ".up", c, d, true, Init::zeros);
      }
    }
  }
}

Prompter::Prompter(PromptConfig config, BackboneConfig backbone, const ParameterStore& store)
    : config_(std::move(config)), backbone_(std::move(backbone)) {
  config_.validate(backbone_);
  grids_ = backbone_.grids();
  chain_stages_ = chain_length(config_, backbone_);
  stages_.resize(backbone_.stages.size());
  if (!config_.enabled()) return;
  for (std::size_t s = 0; s < backbone_.stages.size(); ++s) {
    Stage& st = stages_[s];
    const std::string p = stage_prefix(s);
    if (s < chain_stages_) st.hfc = Linear::bind(store, p + ".hfc");
    if (!config_.stage_enabled(s)) continue;
    if (config_.variant == PromptVariant::v1) {
      st.pe = Linear::bind(store, p + ".pe");
      st.up = Linear::bind(store, p + ".up");
      for (std::size_t i = 0; i < backbone_.stages[s].blocks; ++i)
        st.tune.push_back(Linear::bind(store, block_prefix(s, i) + ".tune"));
    } else {
      for (std::size_t i = 0; i < backbone_.stages[s].blocks; ++i) {
        const std::string b = block_prefix(s, i);
        st.v2.push_back({Linear::bind(store, b + ".down"), Linear::bind(store, b + ".fourier.real"),
                         Linear::bind(store, b + ".fourier.imag"), Linear::bind(store, b + ".pe"),
                         Linear::bind(store, b + ".freq"), Linear::bind(store, b + ".up"), config_.fourier_mode});
      }
    }
  }
}

std::size_t Prompter::width(std::size_t stage) const { return backbone_.stages.at(stage).dim / config_.r; }

Tensor Prompter::hfc_tokens(const Tensor& hfc_images) const {
  const std::size_t p = backbone_.stages[0].patch;
  return patchify(to_channels_last(hfc_images), Grid{backbone_.image_h, backbone_.image_w}, {p, p, 0});
}

Tensor Prompter::embedding_tune(const Tensor& embed, std::size_t stage) const {
  if (!config_.stage_enabled(stage) || config_.variant != PromptVariant::v1) {
    throw std::logic_error("embedding_tune: stage " + std::to_string(stage) + " has no v1 prompt");
  }
  return stages_[stage].pe(embed);
}

StagePromptFn Prompter::stage_fn(const Tensor& hfc_images) const {
  if (config_.variant == PromptVariant::v1 && chain_stages_ > 0 && !hfc_images.defined()) {
    throw std::invalid_argument("v1 prompts need the HFC images");
  }
  auto prev_hfc = std::make_shared<Tensor>();
  return [this, hfc_images, prev_hfc](std::size_t s, const Tensor& embed, Grid grid) {
    std::vector<Tensor> prompts;
    if (!config_.enabled()) return prompts;
    const Stage& st = stages_[s];
    Tensor f_hfc;
    if (s < chain_stages_) {
      f_hfc = s == 0 ? st.hfc(hfc_tokens(hfc_images))
                     : st.hfc(patchify(*prev_hfc, grids_[s - 1], hfc_merge(backbone_.stages[s].patch)));
      if (f_hfc.dim(1) != grid.cells()) throw DimensionError("hfc_tune: HFC tokens do not match stage grid");
      *prev_hfc = f_hfc;
    }
    if (!config_.stage_enabled(s)) return prompts;
    if (config_.variant == PromptVariant::v1) {
      const Tensor f_pe = st.pe(embed);
      for (const Linear& tune : st.tune) prompts.push_back(adaptor_v1(f_pe, f_hfc, tune, st.up));
    } else {
      for (const FreqAdaptor& a : st.v2) prompts.push_back(a(embed, grid));
    }
    return prompts;
  };
}

std::vector<Tensor> Prompter::build_prompts(const Tensor& images, const Tensor& hfc_images,
                                            const Backbone& backbone) const {
  std::vector<Tensor> all;
  const StagePromptFn inner = stage_fn(hfc_images);
  backbone.forward(images, [&](std::size_t s, const Tensor& embed, Grid grid) {
    auto prompts = inner(s, embed, grid);
    if (prompts.empty()) prompts.resize(backbone_.stages[s].blocks);
    all.insert(all.end(), prompts.begin(), prompts.end());
    return prompts;
  });
  return all;
}

}  // namespace evp
