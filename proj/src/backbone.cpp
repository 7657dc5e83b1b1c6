#include "evp/backbone.hpp"

#include <stdexcept>

namespace evp {

BackboneConfig BackboneConfig::desk_plain() {
  BackboneConfig c;
  c.kind = BackboneKind::plain;
  c.stages = {{8, 64, 6, 4}};
  c.pos_embed = true;
  return c;
}

BackboneConfig BackboneConfig::desk_hierarchical() {
  BackboneConfig c;
  c.kind = BackboneKind::hierarchical;
  c.stages = {{8, 16, 2, 2}, {2, 32, 2, 4}};
  c.pos_embed = false;
  return c;
}

BackboneConfig BackboneConfig::b4(std::size_t image) {
  BackboneConfig c;
  c.kind = BackboneKind::hierarchical;
  c.image_h = c.image_w = image;
  c.stages = {{4, 64, 3, 1}, {2, 128, 8, 2}, {2, 320, 27, 5}, {2, 512, 3, 8}};
  c.pos_embed = false;
  return c;
}

std::size_t BackboneConfig::total_blocks() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.blocks;
  return n;
}

std::vector<Grid> BackboneConfig::grids() const {
  validate();
  std::vector<Grid> out;
  Grid g{image_h, image_w};
  for (const auto& s : stages) {
    g = Grid{g.h / s.patch, g.w / s.patch};
    out.push_back(g);
  }
  return out;
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw DimensionError("backbone needs at least one stage");
  if (kind == BackboneKind::plain && stages.size() != 1) {
    throw DimensionError("plain backbone must have exactly one stage");
  }
  if (in_channels == 0) throw DimensionError("backbone needs at least one input channel");
  std::size_t h = image_h, w = image_w;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    if (st.patch == 0 || st.dim == 0 || st.blocks == 0 || st.heads == 0) {
      throw DimensionError("stage " + std::to_string(s) + " has a zero patch, dim, block or head count");
    }
    if (st.dim % st.heads != 0) {
      throw DimensionError("stage " + std::to_string(s) + " dim " + std::to_string(st.dim) +
                           " not divisible by " + std::to_string(st.heads) + " heads");
    }
    if (h % st.patch != 0 || w % st.patch != 0) {
      throw DimensionError("stage " + std::to_string(s) + ": grid " + std::to_string(h) + "x" +
                           std::to_string(w) + " not divisible by patch " + std::to_string(st.patch));
    }
    h /= st.patch;
    w /= st.patch;
  }
}

std::string kind_name(BackboneKind kind) { return kind == BackboneKind::plain ? "plain" : "hierarchical"; }

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "plain") return BackboneKind::plain;
  if (name == "hierarchical") return BackboneKind::hierarchical;
  throw std::invalid_argument("unknown backbone kind '" + name + "'");
}

// ---------------------------------------------------------------------------

void Block::specs(ParamSpecs& out, const std::string& p, std::size_t dim, std::size_t mlp_ratio) {
  add_layernorm(out, p + ".ln1", dim);
  add_linear(out, p + ".attn.q", dim, dim);
  // No key bias: it shifts every score in a row equally and cancels in the softmax.
  add_linear(out, p + ".attn.k", dim, dim, /*bias=*/false);
  add_linear(out, p + ".attn.v", dim, dim);
  add_linear(out, p + ".attn.o", dim, dim);
  add_layernorm(out, p + ".ln2", dim);
  add_linear(out, p + ".mlp.fc1", dim, mlp_ratio * dim);
  add_linear(out, p + ".mlp.fc2", mlp_ratio * dim, dim);
}

Block Block::bind(const ParameterStore& s, const std::string& p, std::size_t heads) {
  Block b;
  b.ln1_g = s.get(p + ".ln1.g");
  b.ln1_b = s.get(p + ".ln1.b");
  b.wq = s.get(p + ".attn.q.w");
  b.bq = s.get(p + ".attn.q.b");
  b.wk = s.get(p + ".attn.k.w");
  b.wv = s.get(p + ".attn.v.w");
  b.bv = s.get(p + ".attn.v.b");
  b.wo = s.get(p + ".attn.o.w");
  b.bo = s.get(p + ".attn.o.b");
  b.ln2_g = s.get(p + ".ln2.g");
  b.ln2_b = s.get(p + ".ln2.b");
  b.fc1_w = s.get(p + ".mlp.fc1.w");
  b.fc1_b = s.get(p + ".mlp.fc1.b");
  b.fc2_w = s.get(p + ".mlp.fc2.w");
  b.fc2_b = s.get(p + ".mlp.fc2.b");
  b.heads = heads;
  return b;
}

Tensor Block::forward(const Tensor& input, const Tensor& prompt, const Tensor& tokens) const {
  Tensor x = input;
  if (prompt.defined()) {
    if (prompt.shape() != x.shape()) {
      throw DimensionError("block: prompt " + to_string(prompt.shape()) + " does not match tokens " +
                           to_string(x.shape()));
    }
    x = add(x, prompt);
  }
  const std::size_t n = x.dim(x.rank() - 2);
  std::size_t extra = 0;
  if (tokens.defined()) {
    extra = tokens.dim(0);
    Tensor bank = x.rank() == 3 ? expand_batch(tokens, x.dim(0)) : tokens;
    x = concat({bank, x}, x.rank() - 2);
  }
  Tensor h = layernorm(x, ln1_g, ln1_b);
  Tensor a = multi_head_attention(linear(h, wq, bq), linear(h, wk), linear(h, wv, bv), heads);
  x = add(x, linear(a, wo, bo));
  h = layernorm(x, ln2_g, ln2_b);
  x = add(x, linear(gelu(linear(h, fc1_w, fc1_b)), fc2_w, fc2_b));
  if (extra) x = slice(x, x.rank() - 2, extra, extra + n);
  return x;
}

// ---------------------------------------------------------------------------

void Backbone::specs(const BackboneConfig& config, ParamSpecs& out) {
  const auto grids = config.grids();
  std::size_t in_dim = config.in_channels;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const auto& st = config.stages[s];
    const std::string p = "backbone.stage" + std::to_string(s);
    add_linear(out, p + ".embed", st.patch * st.patch * in_dim, st.dim);
    if (s == 0 && config.pos_embed) out.push_back({p + ".pos", {grids[0].cells(), st.dim}, Init::small_normal, false});
    for (std::size_t i = 0; i < st.blocks; ++i) Block::specs(out, p + ".block" + std::to_string(i), st.dim);
    add_layernorm(out, p + ".norm", st.dim);
    in_dim = st.dim;
  }
}

Backbone::Backbone(BackboneConfig config, const ParameterStore& store)
    : config_(std::move(config)), grids_(config_.grids()) {
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const auto& st = config_.stages[s];
    const std::string p = "backbone.stage" + std::to_string(s);
    Stage stage;
    stage.embed_w = store.get(p + ".embed.w");
    stage.embed_b = store.get(p + ".embed.b");
    if (s == 0 && config_.pos_embed) stage.pos = store.get(p + ".pos");
    for (std::size_t i = 0; i < st.blocks; ++i) {
      stage.blocks.push_back(Block::bind(store, p + ".block" + std::to_string(i), st.heads));
    }
    stage.norm_g = store.get(p + ".norm.g");
    stage.norm_b = store.get(p + ".norm.b");
    stages_.push_back(std::move(stage));
  }
}

Tensor Backbone::embed(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != config_.image_h ||
      images.dim(3) != config_.image_w) {
    throw DimensionError("backbone: expected images [B, " + std::to_string(config_.in_channels) + ", " +
                         std::to_string(config_.image_h) + ", " + std::to_string(config_.image_w) +
                         "], got " + to_string(images.shape()));
  }
  const std::size_t p = config_.stages[0].patch;
  Tensor patches = patchify(to_channels_last(images), Grid{config_.image_h, config_.image_w}, {p, p, 0});
  return linear(patches, stages_[0].embed_w, stages_[0].embed_b);
}

std::vector<StageOutput> Backbone::forward(const Tensor& images, const StagePromptFn& prompt_fn,
                                           const std::vector<Tensor>& vpt) const {
  if (!vpt.empty() && vpt.size() != config_.total_blocks()) {
    throw DimensionError("backbone: " + std::to_string(vpt.size()) + " token banks for " +
                         std::to_string(config_.total_blocks()) + " blocks");
  }
  std::vector<StageOutput> outputs;
  std::size_t global = 0;
  Tensor x;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& stage = stages_[s];
    Tensor e;
    if (s == 0) {
      e = embed(images);
    } else {
      const std::size_t p = config_.stages[s].patch;
      e = linear(patchify(x, grids_[s - 1], {p, p, 0}), stage.embed_w, stage.embed_b);
    }
    std::vector<Tensor> prompts;
    if (prompt_fn) prompts = prompt_fn(s, e, grids_[s]);
    if (!prompts.empty() && prompts.size() != stage.blocks.size()) {
      throw DimensionError("backbone: stage " + std::to_string(s) + " got " + std::to_string(prompts.size()) +
                           " prompts for " + std::to_string(stage.blocks.size()) + " blocks");
    }
    x = stage.pos.defined() ? add(e, stage.pos) : e;
    for (std::size_t i = 0; i < stage.blocks.size(); ++i, ++global) {
      const Tensor prompt = prompts.empty() ? Tensor{} : prompts[i];
      const Tensor bank = vpt.empty() ? Tensor{} : vpt[global];
      x = stage.blocks[i].forward(x, prompt, bank);
    }
    x = layernorm(x, stage.norm_g, stage.norm_b);
    outputs.push_back({x, grids_[s]});
  }
  return outputs;
}

std::vector<StageOutput> Backbone::forward_with(const Tensor& images, const std::vector<Tensor>& prompts) const {
  if (prompts.empty()) return forward(images);
  if (prompts.size() != config_.total_blocks()) {
    throw DimensionError("backbone: " + std::to_string(prompts.size()) + " prompts for " +
                         std::to_string(config_.total_blocks()) + " blocks");
  }
  std::vector<std::size_t> first(config_.stages.size() + 1, 0);
  for (std::size_t s = 0; s < config_.stages.size(); ++s) first[s + 1] = first[s] + config_.stages[s].blocks;
  return forward(images, [&](std::size_t s, const Tensor&, Grid) {
    return std::vector<Tensor>(prompts.begin() + std::ptrdiff_t(first[s]), prompts.begin() + std::ptrdiff_t(first[s + 1]));
  });
}

}  // namespace evp
