#include "evp/model.hpp"

#include <json.hpp>
#include <stdexcept>

#include "evp/io.hpp"

namespace evp {

using nlohmann::json;

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::full: return "full";
    case Strategy::decoder: return "decoder";
    case Strategy::vpt: return "vpt";
    case Strategy::evp1: return "evp1";
    case Strategy::evp2: return "evp2";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::full, Strategy::decoder, Strategy::vpt, Strategy::evp1, Strategy::evp2})
    if (strategy_name(s) == name) return s;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::bce: return "bce";
    case LossKind::balanced_bce: return "balanced_bce";
    case LossKind::iou: return "iou";
    case LossKind::bce_plus_iou: return "bce_plus_iou";
  }
  return "?";
}

LossKind parse_loss(const std::string& name) {
  for (LossKind k : {LossKind::bce, LossKind::balanced_bce, LossKind::iou, LossKind::bce_plus_iou})
    if (loss_name(k) == name) return k;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

namespace {

BackboneConfig parse_backbone(const json& j) {
  if (j.is_string()) {
    const std::string preset = j.get<std::string>();
    if (preset == "plain") return BackboneConfig::desk_plain();
    if (preset == "hierarchical") return BackboneConfig::desk_hierarchical();
    if (preset == "b4") return BackboneConfig::b4();
    throw std::invalid_argument("unknown backbone preset '" + preset + "'");
  }
  BackboneConfig c = BackboneConfig::desk_plain();
  if (j.contains("preset")) c = parse_backbone(j.at("preset"));
  if (j.contains("kind")) {
    c.kind = parse_backbone_kind(j.at("kind").get<std::string>());
    if (!j.contains("preset") && !j.contains("stages") && c.kind == BackboneKind::hierarchical) {
      c = BackboneConfig::desk_hierarchical();
    }
  }
  if (j.contains("image")) {
    const auto& im = j.at("image");
    if (im.is_number()) {
      c.image_h = c.image_w = im.get<std::size_t>();
    } else {
      c.image_h = im.at(0).get<std::size_t>();
      c.image_w = im.at(1).get<std::size_t>();
    }
  }
  c.in_channels = j.value("channels", c.in_channels);
  c.pos_embed = j.value("pos_embed", c.kind == BackboneKind::plain ? c.pos_embed : false);
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("patch").get<std::size_t>(), s.at("dim").get<std::size_t>(),
                          s.at("blocks").get<std::size_t>(), s.at("heads").get<std::size_t>()});
    }
  }
  c.validate();
  return c;
}

json backbone_json(const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"patch", s.patch}, {"dim", s.dim}, {"blocks", s.blocks}, {"heads", s.heads}});
  return {{"kind", kind_name(c.kind)},
          {"image", {c.image_h, c.image_w}},
          {"channels", c.in_channels},
          {"pos_embed", c.pos_embed},
          {"stages", stages}};
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  const json j = json::parse(text);
  RunConfig rc;
  if (j.contains("backbone")) rc.model.backbone = parse_backbone(j.at("backbone"));
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    rc.model.decoder.inner = d.value("inner", rc.model.decoder.inner);
    rc.model.decoder.blocks = d.value("blocks", rc.model.decoder.blocks);
    rc.model.decoder.heads = d.value("heads", rc.model.decoder.heads);
  }
  if (j.contains("prompt")) {
    const auto& p = j.at("prompt");
    auto& pc = rc.model.prompt;
    pc.variant = parse_variant(p.value("variant", std::string("none")));
    pc.r = p.value("r", pc.r);
    pc.tau = p.value("tau", pc.tau);
    pc.fourier_mode = parse_fourier_mode(p.value("fourier_mode", std::string("reduced-dim")));
    if (p.contains("stages")) pc.stages = p.at("stages").get<std::vector<bool>>();
    pc.validate(rc.model.backbone);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    auto& tc = rc.train;
    tc.strategy = parse_strategy(t.value("strategy", strategy_name(tc.strategy)));
    tc.lr = t.value("lr", tc.lr);
    tc.epochs = t.value("epochs", tc.epochs);
    tc.steps = t.value("steps", tc.steps);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.seed = t.value("seed", tc.seed);
    tc.loss = parse_loss(t.value("loss", loss_name(tc.loss)));
    tc.vpt_tokens = t.value("vpt_tokens", tc.vpt_tokens);
    if (!(tc.lr > 0) || tc.epochs == 0 || tc.batch_size == 0) {
      throw std::invalid_argument("train: lr, epochs and batch_size must be positive");
    }
  }
  rc.model.vpt_tokens = rc.train.strategy == Strategy::vpt ? rc.train.vpt_tokens : 0;
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path)); }

std::string to_json(const RunConfig& c) {
  const auto& p = c.model.prompt;
  json prompt = {{"variant", variant_name(p.variant)},
                 {"r", p.r},
                 {"tau", p.tau},
                 {"fourier_mode", fourier_mode_name(p.fourier_mode)}};
  if (!p.stages.empty()) prompt["stages"] = p.stages;
  const auto& t = c.train;
  json j = {{"backbone", backbone_json(c.model.backbone)},
            {"decoder", {{"inner", c.model.decoder.inner}, {"blocks", c.model.decoder.blocks}, {"heads", c.model.decoder.heads}}},
            {"prompt", prompt},
            {"train",
             {{"strategy", strategy_name(t.strategy)},
              {"lr", t.lr},
              {"epochs", t.epochs},
              {"steps", t.steps},
              {"batch_size", t.batch_size},
              {"seed", t.seed},
              {"loss", loss_name(t.loss)},
              {"vpt_tokens", t.vpt_tokens}}}};
  return j.dump(2);
}

ModelConfig model_for(const ModelConfig& base, const TrainConfig& train) {
  ModelConfig m = base;
  m.vpt_tokens = 0;
  switch (train.strategy) {
    case Strategy::evp1: m.prompt.variant = PromptVariant::v1; break;
    case Strategy::evp2: m.prompt.variant = PromptVariant::v2; break;
    case Strategy::vpt:
      m.prompt.variant = PromptVariant::none;
      m.vpt_tokens = train.vpt_tokens;
      break;
    default: m.prompt.variant = PromptVariant::none; break;
  }
  return m;
}

// ---------------------------------------------------------------------------

ParamSpecs Segmenter::specs(const ModelConfig& config) {
  ParamSpecs out;
  Backbone::specs(config.backbone, out);
  Prompter::specs(config.prompt, config.backbone, out);
  if (config.vpt_tokens > 0) {
    for (std::size_t s = 0; s < config.backbone.stages.size(); ++s)
      for (std::size_t i = 0; i < config.backbone.stages[s].blocks; ++i)
        out.push_back({"vpt.stage" + std::to_string(s) + ".block" + std::to_string(i) + ".tokens",
                       {config.vpt_tokens, config.backbone.stages[s].dim},
                       Init::small_normal,
                       false});
  }
  Decoder::specs(config.decoder, config.backbone, out);
  return out;
}

Segmenter::Segmenter(ModelConfig config, std::uint64_t seed, DType dtype)
    : config_(std::move(config)),
      store_(specs(config_), seed, dtype),
      backbone_(config_.backbone, store_),
      prompter_(config_.prompt, config_.backbone, store_),
      decoder_(config_.decoder, config_.backbone, store_) {
  if (config_.vpt_tokens > 0) {
    for (std::size_t s = 0; s < config_.backbone.stages.size(); ++s)
      for (std::size_t i = 0; i < config_.backbone.stages[s].blocks; ++i)
        vpt_.push_back(store_.get("vpt.stage" + std::to_string(s) + ".block" + std::to_string(i) + ".tokens"));
  }
}

std::vector<StageOutput> Segmenter::features(const Tensor& images, const Tensor& hfc_images) const {
  if (!config_.prompt.enabled()) return backbone_.forward(images, {}, vpt_);
  return backbone_.forward(images, prompter_.stage_fn(hfc_images), vpt_);
}

Tensor Segmenter::forward(const Tensor& images, const Tensor& hfc_images) const {
  return decoder_.forward(features(images, hfc_images));
}

Tensor Segmenter::forward_frozen_baseline(const Tensor& images) const {
  return decoder_.forward(backbone_.forward(images));
}

}  // namespace evp
