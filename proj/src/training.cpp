#include "evp/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "evp/frequency.hpp"
#include "evp/io.hpp"
#include "evp/metrics.hpp"
#include "evp/rng.hpp"

namespace evp {

Tensor compute_loss(const Tensor& logits, const Tensor& target, LossKind kind) {
  switch (kind) {
    case LossKind::bce: return bce_loss(logits, target);
    case LossKind::balanced_bce: return balanced_bce_loss(logits, target);
    case LossKind::iou: return iou_loss(logits, target);
    case LossKind::bce_plus_iou: return add(bce_loss(logits, target), iou_loss(logits, target));
  }
  throw std::invalid_argument("unknown loss kind");
}

double cosine_lr(double base, std::size_t t, std::size_t total) {
  if (total == 0 || t >= total) throw std::invalid_argument("cosine_lr: step must satisfy t < T");
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * double(t) / double(total)));
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, std::vector<bool> decay, AdamWConfig config)
    : params_(std::move(params)), decay_(std::move(decay)), config_(config) {
  if (decay_.size() != params_.size()) throw std::invalid_argument("AdamW: one decay flag per parameter");
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    dispatch(p.dtype(), [&]<class T>() {
      for (T g : p.grad_values<T>())
        if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient");
    });
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = decay_[k] ? config_.weight_decay : 0.0;
    dispatch(p.dtype(), [&]<class T>() {
      auto w = p.mutable_values<T>();
      auto g = p.grad_values<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double wi = double(w[i]);
        wi -= lr * decay * wi;
        m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * double(g[i]);
        v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * double(g[i]) * double(g[i]);
        wi -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
        w[i] = static_cast<T>(wi);
      }
    });
  }
}

// ---------------------------------------------------------------------------

ParamPartition partition(Strategy strategy, const ParamSpecs& specs) {
  std::vector<std::string> prefixes;
  switch (strategy) {
    case Strategy::full: prefixes = {""}; break;
    case Strategy::decoder: prefixes = {"decoder."}; break;
    case Strategy::vpt: prefixes = {"decoder.", "vpt."}; break;
    case Strategy::evp1:
    case Strategy::evp2: prefixes = {"decoder.", "prompt."}; break;
  }
  ParamPartition p;
  for (const auto& s : specs) {
    const bool tunable = std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& pre) { return starts_with(s.name, pre); });
    (tunable ? p.tunable : p.frozen).push_back(s.name);
  }
  return p;
}

ParamCount count_params(const ParamSpecs& specs, const ParamPartition& partition) {
  const std::set<std::string> tunable(partition.tunable.begin(), partition.tunable.end());
  ParamCount c;
  for (const auto& s : specs) {
    const std::size_t n = numel(s.shape);
    c.total += n;
    if (tunable.count(s.name)) c.tunable += n;
  }
  c.tunable_fraction = c.total ? double(c.tunable) / double(c.total) : 0.0;
  return c;
}

std::string to_json_line(const EpochRecord& r) {
  std::ostringstream s;
  s.precision(17);
  s << "{\"epoch\": " << r.epoch << ", \"loss\": " << r.loss << ", \"val_iou\": " << r.val_iou << ", \"lr\": " << r.lr
    << "}";
  return s.str();
}

// ---------------------------------------------------------------------------

Tensor stack_images(const std::vector<const Tensor*>& images, const std::vector<bool>& flips) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& im = *images[i];
    Shape s{1};
    s.insert(s.end(), im.shape().begin(), im.shape().end());
    const bool flip = !flips.empty() && flips[i];
    parts.push_back(reshape(flip ? flip_horizontal(im) : im, s));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

namespace {

Tensor hfc_of(const Segmenter& model, const Tensor& image) {
  NoGradGuard guard;
  return high_frequency(image, model.config().prompt.tau);
}

NamedTensors frozen_view(const ParameterStore& store, const std::vector<std::string>& names) {
  NamedTensors view;
  for (const auto& n : names) view.emplace_back(n, store.get(n));
  return view;
}

}  // namespace

std::vector<Tensor> predict(const Segmenter& model, const std::vector<Sample>& samples, std::size_t batch) {
  NoGradGuard guard;
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < samples.size(); b += batch) {
    const std::size_t e = std::min(samples.size(), b + batch);
    std::vector<const Tensor*> imgs;
    std::vector<Tensor> hfcs;
    for (std::size_t i = b; i < e; ++i) {
      imgs.push_back(&samples[i].image);
      if (model.needs_hfc()) hfcs.push_back(hfc_of(model, samples[i].image));
    }
    Tensor hfc_batch;
    if (model.needs_hfc()) {
      std::vector<const Tensor*> ptrs;
      for (const auto& h : hfcs) ptrs.push_back(&h);
      hfc_batch = stack_images(ptrs);
    }
    const Tensor probs = sigmoid(model.forward(stack_images(imgs), hfc_batch));
    const std::size_t h = probs.dim(1), w = probs.dim(2);
    for (std::size_t i = 0; i < e - b; ++i) out.push_back(reshape(slice(probs, 0, i, i + 1), {h, w}));
  }
  return out;
}

double mean_iou(const Segmenter& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  const auto probs = predict(model, samples);
  double s = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) s += iou(Map::from_tensor(probs[i]), Map::from_tensor(samples[i].mask));
  return s / double(samples.size());
}

TrainResult train(Segmenter& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const TrainOptions& options) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (config.batch_size == 0 || config.epochs == 0 || !(config.lr > 0)) {
    throw std::invalid_argument("train: batch size, epochs and lr must be positive");
  }
  ParameterStore& store = model.store();
  const ParamPartition part = partition(config.strategy, store.specs());
  store.set_trainable(part.tunable);

  TrainResult result;
  result.frozen_checksum = checksum(frozen_view(store, part.frozen));

  std::vector<Tensor> params;
  std::vector<bool> decay;
  for (const auto& name : part.tunable) {
    params.push_back(store.get(name));
    decay.push_back(store.spec(name).decay);
  }
  AdamW opt(params, decay);

  const std::size_t n = train_set.size(), batch = config.batch_size;
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total = config.steps ? config.steps : config.epochs * per_epoch;
  const std::size_t epochs = (total + per_epoch - 1) / per_epoch;

  std::vector<Tensor> hfc;
  if (model.needs_hfc()) {
    for (const auto& s : train_set) hfc.push_back(hfc_of(model, s.image));
  }
  // With only the decoder trainable, backbone features are fixed per
  // (sample, flip) and can be computed once.
  const bool cache_features = config.strategy == Strategy::decoder && !model.config().prompt.enabled() &&
                              model.config().vpt_tokens == 0;
  std::map<std::pair<std::size_t, bool>, std::vector<StageOutput>> feature_cache;

  Rng order_rng = Rng::derive(config.seed, "train/order");
  Rng flip_rng = Rng::derive(config.seed, "train/flip");
  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    double loss_sum = 0;
    std::size_t loss_count = 0;
    double lr = 0;
    for (std::size_t b = 0; b < n && t < total; b += batch, ++t) {
      const std::size_t e = std::min(n, b + batch);
      std::vector<const Tensor*> imgs, masks, hfcs;
      std::vector<bool> flips;
      for (std::size_t i = b; i < e; ++i) {
        imgs.push_back(&train_set[order[i]].image);
        masks.push_back(&train_set[order[i]].mask);
        if (!hfc.empty()) hfcs.push_back(&hfc[order[i]]);
        flips.push_back(flip_rng.coin());
      }
      try {
        const Tensor target = stack_images(masks, flips);
        Tensor logits;
        if (cache_features) {
          std::vector<std::vector<Tensor>> per_stage;
          for (std::size_t i = b; i < e; ++i) {
            auto key = std::make_pair(order[i], bool(flips[i - b]));
            auto it = feature_cache.find(key);
            if (it == feature_cache.end()) {
              NoGradGuard guard;
              const Tensor im = stack_images({imgs[i - b]}, {flips[i - b]});
              it = feature_cache.emplace(key, model.backbone().forward(im)).first;
            }
            per_stage.resize(it->second.size());
            for (std::size_t s = 0; s < it->second.size(); ++s) per_stage[s].push_back(it->second[s].tokens);
          }
          std::vector<StageOutput> feats;
          for (std::size_t s = 0; s < per_stage.size(); ++s) {
            feats.push_back({per_stage[s].size() == 1 ? per_stage[s][0] : concat(per_stage[s], 0),
                             feature_cache.begin()->second[s].grid});
          }
          logits = model.decoder().forward(feats);
        } else {
          const Tensor images = stack_images(imgs, flips);
          const Tensor hfc_batch = hfcs.empty() ? Tensor{} : stack_images(hfcs, flips);
          logits = model.forward(images, hfc_batch);
        }
        const Tensor loss = compute_loss(logits, target, config.loss);
        backward(loss);
        lr = cosine_lr(config.lr, t, total);
        opt.step(lr);
        store.clear_grads();
        loss_sum += loss.item();
        ++loss_count;
        if (options.on_step) options.on_step(t, loss.item());
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(t) + ": " + err.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_count ? loss_sum / double(loss_count) : 0.0;
    rec.val_iou = mean_iou(model, val_set);
    rec.lr = lr;
    if (checksum(frozen_view(store, part.frozen)) != result.frozen_checksum) {
      throw std::logic_error("train: frozen parameters changed during epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  result.steps = t;
  return result;
}

}  // namespace evp
