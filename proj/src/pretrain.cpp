#include "evp/pretrain.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

#include "evp/ops.hpp"
#include "evp/params.hpp"
#include "evp/rng.hpp"
#include "evp/training.hpp"

namespace evp {

namespace {

// Pixels per token side of the last stage.
std::size_t total_stride(const BackboneConfig& config) {
  std::size_t s = 1;
  for (const auto& st : config.stages) s *= st.patch;
  return s;
}

}  // namespace

PretrainResult pretrain(const BackboneConfig& config, const std::vector<Sample>& data, const PretrainConfig& options,
                        const std::function<void(std::size_t, double)>& on_step) {
  if (data.empty()) throw std::invalid_argument("pretrain: empty dataset");
  if (options.steps == 0 || options.batch_size == 0) throw std::invalid_argument("pretrain: steps and batch must be positive");
  config.validate();
  const std::size_t stride = total_stride(config);
  const std::size_t c = config.in_channels;

  ParamSpecs specs;
  Backbone::specs(config, specs);
  add_linear(specs, "pretext.head", config.stages.back().dim, stride * stride * c);
  ParameterStore store(specs, options.seed);
  std::vector<std::string> names;
  for (const auto& s : specs) names.push_back(s.name);
  store.set_trainable(names);
  const Backbone backbone(config, store);
  const Linear head = Linear::bind(store, "pretext.head");

  std::vector<Tensor> params;
  std::vector<bool> decay;
  for (const auto& s : specs) {
    params.push_back(store.get(s.name));
    decay.push_back(s.decay);
  }
  AdamW opt(params, decay);

  Rng order_rng = Rng::derive(options.seed, "pretrain/order");
  Rng noise_rng = Rng::derive(options.seed, "pretrain/noise");
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();

  PretrainResult result;
  for (std::size_t t = 0; t < options.steps; ++t) {
    std::vector<const Tensor*> imgs;
    for (std::size_t i = 0; i < options.batch_size && i < data.size(); ++i) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order);
        cursor = 0;
      }
      imgs.push_back(&data[order[cursor++]].image);
    }
    const Tensor clean = stack_images(imgs);
    std::vector<double> noise(clean.numel());
    for (double& v : noise) v = options.noise * noise_rng.normal();
    const Tensor noisy = add(clean, Tensor::from_values(clean.shape(), noise, clean.dtype()));

    const Tensor tokens = backbone.forward(noisy).back().tokens;
    const Tensor recon = head(tokens);
    const Tensor target =
        patchify(to_channels_last(clean), Grid{config.image_h, config.image_w}, PatchSpec{stride, stride, 0});
    Tensor loss;
    try {
      loss = mse_loss(recon, target);
      backward(loss);
      opt.step(cosine_lr(options.lr, t, options.steps));
    } catch (const NumericError& e) {
      throw NumericError("pretrain step " + std::to_string(t) + ": " + e.what());
    }
    store.clear_grads();
    result.losses.push_back(loss.item());
    if (on_step) on_step(t, loss.item());
  }
  result.backbone = store.snapshot("backbone.");
  return result;
}

}  // namespace evp
