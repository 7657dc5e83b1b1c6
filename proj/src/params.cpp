#include "evp/params.hpp"

#include <cmath>
#include <stdexcept>

#include "evp/ops.hpp"
#include "evp/rng.hpp"

namespace evp {

void add_linear(ParamSpecs& specs, const std::string& prefix, std::size_t in, std::size_t out, bool bias,
                Init weight_init) {
  specs.push_back({prefix + ".w", {in, out}, weight_init, true});
  if (bias) specs.push_back({prefix + ".b", {out}, Init::zeros, false});
}

void add_layernorm(ParamSpecs& specs, const std::string& prefix, std::size_t dim) {
  specs.push_back({prefix + ".g", {dim}, Init::ones, false});
  specs.push_back({prefix + ".b", {dim}, Init::zeros, false});
}

Linear Linear::bind(const ParameterStore& store, const std::string& prefix) {
  Linear l{store.get(prefix + ".w"), {}};
  if (store.contains(prefix + ".b")) l.b = store.get(prefix + ".b");
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, w, b); }

std::size_t count(const ParamSpecs& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += numel(s.shape);
  return n;
}

bool starts_with(std::string_view name, std::string_view prefix) {
  return name.substr(0, prefix.size()) == prefix;
}

std::size_t count_prefix(const ParamSpecs& specs, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& s : specs)
    if (starts_with(s.name, prefix)) n += numel(s.shape);
  return n;
}

ParameterStore::ParameterStore(const ParamSpecs& specs, std::uint64_t seed, DType dtype) : specs_(specs) {
  tensors_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& s = specs[i];
    if (!index_.emplace(s.name, i).second) throw std::logic_error("duplicate parameter " + s.name);
    std::vector<double> v(numel(s.shape), 0.0);
    Rng rng = Rng::derive(seed, s.name);
    switch (s.init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case Init::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(double(s.shape.front()));
        for (double& x : v) x = rng.uniform(-bound, bound);
        break;
      }
      case Init::small_normal:
        for (double& x : v) x = 0.02 * rng.normal();
        break;
    }
    Tensor t = Tensor::from_values(s.shape, v, dtype);
    tensors_.push_back(t);
  }
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return tensors_[it->second];
}

const ParamSpec& ParameterStore::spec(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return specs_[it->second];
}

void ParameterStore::load(const NamedTensors& records, std::string_view prefix, bool require_all) {
  std::map<std::string_view, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name[name] = &t;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const std::string& name = specs_[i].name;
    if (!starts_with(name, prefix)) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (require_all) throw std::runtime_error("checkpoint is missing " + name);
      continue;
    }
    const Tensor& src = *it->second;
    Tensor& dst = tensors_[i];
    if (src.shape() != dst.shape()) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + to_string(src.shape()) +
                           ", model expects " + to_string(dst.shape()));
    }
    const Tensor converted = src.to(dst.dtype());
    dispatch(dst.dtype(), [&]<class T>() {
      auto s = converted.values<T>();
      std::copy(s.begin(), s.end(), dst.mutable_values<T>().begin());
    });
  }
}

NamedTensors ParameterStore::snapshot(std::string_view prefix) const {
  NamedTensors out;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (starts_with(specs_[i].name, prefix)) out.emplace_back(specs_[i].name, tensors_[i].detach());
  }
  return out;
}

std::uint64_t ParameterStore::checksum(std::string_view prefix) const {
  NamedTensors view;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (starts_with(specs_[i].name, prefix)) view.emplace_back(specs_[i].name, tensors_[i]);
  }
  return evp::checksum(view);
}

void ParameterStore::set_trainable(const std::vector<std::string>& names) {
  for (Tensor& t : tensors_) {
    t.clear_grad();
    t.set_requires_grad(false);
  }
  for (const auto& n : names) tensors_[index_.at(n)].set_requires_grad(true);
}

void ParameterStore::clear_grads() {
  for (Tensor& t : tensors_) t.clear_grad();
}

}  // namespace evp
