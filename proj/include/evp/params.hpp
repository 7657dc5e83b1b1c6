#pragma once

// Named parameter tensors. Modules first describe their parameters as
// ParamSpecs (so counts can be computed without allocating anything), then
// the store materializes them with deterministic per-name initialization.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "evp/io.hpp"
#include "evp/tensor.hpp"

namespace evp {

enum class Init {
  zeros,
  ones,
  fan_in_uniform,  // U(−1/√fan_in, 1/√fan_in)
  small_normal,    // N(0, 0.02²), for embeddings and token banks
};

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::zeros;
  bool decay = false;  // AdamW weight decay applies (matrix weights only)
};

using ParamSpecs = std::vector<ParamSpec>;

/// Appends `prefix.w` [in, out] (decayed) and, optionally, `prefix.b` [out].
void add_linear(ParamSpecs& specs, const std::string& prefix, std::size_t in, std::size_t out,
                bool bias = true, Init weight_init = Init::fan_in_uniform);
/// Appends `prefix.g` (ones) and `prefix.b` (zeros).
void add_layernorm(ParamSpecs& specs, const std::string& prefix, std::size_t dim);

std::size_t count(const ParamSpecs& specs);
std::size_t count_prefix(const ParamSpecs& specs, std::string_view prefix);
bool starts_with(std::string_view name, std::string_view prefix);

class ParameterStore;

/// Handles to `prefix.w` and (if present) `prefix.b`.
struct Linear {
  Tensor w;
  Tensor b;
  static Linear bind(const ParameterStore& store, const std::string& prefix);
  Tensor operator()(const Tensor& x) const;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParamSpecs& specs, std::uint64_t seed, DType dtype = DType::f32);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ParamSpec& spec(const std::string& name) const;
  const ParamSpecs& specs() const { return specs_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  /// Copies values of every record whose name is in the store. Throws on a
  /// shape mismatch; with `require_all`, also when a store tensor under
  /// `prefix` is missing from the records.
  void load(const NamedTensors& records, std::string_view prefix = {}, bool require_all = true);
  /// Deep copy of all tensors whose names start with `prefix`, in store order.
  NamedTensors snapshot(std::string_view prefix = {}) const;
  std::uint64_t checksum(std::string_view prefix = {}) const;

  void set_trainable(const std::vector<std::string>& names);
  void clear_grads();

 private:
  ParamSpecs specs_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace evp
