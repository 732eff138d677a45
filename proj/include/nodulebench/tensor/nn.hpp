#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nodulebench/tensor/ops.hpp"

namespace nb {

/// Ordered registry of named trainable leaves. Names are dotted paths whose
/// first component is the parameter group ("global", "local", "fusion").
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor uniform_fan_in(const std::string& name, Shape shape, std::size_t fan_in);
  /// N(0, sd^2); used for token and positional embeddings.
  Tensor normal(const std::string& name, Shape shape, double sd);
  Tensor constant(const std::string& name, Shape shape, double value);

  Tensor add(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  /// Parameters whose name starts with `prefix`.
  std::vector<Tensor> with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  Rng rng_for(const std::string& name) const;

  std::uint64_t seed_;
  std::vector<std::pair<std::string, Tensor>> items_;
};

/// y = x W + b with W stored [in × out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  /// x is [T × in] or a flat vector of `in` values (returned as [1 × out]).
  Tensor operator()(const Tensor& x) const;
};

/// Per-channel affine parameters of a group normalization.
struct GroupNorm {
  Tensor gain;
  Tensor bias;
  std::size_t groups = 1;

  /// groups = min(8, channels).
  static GroupNorm create(ParameterSet& params, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gain, bias); }
  Tensor rows(const Tensor& x) const { return row_group_norm(x, groups, gain, bias); }
};

struct Conv3d {
  Tensor kernel;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv3d create(ParameterSet& params, const std::string& name, std::size_t in_channels,
                       std::size_t out_channels, std::size_t kernel_size, std::size_t stride, std::size_t padding);
  Tensor operator()(const Tensor& x) const { return conv3d(x, kernel, stride, padding); }
};

/// softmax(q k^T / sqrt(d)) v for q,k,v [T × d]; also returns the weights.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights = nullptr);

/// Splits q,k,v [T × d] into `heads` column blocks, attends per head,
/// concatenates and applies `out_proj`.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const Linear& out_proj);

}  // namespace nb
