#include "nodulebench/tensor/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nb {

Rng ParameterSet::rng_for(const std::string& name) const { return Rng(seed_ ^ fnv1a64(name)); }

Tensor ParameterSet::uniform_fan_in(const std::string& name, Shape shape, std::size_t fan_in) {
  auto rng = rng_for(name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> values(numel_of(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParameterSet::normal(const std::string& name, Shape shape, double sd) {
  auto rng = rng_for(name);
  std::vector<double> values(numel_of(shape));
  for (double& v : values) v = rng.normal(0.0, sd);
  return add(name, Tensor::from(std::move(shape), std::move(values), true));
}

Tensor ParameterSet::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParameterSet::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  items_.emplace_back(name, tensor);
  return tensor;
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& kv) { return kv.first == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

std::vector<Tensor> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : items_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(t);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = params.uniform_fan_in(name + ".weight", {in, out}, in);
  l.bias = params.constant(name + ".bias", {out}, 0.0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  const Tensor rows = x.rank() == 2 ? x : reshape(x, {1, x.numel()});
  return add_row_bias(matmul(rows, weight), bias);
}

GroupNorm GroupNorm::create(ParameterSet& params, const std::string& name, std::size_t channels) {
  GroupNorm n;
  n.gain = params.constant(name + ".gain", {channels}, 1.0);
  n.bias = params.constant(name + ".bias", {channels}, 0.0);
  n.groups = std::min<std::size_t>(8, channels);
  while (channels % n.groups != 0) --n.groups;
  return n;
}

Conv3d Conv3d::create(ParameterSet& params, const std::string& name, std::size_t in_channels,
                      std::size_t out_channels, std::size_t kernel_size, std::size_t stride, std::size_t padding) {
  Conv3d c;
  c.kernel = params.uniform_fan_in(name + ".kernel", {out_channels, in_channels, kernel_size, kernel_size, kernel_size},
                                   in_channels * kernel_size * kernel_size * kernel_size);
  c.stride = stride;
  c.padding = padding;
  return c;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw std::invalid_argument("attention: q, k, v must share one [T x d] shape");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor w = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  if (weights) *weights = w;
  return matmul(w, v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const Linear& out_proj) {
  if (q.rank() != 2) throw std::invalid_argument("multi_head_attention: expected [T x d] inputs");
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = d / heads;
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outputs.push_back(scaled_dot_product_attention(slice_cols(q, h * head_dim, head_dim),
                                                   slice_cols(k, h * head_dim, head_dim),
                                                   slice_cols(v, h * head_dim, head_dim)));
  }
  return out_proj(heads == 1 ? outputs.front() : concat_cols(outputs));
}

}  // namespace nb
