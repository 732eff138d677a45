#include "nodulebench/tensor/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace nb {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;

// Gradient buffer of the i-th input, or nullptr when it does not need one.
double* input_grad(detail::Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.grad_buffer().data();
}

const std::vector<double>& input_value(detail::Node& self, std::size_t i) { return self.inputs[i]->value; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(t.shape()));
  }
}

std::size_t trailing(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("expected at least one axis");
  return x.numel() / x.dim(0);
}

Shape trailing_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (av[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * std::numbers::sqrt2 / 2.0));
  return make_result("gelu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    if (double* g = input_grad(self, 0)) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double x = av[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        g[i] += self.grad[i] * (cdf + x * pdf);
      }
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = bias.numel();
  if (n == 0 || x.numel() % n != 0 || x.shape().back() != n) {
    throw std::invalid_argument("add_row_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % n];
  return make_result("add_row_bias", x.shape(), std::move(out), {x, bias}, [n](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MapM(out.data(), m, n).noalias() = CMapM(a.values().data(), m, k) * CMapM(b.values().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    CMapM g(self.grad.data(), m, n);
    if (double* ga = input_grad(self, 0)) {
      MapM(ga, m, k).noalias() += g * CMapM(input_value(self, 1).data(), k, n).transpose();
    }
    if (double* gb = input_grad(self, 1)) {
      MapM(gb, k, n).noalias() += CMapM(input_value(self, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MapM(out.data(), n, m) = CMapM(a.values().data(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      MapM(g, m, n) += CMapM(self.grad.data(), n, m).transpose();
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", {1}, {s}, {a}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& x) {
  require_rank("mean_rows", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += x[i * n + j];
  }
  for (double& v : out) v /= static_cast<double>(m);
  return make_result("mean_rows", {1, n}, std::move(out), {x}, [m, n](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const double w = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * w;
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_rows", x, 2);
  const std::size_t n = x.dim(1);
  if (count == 0 || start + count > x.dim(0)) throw std::out_of_range("slice_rows: range outside " + shape_str(x.shape()));
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(start * n),
                          x.values().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make_result("slice_rows", {count, n}, std::move(out), {x}, [start, n](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t n = parts.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.shape().back() != n || p.numel() % n != 0) {
      throw std::invalid_argument("concat_rows: width mismatch " + shape_str(p.shape()));
    }
    offsets.push_back(rows * n);
    rows += p.numel() / n;
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result("concat_rows", {rows, n}, std::move(out), parts, [offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (double* g = input_grad(self, k)) {
        const std::size_t len = self.inputs[k]->value.size();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offsets[k] + i];
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_cols", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n) throw std::out_of_range("slice_cols: range outside " + shape_str(x.shape()));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * n + start + j];
  }
  return make_result("slice_cols", {m, count}, std::move(out), {x}, [m, n, start, count](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t m = parts.front().dim(0);
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.dim(0) != m) throw std::invalid_argument("concat_cols: row count mismatch");
    offsets.push_back(n);
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) out[i * n + offsets[k] + j] = parts[k][i * w + j];
    }
  }
  return make_result("concat_cols", {m, n}, std::move(out), parts, [offsets, m, n](detail::Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (double* g = input_grad(self, k)) {
        const std::size_t w = self.inputs[k]->shape[1];
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + offsets[k] + j];
        }
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make_result("softmax_rows", x.shape(), std::move(out), {x}, [m, n](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.value.data() + i * n;
        const double* gy = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
      }
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  const std::size_t k = logits.numel();
  if (target >= k) {
    throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target) + " outside " +
                            std::to_string(k) + " classes");
  }
  const auto v = logits.values();
  const auto top = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  const double mx = v[top];
  std::vector<double> probs(k);
  // log(1 + rest) via log1p keeps confident losses accurate.
  double rest = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    probs[j] = std::exp(v[j] - mx);
    if (j != top) rest += probs[j];
  }
  for (double& p : probs) p /= 1.0 + rest;
  const double loss = std::log1p(rest) + (mx - v[target]);
  return make_result("softmax_cross_entropy", {1}, {loss}, {logits},
                     [probs = std::move(probs), target](detail::Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t j = 0; j < probs.size(); ++j) {
                           g[j] += self.grad[0] * (probs[j] - (j == target ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep = 1.0 - p;
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    out[i] = x[i] * mask[i];
  }
  return make_result("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
    }
  });
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  const std::size_t padded = input + 2 * padding;
  if (padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank("conv3d input", input, 4);
  require_rank("conv3d kernel", kernel, 5);
  const std::size_t ci = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != ci || kernel.dim(3) != k || kernel.dim(4) != k) {
    throw std::invalid_argument("conv3d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                                shape_str(input.shape()));
  }
  const std::size_t od = conv_output_extent(d, k, stride, padding);
  const std::size_t oh = conv_output_extent(h, k, stride, padding);
  const std::size_t ow = conv_output_extent(w, k, stride, padding);
  if (od == 0 || oh == 0 || ow == 0) {
    throw std::invalid_argument("conv3d: non-positive output extent for input " + shape_str(input.shape()));
  }
  const std::size_t positions = od * oh * ow;
  const std::size_t rows = ci * k * k * k;
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto s = static_cast<std::ptrdiff_t>(stride);

  // cols[r, p] with r = ((c*k + kd)*k + kh)*k + kw and p = output voxel.
  auto cols = std::make_shared<std::vector<double>>(rows * positions, 0.0);
  const double* x = input.values().data();
  std::size_t r = 0;
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++r) {
          double* row = cols->data() + r * positions;
          for (std::size_t z = 0; z < od; ++z) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z) * s + static_cast<std::ptrdiff_t>(kd) - pad;
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(d)) continue;
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * s + static_cast<std::ptrdiff_t>(kh) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const double* src = x + ((c * d + static_cast<std::size_t>(iz)) * h + static_cast<std::size_t>(iy)) * w;
              double* dst = row + (z * oh + y) * ow;
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * s + static_cast<std::ptrdiff_t>(kw) - pad;
                if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[xo] = src[ix];
              }
            }
          }
        }
      }
    }
  }
  std::vector<double> out(co * positions);
  MapM(out.data(), co, positions).noalias() =
      CMapM(kernel.values().data(), co, rows) * CMapM(cols->data(), rows, positions);

  return make_result(
      "conv3d", {co, od, oh, ow}, std::move(out), {input, kernel},
      [cols, ci, d, h, w, co, k, od, oh, ow, rows, positions, pad, s](detail::Node& self) {
        CMapM g(self.grad.data(), co, positions);
        if (double* gk = input_grad(self, 1)) {
          MapM(gk, co, rows).noalias() += g * CMapM(cols->data(), rows, positions).transpose();
        }
        if (double* gx = input_grad(self, 0)) {
          std::vector<double> dcols(rows * positions);
          MapM(dcols.data(), rows, positions).noalias() =
              CMapM(input_value(self, 1).data(), co, rows).transpose() * g;
          std::size_t rr = 0;
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t kd = 0; kd < k; ++kd) {
              for (std::size_t kh = 0; kh < k; ++kh) {
                for (std::size_t kw = 0; kw < k; ++kw, ++rr) {
                  const double* row = dcols.data() + rr * positions;
                  for (std::size_t z = 0; z < od; ++z) {
                    const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z) * s + static_cast<std::ptrdiff_t>(kd) - pad;
                    if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(d)) continue;
                    for (std::size_t y = 0; y < oh; ++y) {
                      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) * s + static_cast<std::ptrdiff_t>(kh) - pad;
                      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                      double* dst = gx + ((c * d + static_cast<std::size_t>(iz)) * h + static_cast<std::size_t>(iy)) * w;
                      const double* src = row + (z * oh + y) * ow;
                      for (std::size_t xo = 0; xo < ow; ++xo) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo) * s + static_cast<std::ptrdiff_t>(kw) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[xo];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor avg_pool3d(const Tensor& input, std::size_t window) {
  require_rank("avg_pool3d", input, 4);
  const std::size_t c = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window == 0 || d % window || h % window || w % window) {
    throw std::invalid_argument("avg_pool3d: window does not tile " + shape_str(input.shape()));
  }
  const std::size_t od = d / window, oh = h / window, ow = w / window;
  const double norm = 1.0 / static_cast<double>(window * window * window);
  std::vector<double> out(c * od * oh * ow, 0.0);
  const double* x = input.values().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < d; ++z) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xi = 0; xi < w; ++xi) {
          out[((ch * od + z / window) * oh + y / window) * ow + xi / window] += x[((ch * d + z) * h + y) * w + xi] * norm;
        }
      }
    }
  }
  return make_result("avg_pool3d", {c, od, oh, ow}, std::move(out), {input},
                     [c, d, h, w, od, oh, ow, window, norm](detail::Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           for (std::size_t z = 0; z < d; ++z) {
                             for (std::size_t y = 0; y < h; ++y) {
                               for (std::size_t xi = 0; xi < w; ++xi) {
                                 g[((ch * d + z) * h + y) * w + xi] +=
                                     self.grad[((ch * od + z / window) * oh + y / window) * ow + xi / window] * norm;
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor crop3d(const Tensor& input, std::array<std::size_t, 3> origin, std::array<std::size_t, 3> extent) {
  require_rank("crop3d", input, 4);
  const std::size_t c = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (origin[0] + extent[0] > d || origin[1] + extent[1] > h || origin[2] + extent[2] > w) {
    throw std::out_of_range("crop3d: window outside " + shape_str(input.shape()));
  }
  const auto [ed, eh, ew] = extent;
  const auto [oz, oy, ox] = origin;
  std::vector<double> out(c * ed * eh * ew);
  const double* x = input.values().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < ed; ++z) {
      for (std::size_t y = 0; y < eh; ++y) {
        const double* src = x + ((ch * d + oz + z) * h + oy + y) * w + ox;
        std::copy(src, src + ew, out.begin() + static_cast<std::ptrdiff_t>(((ch * ed + z) * eh + y) * ew));
      }
    }
  }
  return make_result("crop3d", {c, ed, eh, ew}, std::move(out), {input},
                     [c, d, h, w, ed, eh, ew, oz, oy, ox](detail::Node& self) {
                       if (double* g = input_grad(self, 0)) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           for (std::size_t z = 0; z < ed; ++z) {
                             for (std::size_t y = 0; y < eh; ++y) {
                               double* dst = g + ((ch * d + oz + z) * h + oy + y) * w + ox;
                               const double* src = self.grad.data() + ((ch * ed + z) * eh + y) * ew;
                               for (std::size_t xi = 0; xi < ew; ++xi) dst[xi] += src[xi];
                             }
                           }
                         }
                       }
                     });
}

Tensor assemble3d(const std::vector<Tensor>& parts, std::array<std::size_t, 3> grid) {
  if (parts.size() != grid[0] * grid[1] * grid[2] || parts.empty()) {
    throw std::invalid_argument("assemble3d: part count does not match grid");
  }
  const Shape part_shape = parts.front().shape();
  if (part_shape.size() != 4) throw std::invalid_argument("assemble3d: parts must be [C, d, h, w]");
  for (const auto& p : parts) {
    if (p.shape() != part_shape) throw std::invalid_argument("assemble3d: parts differ in shape");
  }
  const std::size_t c = part_shape[0], pd = part_shape[1], ph = part_shape[2], pw = part_shape[3];
  const std::size_t d = pd * grid[0], h = ph * grid[1], w = pw * grid[2];
  std::vector<double> out(c * d * h * w);
  auto index = [=](std::size_t part, std::size_t ch, std::size_t z, std::size_t y, std::size_t x) {
    const std::size_t gz = part / (grid[1] * grid[2]);
    const std::size_t gy = (part / grid[2]) % grid[1];
    const std::size_t gx = part % grid[2];
    return ((ch * d + gz * pd + z) * h + gy * ph + y) * w + gx * pw + x;
  };
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::size_t i = 0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t z = 0; z < pd; ++z)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x) out[index(p, ch, z, y, x)] = parts[p][i++];
  }
  return make_result("assemble3d", {c, d, h, w}, std::move(out), parts, [=](detail::Node& self) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      if (double* g = input_grad(self, p)) {
        std::size_t i = 0;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t z = 0; z < pd; ++z)
            for (std::size_t y = 0; y < ph; ++y)
              for (std::size_t x = 0; x < pw; ++x) g[i++] += self.grad[index(p, ch, z, y, x)];
      }
    }
  });
}

namespace {

// Shared group-norm kernel over `samples` independent blocks of [C, S].
Tensor group_norm_blocks(const char* op, const Tensor& x, std::size_t samples, std::size_t channels,
                         std::size_t positions, std::size_t groups, const Tensor& gain, const Tensor& bias,
                         double eps) {
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument(std::string(op) + ": channel count " + std::to_string(channels) +
                                " not divisible by groups " + std::to_string(groups));
  }
  if (gain.numel() != channels || bias.numel() != channels) {
    throw std::invalid_argument(std::string(op) + ": gain/bias must have one entry per channel");
  }
  const std::size_t per_group = channels / groups;
  const std::size_t group_size = per_group * positions;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(samples * groups);
  std::vector<double> out(x.numel());
  const double* xv = x.values().data();
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (s * channels + g * per_group) * positions;
      double mu = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) mu += xv[base + i];
      mu /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
      var /= static_cast<double>(group_size);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_std)[s * groups + g] = inv;
      for (std::size_t i = 0; i < group_size; ++i) {
        const std::size_t ch = g * per_group + i / positions;
        const double xh = (xv[base + i] - mu) * inv;
        (*xhat)[base + i] = xh;
        out[base + i] = xh * gain[ch] + bias[ch];
      }
    }
  }
  return make_result(op, x.shape(), std::move(out), {x, gain, bias},
                     [=](detail::Node& self) {
                       const auto& gv = input_value(self, 1);
                       double* gx = input_grad(self, 0);
                       double* ggain = input_grad(self, 1);
                       double* gbias = input_grad(self, 2);
                       for (std::size_t s = 0; s < samples; ++s) {
                         for (std::size_t g = 0; g < groups; ++g) {
                           const std::size_t base = (s * channels + g * per_group) * positions;
                           double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                           for (std::size_t i = 0; i < group_size; ++i) {
                             const std::size_t ch = g * per_group + i / positions;
                             const double gy = self.grad[base + i];
                             const double xh = (*xhat)[base + i];
                             if (ggain) ggain[ch] += gy * xh;
                             if (gbias) gbias[ch] += gy;
                             const double dxh = gy * gv[ch];
                             mean_dxh += dxh;
                             mean_dxh_xh += dxh * xh;
                           }
                           if (!gx) continue;
                           mean_dxh /= static_cast<double>(group_size);
                           mean_dxh_xh /= static_cast<double>(group_size);
                           const double inv = (*inv_std)[s * groups + g];
                           for (std::size_t i = 0; i < group_size; ++i) {
                             const std::size_t ch = g * per_group + i / positions;
                             const double dxh = self.grad[base + i] * gv[ch];
                             gx[base + i] += inv * (dxh - mean_dxh - (*xhat)[base + i] * mean_dxh_xh);
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias, double eps) {
  return group_norm_blocks("group_norm", x, 1, x.dim(0), trailing(x), groups, gain, bias, eps);
}

Tensor row_group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank("row_group_norm", x, 2);
  const std::size_t d = x.dim(1);
  return group_norm_blocks("row_group_norm", x, x.dim(0), d, 1, groups, gain, bias, eps);
}

Tensor channel_mean(const Tensor& x) {
  const std::size_t c = x.dim(0), s = trailing(x);
  std::vector<double> out(s, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < s; ++i) out[i] += x[ch * s + i];
  }
  for (double& v : out) v /= static_cast<double>(c);
  Shape shape = trailing_shape(x);
  if (shape.empty()) shape = {1};
  return make_result("channel_mean", std::move(shape), std::move(out), {x}, [c, s](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const double w = 1.0 / static_cast<double>(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < s; ++i) g[ch * s + i] += self.grad[i] * w;
      }
    }
  });
}

Tensor spatial_mean(const Tensor& x) {
  const std::size_t c = x.dim(0), s = trailing(x);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s; ++i) acc += x[ch * s + i];
    out[ch] = acc / static_cast<double>(s);
  }
  return make_result("spatial_mean", {c}, std::move(out), {x}, [c, s](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const double w = 1.0 / static_cast<double>(s);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < s; ++i) g[ch * s + i] += self.grad[ch] * w;
      }
    }
  });
}

Tensor weight_spatial(const Tensor& x, const Tensor& map) {
  const std::size_t c = x.dim(0), s = trailing(x);
  if (map.numel() != s) {
    throw std::invalid_argument("weight_spatial: map " + shape_str(map.shape()) + " does not match " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < s; ++i) out[ch * s + i] = x[ch * s + i] * map[i];
  }
  return make_result("weight_spatial", x.shape(), std::move(out), {x, map}, [c, s](detail::Node& self) {
    const auto& xv = input_value(self, 0);
    const auto& mv = input_value(self, 1);
    if (double* g = input_grad(self, 0)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < s; ++i) g[ch * s + i] += self.grad[ch * s + i] * mv[i];
      }
    }
    if (double* g = input_grad(self, 1)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < s; ++i) g[i] += self.grad[ch * s + i] * xv[ch * s + i];
      }
    }
  });
}

Tensor peak_normalize(const Tensor& a) {
  const auto v = a.values();
  const auto peak_it = std::max_element(v.begin(), v.end());
  const double peak = *peak_it;
  const auto arg = static_cast<std::size_t>(peak_it - v.begin());
  if (peak <= 1e-12) {
    return make_result("peak_normalize", a.shape(), std::vector<double>(a.numel(), 0.0), {a}, [](detail::Node&) {});
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / peak;
  return make_result("peak_normalize", a.shape(), std::move(out), {a}, [peak, arg](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const auto& av = input_value(self, 0);
      double dot = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) {
        g[i] += self.grad[i] / peak;
        dot += self.grad[i] * av[i];
      }
      g[arg] -= dot / (peak * peak);
    }
  });
}

Tensor signed_sqrt(const Tensor& x) {
  constexpr double kEps = 1e-8;
  const double offset = std::sqrt(kEps);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    const double mag = std::sqrt(std::abs(v) + kEps) - offset;
    out[i] = v > 0.0 ? mag : (v < 0.0 ? -mag : 0.0);
  }
  return make_result("signed_sqrt", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      const auto& xv = input_value(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += self.grad[i] * 0.5 / std::sqrt(std::abs(xv[i]) + kEps);
    }
  });
}

Tensor l2_normalize(const Tensor& x) {
  constexpr double kFloor = 1e-12;
  double sq = 0.0;
  for (double v : x.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  const double denom = std::max(norm, kFloor);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / denom;
  const bool clamped = norm < kFloor;
  return make_result("l2_normalize", x.shape(), std::move(out), {x}, [denom, clamped](detail::Node& self) {
    if (double* g = input_grad(self, 0)) {
      if (clamped) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / denom;
        return;
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.value[i];
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += (self.grad[i] - self.value[i] * dot) / denom;
    }
  });
}

}  // namespace nb
