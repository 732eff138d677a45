#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "nodulebench/tensor/rng.hpp"
#include "nodulebench/tensor/tensor.hpp"

namespace nb {

// Elementwise. Operands must have equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

/// x[m×n] + b[n] broadcast over rows (also accepts x as a flat vector of n).
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of x[m×n] -> [1×n].
Tensor mean_rows(const Tensor& x);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Row-wise softmax of x[m×n]; a rank-1 input is treated as one row.
Tensor softmax_rows(const Tensor& x);

/// -log softmax(logits)[target]; logits are flattened to K entries.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---- volumetric ops; layout is [C, D, H, W] ----

/// Output extent of a convolution along one axis; 0 when no placement fits.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation of input[C_in, D, H, W] with kernel[C_out, C_in, k, k, k].
Tensor conv3d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

/// Non-overlapping average pooling with a cubic window.
Tensor avg_pool3d(const Tensor& input, std::size_t window);

/// Sub-volume [C, d, h, w] starting at (z, y, x).
Tensor crop3d(const Tensor& input, std::array<std::size_t, 3> origin, std::array<std::size_t, 3> extent);

/// Writes each part into its octant-style slot of a larger grid; parts are
/// [C, d, h, w] and `grid` gives how many parts tile each axis (z-major order).
Tensor assemble3d(const std::vector<Tensor>& parts, std::array<std::size_t, 3> grid);

/// Group normalization over x[C, ...]: each group of C/groups channels is
/// standardized over its channels and all trailing positions, then scaled by
/// gain[C] and shifted by bias[C].
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// group_norm applied independently to every row of x[T×d].
Tensor row_group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);

/// Mean over channels of x[C, ...] -> [...].
Tensor channel_mean(const Tensor& x);
/// Mean over trailing positions of x[C, ...] -> [C].
Tensor spatial_mean(const Tensor& x);
/// x[C, ...] * map[...] broadcast over channels.
Tensor weight_spatial(const Tensor& x, const Tensor& map);

/// a / max(a); all-zero (or non-positive peak) input maps to zeros.
Tensor peak_normalize(const Tensor& a);
/// sign(x) * (sqrt(|x| + 1e-8) - 1e-4); continuous and exactly 0 at 0.
Tensor signed_sqrt(const Tensor& x);
/// x / max(||x||_2, 1e-12).
Tensor l2_normalize(const Tensor& x);

}  // namespace nb
