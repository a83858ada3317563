#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "csn/tensor.hpp"

namespace csn {

// Products and pointwise arithmetic ----------------------------------------

/// Batched matrix product over the last two axes. Leading (batch) extents
/// must match or be 1; a rank-2 operand broadcasts over every batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

// Binary ops accept equal shapes, a scalar (numel 1) operand, or an operand
// whose shape equals the trailing extents of the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// tanh approximation of the Gaussian error linear unit.
Tensor gelu(const Tensor& x);

/// Numerically stable softmax along the last axis.
Tensor softmax_lastdim(const Tensor& x);

// Reductions -----------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Arithmetic mean along `axis`; the axis is removed unless keepdim.
Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis, bool keepdim = false);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// Shape ops ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);

/// Sparse linear resampling along one axis: output position o is the sum of
/// weight * input[index] over taps[o]. Everything that moves values along the
/// time axis (pooling, smoothing, interpolation, padding, broadcast, slicing)
/// is expressed through one of these.
struct AxisMap {
  std::size_t in_len = 0;
  std::size_t out_len = 0;
  std::vector<std::size_t> offsets;  // out_len + 1 entries into index/weight
  std::vector<std::size_t> index;
  std::vector<double> weight;

  static AxisMap build(std::size_t in_len, const std::vector<std::vector<std::pair<std::size_t, double>>>& taps);
};

Tensor apply_axis_map(const Tensor& x, std::ptrdiff_t axis, const AxisMap& map);

/// Non-overlapping window means; a ragged tail is averaged over its own length.
Tensor avg_downsample(const Tensor& x, std::size_t factor, std::ptrdiff_t axis = -1);

/// Centered moving average with replicate padding of (kernel-1)/2 per side.
Tensor moving_average(const Tensor& x, std::size_t kernel, std::ptrdiff_t axis = -1);

/// Endpoint-aligned piecewise-linear resampling; new_len == 1 yields the mean.
Tensor linear_interp(const Tensor& x, std::size_t new_len, std::ptrdiff_t axis = -1);

/// Contiguous sub-range [start, start + length) along an axis.
Tensor narrow(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);

/// Repeats a length-1 axis `count` times.
Tensor expand_axis(const Tensor& x, std::ptrdiff_t axis, std::size_t count);

/// [B, T, D] -> [B, N, P, D] with N = ceil(T / P); the tail is padded by
/// repeating the final time step.
Tensor patchify(const Tensor& x, std::size_t patch_len);

/// [B, N, P, D] -> [B, T, D], dropping any padding beyond T.
Tensor unpatchify(const Tensor& patches, std::size_t seq_len);

/// Normalizes a possibly negative axis against `rank`.
std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank);

}  // namespace csn
