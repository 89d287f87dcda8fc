#pragma once

#include <cstddef>
#include <span>

#include "vc/tensor.hpp"

namespace vc::ops {

// Elementwise arithmetic. Each dimension of the operands must either match or
// be 1 on one side (numpy-style broadcasting restricted to rank 3).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor silu(const Tensor& x);
Tensor exp(const Tensor& x);
// Gradient is zero where the input lies outside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t groups = 1;
};

// x [N, Cin, T], weight [Cout, Cin/groups, K], bias [1, Cout, 1] or undefined.
// Zero padding. Output length floor((T + pads - dilation*(K-1) - 1) / stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

// Mirror padding along time that keeps reflecting for pads longer than the input.
Tensor pad_reflect(const Tensor& x, std::size_t left, std::size_t right);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
// Non-overlapping mean pooling; the trailing partial window averages what it has.
Tensor avg_pool(const Tensor& x, std::size_t factor);
// [N, C, L] with L % period == 0 -> [N*period, C, L/period]; row j of the
// folded view holds samples j, j+period, j+2*period, ...
Tensor fold_period(const Tensor& x, std::size_t period);

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_time(const Tensor& x, std::size_t start, std::size_t length);
// Nearest-neighbour resampling of the time axis to `length` steps.
Tensor resample_time(const Tensor& x, std::size_t length);
// table [N, C, 1] -> row `index` as [1, C, 1].
Tensor select_row(const Tensor& table, std::size_t index);

// Normalizes over channels at each (n, t); gamma/beta are [1, C, 1].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Scaled dot-product self/cross attention over time. q, k, v are [N, C, T]
// with C divisible by `heads`; returns [N, C, Tq].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// First half of the channels gated by sigmoid of the second half.
Tensor glu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean((a - b)^2) and mean(|a - b|); shapes must match exactly.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);

// w[o] = g[o] * v[o] / ||v[o]||, v [Cout, Cin, K], g [Cout, 1, 1].
Tensor weight_norm(const Tensor& v, const Tensor& g);
// w / sigma with sigma = u' W v estimated by power iteration on the [Cout x Cin*K]
// matrix. `u` ([1, Cout, 1]) holds the persistent left singular vector estimate;
// it is refined in place only when `update` is set. Gradients treat u, v as constants.
Tensor spectral_normalize(const Tensor& w, Tensor& u, bool update);

}  // namespace vc::ops
