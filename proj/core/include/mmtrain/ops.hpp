#pragma once

#include "mmtrain/tensor.hpp"

namespace mmtrain::ops {

// Elementwise binary ops broadcast numpy-style (shapes aligned from the right,
// size-1 axes stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

/// a: [..., k], b: [k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

/// Concatenates along the last axis; leading axes must match.
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
/// Population variance (divides by the axis length).
Tensor variance(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// mean((a - b)^2) over all elements; shapes must match exactly.
Tensor mse(const Tensor& a, const Tensor& b);

/// x @ w + b, with b broadcast over the leading axes.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

}  // namespace mmtrain::ops
