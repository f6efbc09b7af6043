// Copyright 2026 The siitbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "siit/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops accept equal shapes
// or a right operand whose shape is a suffix of the left operand's shape (it is
// repeated over the leading dimensions). No other broadcasting is performed.
namespace siit::ops {

// (..., M, K) x (K, N) -> (..., M, N), or batched (B..., M, K) x (B..., K, N).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Throws DomainError on a zero divisor.
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
// Throws DomainError on non-positive entries.
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Over the last dimension.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// (x - mean) / sqrt(var + eps) over the last dimension.
Tensor layer_stats(const Tensor& a, double eps = 1e-5);

Tensor reshape(const Tensor& a, Shape shape);
// Swaps the last two dimensions.
Tensor transpose(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduces the last dimension away.
Tensor sum_last(const Tensor& a);

// a: (..., V); picks a[..., index[r]] for every leading row r -> (...).
Tensor gather_last(const Tensor& a, std::span<const int> index);
// table: (V, D); ids index rows -> prefix + (D,).
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& prefix);

// Entries whose (suffix-broadcast) mask is non-zero become `value`; their
// gradient is zero.
Tensor mask_fill(const Tensor& a, const Shape& mask_shape, std::span<const std::uint8_t> mask,
                 double value);

// Fresh tape node holding the same values (gives a tensor its own gradient slot).
Tensor identity(const Tensor& a);

}  // namespace siit::ops
