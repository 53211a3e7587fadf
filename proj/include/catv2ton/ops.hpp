#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "catv2ton/tensor.hpp"

namespace catv2ton {

// Differentiable kernels. Every function here records onto the tape when an
// input requires a gradient and recording is enabled.

/// a[m,k] · b[k,n] -> [m,n]. Throws DimensionError naming both shapes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[n,in] · w[in,out] + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[n,d] + row[d] broadcast over the n rows (row may also be shaped [1,d]).
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& row);

/// GELU with the exact erf form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Normalizes over the last axis; gamma and beta have the last axis' extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

/// Rows [begin, end) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// mean((a - b)^2) as a scalar.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// Per-token (frame, row, col) coordinates consumed by rotary embeddings.
using TokenPosition = std::array<int, 3>;

/// How a head's channels are split across the three rotary axes. Each group
/// must be even; the three must sum to the head dimension.
struct RopeSplit {
  std::size_t temporal = 0;
  std::size_t row = 0;
  std::size_t col = 0;

  std::size_t total() const { return temporal + row + col; }
};

/// Rotates channel pairs of x[tokens, heads*head_dim] per head. Pair i of an
/// axis group of size g is rotated by pos * base^(-2i/g).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t heads, const std::vector<TokenPosition>& positions,
               const RopeSplit& split, double base = 10000.0);

/// Multi-head scaled dot-product attention over full (non-causal) sequences.
/// q, k, v are [tokens, heads*head_dim]; the result has the same shape.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads);

/// Attention probabilities [heads, tokens, tokens], never recorded.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads);

/// Concatenates rank-2 tensors with equal column count along rows.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

}  // namespace catv2ton
