#pragma once

#include <vector>

#include "voltcast/rng.hpp"
#include "voltcast/tensor.hpp"

namespace voltcast {

// Differentiable operations. Each records its backward rule on the tape when
// it is recording and any input requires a gradient.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
// [... x d] + [d], the vector broadcast over leading rows
Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& v);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T, the attention-scores shape
Tensor matmul_bt(Tape& tape, const Tensor& a, const Tensor& b);

// axis may be negative (python-style); -1 is the last axis
Tensor softmax(Tape& tape, const Tensor& x, int axis = -1);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias);

// x[L x d_in], w[kw x d_in x d_out], b[d_out]; pad is per side
Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad);
Tensor max_pool1d(Tape& tape, const Tensor& x, std::size_t width = 3,
                  std::size_t stride = 2, std::size_t pad = 1);
std::size_t pooled_len(std::size_t len, std::size_t width = 3,
                       std::size_t stride = 2, std::size_t pad = 1);

Tensor gelu(Tape& tape, const Tensor& x);
Tensor elu(Tape& tape, const Tensor& x, double alpha = 1.0);
// Inverted dropout; identity when rate == 0
Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng& rng);

Tensor sum_all(Tape& tape, const Tensor& x);
Tensor mean_all(Tape& tape, const Tensor& x);
// mean((pred - target)^2) over all elements
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target);

// Row/column surgery on rank-2 tensors.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor gather_rows(Tape& tape, const Tensor& x, std::vector<std::size_t> idx);
// out = base with out[idx[i], :] = rows[i, :]
Tensor scatter_rows(Tape& tape, const Tensor& base, const Tensor& rows,
                    std::vector<std::size_t> idx);
Tensor mean_over_rows(Tape& tape, const Tensor& x);  // [L x d] -> [d]
Tensor broadcast_row(Tape& tape, const Tensor& v, std::size_t rows);

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);

}  // namespace voltcast
