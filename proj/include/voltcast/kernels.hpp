#pragma once

#include <cstddef>

namespace voltcast::kernels {

// Worker-thread cap for the OpenMP kernels. Initialized from the
// VOLTCAST_THREADS environment variable (default 1). The kernels partition
// independent output elements across threads and keep each element's
// reduction serial, so results are bit-identical for any thread count.
int thread_count();
void set_thread_count(int n);

// out[m x n] = a[m x k] * b[k x n]; accumulate adds into out instead of
// overwriting.
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate = false);

// out[m x n] = a[m x k] * b[n x k]^T
void matmul_bt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// out[m x n] = a[k x m]^T * b[k x n]
void matmul_at(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// row-wise softmax with max subtraction, x and out are [rows x cols]
void softmax_rows(const double* x, double* out, std::size_t rows,
                  std::size_t cols);

// temporal convolution: x[len x d_in], w[kw x d_in x d_out], b[d_out],
// out[out_len x d_out] with out_len = (len + 2*pad - kw) / stride + 1.
// Positions outside x contribute zero.
void conv1d(const double* x, const double* w, const double* b, double* out,
            std::size_t len, std::size_t d_in, std::size_t d_out,
            std::size_t kw, std::size_t stride, std::size_t pad);

// max over each temporal window, padding positions ignored; argmax holds the
// flat input index that won each output cell (for the backward pass).
void max_pool1d(const double* x, double* out, std::size_t* argmax,
                std::size_t len, std::size_t d, std::size_t width,
                std::size_t stride, std::size_t pad);

// Serial reference implementations, kept for testing and benchmarking the
// parallel kernels against.
namespace serial {
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate = false);
void matmul_bt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void matmul_at(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(const double* x, double* out, std::size_t rows,
                  std::size_t cols);
void conv1d(const double* x, const double* w, const double* b, double* out,
            std::size_t len, std::size_t d_in, std::size_t d_out,
            std::size_t kw, std::size_t stride, std::size_t pad);
void max_pool1d(const double* x, double* out, std::size_t* argmax,
                std::size_t len, std::size_t d, std::size_t width,
                std::size_t stride, std::size_t pad);
}  // namespace serial

}  // namespace voltcast::kernels
