#include "voltcast/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voltcast::kernels::serial {

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      out[i * n + j] = accumulate ? out[i * n + j] + acc : acc;
    }
  }
}

void matmul_bt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[j * k + p];
      }
      out[i * n + j] = accumulate ? out[i * n + j] + acc : acc;
    }
  }
}

void matmul_at(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[p * m + i] * b[p * n + j];
      }
      out[i * n + j] = accumulate ? out[i * n + j] + acc : acc;
    }
  }
}

void softmax_rows(const double* x, double* out, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x + r * cols;
    double* dst = out + r * cols;
    double mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(row[c] - mx);
      sum += dst[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= sum;
  }
}

void conv1d(const double* x, const double* w, const double* b, double* out,
            std::size_t len, std::size_t d_in, std::size_t d_out,
            std::size_t kw, std::size_t stride, std::size_t pad) {
  const std::size_t out_len = (len + 2 * pad - kw) / stride + 1;
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t o = 0; o < d_out; ++o) {
      double acc = b ? b[o] : 0.0;
      for (std::size_t i = 0; i < kw; ++i) {
        const std::ptrdiff_t src =
            static_cast<std::ptrdiff_t>(t * stride + i) -
            static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xr = x + static_cast<std::size_t>(src) * d_in;
        const double* wr = w + (i * d_in) * d_out + o;
        for (std::size_t c = 0; c < d_in; ++c) {
          acc += xr[c] * wr[c * d_out];
        }
      }
      out[t * d_out + o] = acc;
    }
  }
}

void max_pool1d(const double* x, double* out, std::size_t* argmax,
                std::size_t len, std::size_t d, std::size_t width,
                std::size_t stride, std::size_t pad) {
  const std::size_t out_len = (len + 2 * pad - width) / stride + 1;
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_idx = 0;
      for (std::size_t i = 0; i < width; ++i) {
        const std::ptrdiff_t src =
            static_cast<std::ptrdiff_t>(t * stride + i) -
            static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const std::size_t flat = static_cast<std::size_t>(src) * d + c;
        if (x[flat] > best) {
          best = x[flat];
          best_idx = flat;
        }
      }
      out[t * d + c] = best;
      if (argmax) argmax[t * d + c] = best_idx;
    }
  }
}

}  // namespace voltcast::kernels::serial
