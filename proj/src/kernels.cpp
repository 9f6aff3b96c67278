#include "voltcast/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace voltcast::kernels {

namespace {

int initial_thread_count() {
  const char* env = std::getenv("VOLTCAST_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

std::atomic<int> g_threads{initial_thread_count()};

// Parallel sections only pay off past a minimum amount of work.
constexpr std::size_t kMinParallelOutputs = 4096;

inline bool go_parallel(std::size_t outputs, std::size_t inner) {
  return g_threads.load(std::memory_order_relaxed) > 1 &&
         outputs * std::max<std::size_t>(inner, 1) >= kMinParallelOutputs;
}

}  // namespace

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_thread_count(int n) { g_threads.store(n >= 1 ? n : 1); }

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  if (!go_parallel(m * n, k)) {
    serial::matmul(a, b, out, m, k, n, accumulate);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
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
  if (!go_parallel(m * n, k)) {
    serial::matmul_bt(a, b, out, m, k, n, accumulate);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
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
  if (!go_parallel(m * n, k)) {
    serial::matmul_at(a, b, out, m, k, n, accumulate);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
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
  if (!go_parallel(rows, cols)) {
    serial::softmax_rows(x, out, rows, cols);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
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
  if (!go_parallel(out_len * d_out, kw * d_in)) {
    serial::conv1d(x, w, b, out, len, d_in, d_out, kw, stride, pad);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(out_len); ++t) {
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
  if (!go_parallel(out_len * d, width)) {
    serial::max_pool1d(x, out, argmax, len, d, width, stride, pad);
    return;
  }
  const int nt = thread_count();
#pragma omp parallel for num_threads(nt) schedule(static)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(out_len); ++t) {
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

}  // namespace voltcast::kernels
