// Compares the OpenMP kernels against their serial reference: wall time per
// kernel and size, plus a correctness check that both produce bit-identical
// results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "voltcast/kernels.hpp"
#include "voltcast/rng.hpp"

using namespace voltcast;

namespace {

double time_of(const std::function<void()>& fn, int repeats) {
  fn();  // warm-up
  double best = 1e100;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (dt < best) best = dt;
  }
  return best;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* kernel, std::size_t size, double serial_s,
            double parallel_s, bool equal) {
  std::printf("%-12s %8zu %12.6f %12.6f %8.2fx %s\n", kernel, size, serial_s,
              parallel_s, serial_s / parallel_s, equal ? "bit-equal" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  int repeats = 5;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) {
      threads = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--repeats") == 0 && i + 1 < argc) {
      repeats = std::atoi(argv[++i]);
    } else {
      std::printf("usage: %s [--threads N] [--repeats N]\n", argv[0]);
      return 2;
    }
  }
  if (threads <= 0) threads = 2;

  Rng rng(7);
  std::printf("kernel           n     serial_s   parallel_s  speedup  check "
              "(threads=%d)\n",
              threads);

  for (std::size_t n : {128u, 256u, 512u}) {
    const auto a = random_vec(n * n, rng);
    const auto b = random_vec(n * n, rng);
    std::vector<double> out_s(n * n), out_p(n * n);
    kernels::set_thread_count(1);
    const double ts = time_of(
        [&] { kernels::serial::matmul(a.data(), b.data(), out_s.data(), n, n, n); },
        repeats);
    kernels::set_thread_count(threads);
    const double tp = time_of(
        [&] { kernels::matmul(a.data(), b.data(), out_p.data(), n, n, n); },
        repeats);
    report("matmul", n, ts, tp, bit_equal(out_s, out_p));
  }

  for (std::size_t len : {4096u, 16384u, 65536u}) {
    const std::size_t d_in = 16, d_out = 16, kw = 3;
    const auto x = random_vec(len * d_in, rng);
    const auto w = random_vec(kw * d_in * d_out, rng);
    const auto bias = random_vec(d_out, rng);
    const std::size_t out_len = len;  // stride 1, pad 1
    std::vector<double> out_s(out_len * d_out), out_p(out_len * d_out);
    kernels::set_thread_count(1);
    const double ts = time_of(
        [&] {
          kernels::serial::conv1d(x.data(), w.data(), bias.data(), out_s.data(),
                                  len, d_in, d_out, kw, 1, 1);
        },
        repeats);
    kernels::set_thread_count(threads);
    const double tp = time_of(
        [&] {
          kernels::conv1d(x.data(), w.data(), bias.data(), out_p.data(), len,
                          d_in, d_out, kw, 1, 1);
        },
        repeats);
    report("conv1d", len, ts, tp, bit_equal(out_s, out_p));
  }

  for (std::size_t rows : {1024u, 4096u}) {
    const std::size_t cols = 512;
    const auto x = random_vec(rows * cols, rng);
    std::vector<double> out_s(rows * cols), out_p(rows * cols);
    kernels::set_thread_count(1);
    const double ts = time_of(
        [&] { kernels::serial::softmax_rows(x.data(), out_s.data(), rows, cols); },
        repeats);
    kernels::set_thread_count(threads);
    const double tp = time_of(
        [&] { kernels::softmax_rows(x.data(), out_p.data(), rows, cols); },
        repeats);
    report("softmax", rows, ts, tp, bit_equal(out_s, out_p));
  }

  for (std::size_t len : {65536u, 262144u}) {
    const std::size_t d = 16;
    const auto x = random_vec(len * d, rng);
    const std::size_t out_len = (len + 2 - 3) / 2 + 1;
    std::vector<double> out_s(out_len * d), out_p(out_len * d);
    std::vector<std::size_t> arg_s(out_len * d), arg_p(out_len * d);
    kernels::set_thread_count(1);
    const double ts = time_of(
        [&] {
          kernels::serial::max_pool1d(x.data(), out_s.data(), arg_s.data(), len,
                                      d, 3, 2, 1);
        },
        repeats);
    kernels::set_thread_count(threads);
    const double tp = time_of(
        [&] {
          kernels::max_pool1d(x.data(), out_p.data(), arg_p.data(), len, d, 3,
                              2, 1);
        },
        repeats);
    report("max_pool1d", len, ts, tp, bit_equal(out_s, out_p));
  }
  return 0;
}
