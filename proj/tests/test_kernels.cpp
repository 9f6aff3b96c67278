#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "voltcast/kernels.hpp"
#include "voltcast/rng.hpp"

using namespace voltcast;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct ThreadGuard {
  ~ThreadGuard() { kernels::set_thread_count(1); }
};

}  // namespace

TEST_CASE("parallel matmul variants are bit-identical to serial") {
  ThreadGuard guard;
  Rng rng(11);
  for (int threads : {1, 2, 4}) {
    for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{
                               3, 5, 7},
                           {64, 96, 64},
                           {257, 129, 65},
                           {1, 1, 1}}) {
      const auto a = random_vec(m * k, rng);
      const auto b = random_vec(k * n, rng);
      std::vector<double> out_s(m * n), out_p(m * n);

      kernels::serial::matmul(a.data(), b.data(), out_s.data(), m, k, n);
      kernels::set_thread_count(threads);
      kernels::matmul(a.data(), b.data(), out_p.data(), m, k, n);
      CHECK(bit_equal(out_s, out_p));

      const auto bt = random_vec(n * k, rng);
      kernels::serial::matmul_bt(a.data(), bt.data(), out_s.data(), m, k, n);
      kernels::matmul_bt(a.data(), bt.data(), out_p.data(), m, k, n);
      CHECK(bit_equal(out_s, out_p));

      const auto at = random_vec(k * m, rng);
      kernels::serial::matmul_at(at.data(), b.data(), out_s.data(), m, k, n);
      kernels::matmul_at(at.data(), b.data(), out_p.data(), m, k, n);
      CHECK(bit_equal(out_s, out_p));
    }
  }
}

TEST_CASE("matmul accumulate flag adds into the output") {
  Rng rng(12);
  const std::size_t n = 4;
  const auto a = random_vec(n * n, rng);
  const auto b = random_vec(n * n, rng);
  std::vector<double> base(n * n, 1.0), fresh(n * n);
  kernels::serial::matmul(a.data(), b.data(), fresh.data(), n, n, n);
  kernels::serial::matmul(a.data(), b.data(), base.data(), n, n, n, true);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i] == doctest::Approx(fresh[i] + 1.0));
  }
}

TEST_CASE("parallel softmax/conv/pool match serial bit-for-bit") {
  ThreadGuard guard;
  Rng rng(13);
  for (int threads : {2, 4}) {
    kernels::set_thread_count(threads);

    const std::size_t rows = 300, cols = 40;
    const auto x = random_vec(rows * cols, rng);
    std::vector<double> s1(rows * cols), s2(rows * cols);
    kernels::serial::softmax_rows(x.data(), s1.data(), rows, cols);
    kernels::softmax_rows(x.data(), s2.data(), rows, cols);
    CHECK(bit_equal(s1, s2));

    const std::size_t len = 500, d_in = 8, d_out = 12, kw = 3;
    const auto cx = random_vec(len * d_in, rng);
    const auto cw = random_vec(kw * d_in * d_out, rng);
    const auto cb = random_vec(d_out, rng);
    std::vector<double> c1(len * d_out), c2(len * d_out);
    kernels::serial::conv1d(cx.data(), cw.data(), cb.data(), c1.data(), len,
                            d_in, d_out, kw, 1, 1);
    kernels::conv1d(cx.data(), cw.data(), cb.data(), c2.data(), len, d_in,
                    d_out, kw, 1, 1);
    CHECK(bit_equal(c1, c2));

    const std::size_t plen = 1001, pd = 6;
    const auto px = random_vec(plen * pd, rng);
    const std::size_t out_len = (plen + 2 - 3) / 2 + 1;
    std::vector<double> p1(out_len * pd), p2(out_len * pd);
    std::vector<std::size_t> a1(out_len * pd), a2(out_len * pd);
    kernels::serial::max_pool1d(px.data(), p1.data(), a1.data(), plen, pd, 3,
                                2, 1);
    kernels::max_pool1d(px.data(), p2.data(), a2.data(), plen, pd, 3, 2, 1);
    CHECK(bit_equal(p1, p2));
    CHECK(a1 == a2);
  }
}

TEST_CASE("thread count control") {
  ThreadGuard guard;
  kernels::set_thread_count(3);
  CHECK(kernels::thread_count() == 3);
  kernels::set_thread_count(0);  // clamped
  CHECK(kernels::thread_count() == 1);
}
