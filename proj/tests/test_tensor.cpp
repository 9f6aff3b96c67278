#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "voltcast/errors.hpp"
#include "voltcast/ops.hpp"
#include "voltcast/optim.hpp"
#include "voltcast/rng.hpp"
#include "voltcast/tensor.hpp"

using namespace voltcast;
using testutil::fd_grad;
using testutil::rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// verifies the analytic gradient of `loss_of(params)` for every element of
// every listed tensor against central finite differences
void check_grads(const std::vector<Tensor>& params,
                 const std::function<Tensor(Tape&)>& forward_loss) {
  Tape tape;
  Tensor loss = forward_loss(tape);
  tape.backward(loss);
  auto loss_value = [&]() {
    Tape t = Tape::inference();
    return forward_loss(t).item();
  };
  for (const Tensor& p : params) {
    const auto grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double fd = fd_grad(p, i, loss_value);
      INFO("index ", i, " analytic ", grad[i], " fd ", fd);
      CHECK(rel_err(grad[i], fd) < 1e-4);
    }
  }
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape = Tape::inference();
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor prod = matmul(tape, eye, eye);
  CHECK(prod.values() == std::vector<double>{1, 0, 0, 1});

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 1}, {1, 1});
  Tensor c = matmul(tape, a, b);
  CHECK(c.values() == std::vector<double>{3, 7});

  Tensor bad_a = Tensor::zeros({3, 5});
  Tensor bad_b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(tape, bad_a, bad_b),
                       doctest::Contains("[3x5]"), UsageError);
}

TEST_CASE("softmax examples and properties") {
  Tape tape = Tape::inference();
  Tensor uniform = softmax(tape, Tensor::from({3}, {0, 0, 0}));
  for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 3));

  Tensor big = softmax(tape, Tensor::from({2}, {1000, 1000}));
  CHECK(big.values()[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(big.values()[1]));

  Tensor skew = softmax(tape, Tensor::from({2}, {0.0, std::log(3.0)}));
  CHECK(skew.values()[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(skew.values()[1] == doctest::Approx(0.75).epsilon(1e-9));

  CHECK_THROWS_AS(
      softmax(tape, Tensor::from({2}, {std::nan(""), 1.0})),
      NumericError);

  // sums to 1 and shift invariance on random rows
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, false);
    Tensor y = softmax(tape, x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 7; ++c) sum += y.values()[r * 7 + c];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    const double shift = rng.normal();
    std::vector<double> shifted = x.values();
    for (double& v : shifted) v += shift;
    Tensor y2 = softmax(tape, Tensor::from({4, 7}, shifted));
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(std::abs(y.values()[i] - y2.values()[i]) < 1e-9);
    }
  }

  // axis parameter: axis 0 normalizes columns
  Tensor m = Tensor::from({2, 3}, {0, 0, 0, 0, 0, 0});
  Tensor cols = softmax(tape, m, 0);
  for (double v : cols.values()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("layer_norm examples") {
  Tape tape = Tape::inference();
  Tensor gain = Tensor::from({3}, {1, 1, 1});
  Tensor bias = Tensor::from({3}, {0, 0, 0});

  Tensor constant = layer_norm(tape, Tensor::from({1, 3}, {4, 4, 4}), gain,
                               bias);
  for (double v : constant.values()) CHECK(v == doctest::Approx(0.0));

  Tensor ramp = layer_norm(tape, Tensor::from({1, 3}, {1, 2, 3}), gain, bias);
  CHECK(ramp.values()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(ramp.values()[1] == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(ramp.values()[2] == doctest::Approx(1.2247).epsilon(1e-3));

  Tensor zero_gain = Tensor::from({3}, {0, 0, 0});
  Tensor five_bias = Tensor::from({3}, {5, 5, 5});
  Tensor collapsed =
      layer_norm(tape, Tensor::from({1, 3}, {1, 2, 3}), zero_gain, five_bias);
  for (double v : collapsed.values()) CHECK(v == doctest::Approx(5.0));

  // normalized moments on a wide-variance row (epsilon is 1e-5 inside the
  // square root, so unit-variance data would sit 1e-5 away from exactly 1)
  Rng rng(7);
  std::vector<double> row(64);
  for (double& v : row) v = 10.0 * rng.normal();
  Tensor g64 = Tensor::full({64}, 1.0);
  Tensor b64 = Tensor::zeros({64});
  Tensor normed = layer_norm(tape, Tensor::from({1, 64}, row), g64, b64);
  double mean = 0, var = 0;
  for (double v : normed.values()) mean += v;
  mean /= 64;
  for (double v : normed.values()) var += (v - mean) * (v - mean);
  var /= 64;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("conv1d examples") {
  Tape tape = Tape::inference();
  Rng rng(9);

  // identity kernel leaves x unchanged
  Tensor x = random_tensor({6, 1}, rng, false);
  Tensor w_id = Tensor::from({1, 1, 1}, {1.0});
  Tensor b0 = Tensor::zeros({1});
  Tensor same = conv1d(tape, x, w_id, b0, 1, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(same.values()[i] == doctest::Approx(x.values()[i]));
  }

  // length formula: L=8, kw=3, stride=2, pad=1 -> 4
  Tensor x8 = random_tensor({8, 2}, rng, false);
  Tensor w3 = random_tensor({3, 2, 5}, rng, false);
  Tensor b5 = Tensor::zeros({5});
  CHECK(conv1d(tape, x8, w3, b5, 2, 1).dim(0) == 4);

  // kernel wider than the padded input
  Tensor x2 = random_tensor({2, 1}, rng, false);
  Tensor w5 = random_tensor({5, 1, 1}, rng, false);
  Tensor b1 = Tensor::zeros({1});
  CHECK_THROWS_AS(conv1d(tape, x2, w5, b1, 1, 0), UsageError);

  Tensor empty = Tensor::zeros({0, 1});
  CHECK_THROWS_AS(conv1d(tape, empty, w_id, b0, 1, 0), UsageError);
}

TEST_CASE("max_pool1d examples and the ceil-halving law") {
  Tape tape = Tape::inference();
  Rng rng(10);

  Tensor x96 = random_tensor({96, 3}, rng, false);
  CHECK(max_pool1d(tape, x96).dim(0) == 48);

  Tensor single = Tensor::from({1, 1}, {5.0});
  Tensor pooled = max_pool1d(tape, single);
  CHECK(pooled.dim(0) == 1);
  CHECK(pooled.values()[0] == 5.0);

  Tensor v4 = Tensor::from({4, 1}, {1, 9, 2, 8});
  Tensor p4 = max_pool1d(tape, v4);
  CHECK(p4.values() == std::vector<double>{9, 9});

  for (std::size_t len = 1; len <= 512; ++len) {
    CHECK(pooled_len(len) == (len + 1) / 2);
  }
}

TEST_CASE("backward basics") {
  // sum(x) -> ones
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tape tape;
  Tensor loss = sum_all(tape, x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);

  // sum(x^2) at [1,2] -> [2,4]
  Tensor y = Tensor::from({2}, {1, 2}, true);
  Tape tape2;
  Tensor loss2 = sum_all(tape2, mul(tape2, y, y));
  tape2.backward(loss2);
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));

  // second backward on a consumed tape is rejected
  CHECK_THROWS_AS(tape2.backward(loss2), UsageError);

  // non-scalar loss is rejected
  Tape tape3;
  Tensor vec = add(tape3, y, y);
  CHECK_THROWS_AS(tape3.backward(vec), UsageError);

  // unreachable tensors keep a zero gradient
  Tensor stranger = Tensor::from({2}, {7, 7}, true);
  for (double g : stranger.grad()) CHECK(g == 0.0);
}

TEST_CASE("adam examples") {
  // zero gradient leaves the parameter unchanged
  Tensor p = Tensor::from({2}, {1.5, -2.5}, true);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt({{"p", p}}, cfg);
  p.mutable_grad();  // allocate zeros
  opt.step();
  CHECK(p.values()[0] == 1.5);
  CHECK(p.values()[1] == -2.5);
  CHECK(opt.step_count() == 1);

  // constant gradient 1, lr 0.1: first step moves by about -0.1
  Tensor q = Tensor::scalar(5.0, true);
  Adam opt2({{"q", q}}, cfg);
  q.mutable_grad()[0] = 1.0;
  opt2.step();
  CHECK(q.values()[0] == doctest::Approx(4.9).epsilon(1e-6));
  q.mutable_grad()[0] = 1.0;
  opt2.step();
  CHECK(opt2.step_count() == 2);

  // NaN gradient names the parameter
  Tensor r = Tensor::scalar(1.0, true);
  Adam opt3({{"weights.r", r}}, cfg);
  r.mutable_grad()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(opt3.step(), doctest::Contains("weights.r"),
                       NumericError);
}

TEST_CASE("gradients of every op match finite differences") {
  Rng rng(21);

  SUBCASE("matmul") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    check_grads({a, b}, [&](Tape& t) {
      return sum_all(t, mul(t, matmul(t, a, b), matmul(t, a, b)));
    });
  }
  SUBCASE("matmul_bt") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({5, 4}, rng);
    check_grads({a, b},
                [&](Tape& t) { return mean_all(t, matmul_bt(t, a, b)); });
  }
  SUBCASE("softmax") {
    Tensor x = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({3, 5}, rng, false);
    check_grads({x}, [&](Tape& t) {
      return sum_all(t, mul(t, softmax(t, x), w));
    });
  }
  SUBCASE("layer_norm") {
    Tensor x = random_tensor({2, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({2, 6}, rng, false);
    check_grads({x, g, b}, [&](Tape& t) {
      return sum_all(t, mul(t, layer_norm(t, x, g, b), w));
    });
  }
  SUBCASE("conv1d") {
    Tensor x = random_tensor({7, 3}, rng);
    Tensor w = random_tensor({3, 3, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor mask = random_tensor({7, 2}, rng, false);
    check_grads({x, w, b}, [&](Tape& t) {
      return sum_all(t, mul(t, conv1d(t, x, w, b, 1, 1), mask));
    });
  }
  SUBCASE("max_pool1d") {
    Tensor x = random_tensor({9, 2}, rng);
    Tensor w = random_tensor({5, 2}, rng, false);
    check_grads({x}, [&](Tape& t) {
      return sum_all(t, mul(t, max_pool1d(t, x), w));
    });
  }
  SUBCASE("gelu and elu") {
    Tensor x = random_tensor({8}, rng);
    check_grads({x}, [&](Tape& t) {
      return sum_all(t, gelu(t, elu(t, x)));
    });
  }
  SUBCASE("slices, gather, scatter, means") {
    Tensor x = random_tensor({6, 4}, rng);
    Tensor rows = random_tensor({2, 4}, rng);
    Tensor w = random_tensor({6, 4}, rng, false);
    check_grads({x, rows}, [&](Tape& t) {
      Tensor scattered = scatter_rows(t, x, rows, {1, 4});
      Tensor gathered = gather_rows(t, scattered, {0, 1, 5});
      Tensor sliced = slice_cols(t, gathered, 1, 3);
      Tensor merged = concat_cols(t, {sliced, slice_cols(t, gathered, 0, 1)});
      Tensor m = mean_over_rows(t, merged);
      Tensor back = broadcast_row(t, m, 6);
      return sum_all(t, mul(t, back, slice_cols(t, w, 0, 3)));
    });
  }
  SUBCASE("mse and reshape") {
    Tensor x = random_tensor({2, 3}, rng);
    Tensor target = random_tensor({6}, rng, false);
    check_grads({x}, [&](Tape& t) {
      return mse_loss(t, reshape(t, x, {6}), target);
    });
  }
}

TEST_CASE("ops are deterministic") {
  Rng rng_a(33), rng_b(33);
  Tensor a1 = random_tensor({5, 5}, rng_a, false);
  Tensor a2 = random_tensor({5, 5}, rng_b, false);
  CHECK(a1.values() == a2.values());
  Tape t = Tape::inference();
  CHECK(matmul(t, a1, a1).values() == matmul(t, a2, a2).values());
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, {1, 2, 3}), UsageError);
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = x.reshaped({4});
  CHECK(r.shape() == Shape{4});
  CHECK(r.id() != x.id());
  CHECK_THROWS_AS(x.reshaped({3}), UsageError);
  CHECK_THROWS_AS(x.item(), UsageError);

  // grad storage matches the value count
  Tensor g = Tensor::zeros({3}, true);
  CHECK(g.grad().size() == g.size());

  // memory accounting moves with allocations
  const std::size_t before = memory::live_elements();
  {
    Tensor big = Tensor::zeros({1000});
    CHECK(memory::live_elements() >= before + 1000);
  }
  CHECK(memory::live_elements() < before + 1000);
}
