#include "voltcast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "voltcast/errors.hpp"
#include "voltcast/kernels.hpp"

namespace voltcast {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool track(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_out(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_rank2(const char* op, const Tensor& x) {
  if (x.rank() != 2) {
    throw UsageError(std::string(op) + ": expected rank-2 tensor, have " +
                     shape_str(x.shape()));
  }
}

int normalize_axis(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw UsageError("softmax: axis out of range for " + shape_str(x.shape()));
  }
  return axis;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool rg = track(tape, {&a, &b});
  Tensor y = make_out(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([a, b, y]() mutable {
      const auto& gy = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& v) {
  const std::size_t d = v.size();
  if (a.size() % d != 0 || a.dim(a.rank() - 1) != d) {
    throw UsageError("add_rowvec: last axis of " + shape_str(a.shape()) +
                     " must match vector " + shape_str(v.shape()));
  }
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + vv[i % d];
  const bool rg = track(tape, {&a, &v});
  Tensor y = make_out(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([a, v, y, d]() mutable {
      const auto& gy = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (v.requires_grad()) {
        auto& gv = v.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gv[i % d] += gy[i];
      }
    });
  }
  return y;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool rg = track(tape, {&a, &b});
  Tensor y = make_out(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([a, b, y]() mutable {
      const auto& gy = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return y;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool rg = track(tape, {&a, &b});
  Tensor y = make_out(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([a, b, y]() mutable {
      const auto& gy = y.grad();
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.requires_grad()) {
        auto& ga = a.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.mutable_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
      }
    });
  }
  return y;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  const bool rg = track(tape, {&a});
  Tensor y = make_out(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([a, y, c]() mutable {
      const auto& gy = y.grad();
      auto& ga = a.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
    });
  }
  return y;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank2("matmul", a);
  check_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1);
  if (b.dim(0) != k) {
    throw UsageError("matmul: inner extents disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::matmul(a.values().data(), b.values().data(), out.data(), m, k, n);
  const bool rg = track(tape, {&a, &b});
  Tensor y = make_out({m, n}, std::move(out), rg);
  if (rg) {
    tape.record([a, b, y, m, k, n]() mutable {
      const auto& gy = y.grad();
      if (a.requires_grad()) {
        // dA = dY * B^T
        kernels::matmul_bt(gy.data(), b.values().data(),
                           a.mutable_grad().data(), m, n, k, true);
      }
      if (b.requires_grad()) {
        // dB = A^T * dY
        kernels::matmul_at(a.values().data(), gy.data(),
                           b.mutable_grad().data(), k, m, n, true);
      }
    });
  }
  return y;
}

Tensor matmul_bt(Tape& tape, const Tensor& a, const Tensor& b) {
  check_rank2("matmul_bt", a);
  check_rank2("matmul_bt", b);
  const std::size_t m = a.dim(0), k = a.dim(1);
  if (b.dim(1) != k) {
    throw UsageError("matmul_bt: inner extents disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  }
  const std::size_t n = b.dim(0);
  std::vector<double> out(m * n);
  kernels::matmul_bt(a.values().data(), b.values().data(), out.data(), m, k,
                     n);
  const bool rg = track(tape, {&a, &b});
  Tensor y = make_out({m, n}, std::move(out), rg);
  if (rg) {
    tape.record([a, b, y, m, k, n]() mutable {
      const auto& gy = y.grad();
      if (a.requires_grad()) {
        // dA = dY * B
        kernels::matmul(gy.data(), b.values().data(), a.mutable_grad().data(),
                        m, n, k, true);
      }
      if (b.requires_grad()) {
        // dB = dY^T * A
        kernels::matmul_at(gy.data(), a.values().data(),
                           b.mutable_grad().data(), n, m, k, true);
      }
    });
  }
  return y;
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
  const int ax = normalize_axis(x, axis);
  for (double v : x.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("softmax: non-finite input");
    }
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[ax];

  std::vector<double> out(x.size());
  if (inner == 1) {
    kernels::softmax_rows(x.values().data(), out.data(), outer, n);
  } else {
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double mx = xv[base];
        for (std::size_t j = 1; j < n; ++j)
          mx = std::max(mx, xv[base + j * inner]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double e = std::exp(xv[base + j * inner] - mx);
          out[base + j * inner] = e;
          sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= sum;
      }
    }
  }
  const bool rg = track(tape, {&x});
  Tensor y = make_out(shape, std::move(out), rg);
  if (rg) {
    tape.record([x, y, outer, inner, n]() mutable {
      const auto& gy = y.grad();
      const auto& yv = y.values();
      auto& gx = x.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dot += gy[base + j * inner] * yv[base + j * inner];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t at = base + j * inner;
            gx[at] += yv[at] * (gy[at] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d) {
    throw UsageError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " must match last axis of " +
                     shape_str(x.shape()));
  }
  constexpr double kEps = 1e-5;
  const std::size_t rows = x.size() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + kEps);
    inv_std[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * istd;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  const bool rg = track(tape, {&x, &gain, &bias});
  Tensor y = make_out(x.shape(), std::move(out), rg);
  if (rg) {
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<double>>(std::move(inv_std));
    tape.record([x, gain, bias, y, xh, istd, rows, d]() mutable {
      const auto& gy = y.grad();
      const auto& gv = gain.values();
      if (gain.requires_grad()) {
        auto& gg = gain.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            gg[j] += gy[r * d + j] * (*xh)[r * d + j];
          }
        }
      }
      if (bias.requires_grad()) {
        auto& gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
        }
      }
      if (x.requires_grad()) {
        auto& gx = x.mutable_grad();
        const double dn = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_gh = 0.0, sum_gh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = gy[r * d + j] * gv[j];
            sum_gh += gh;
            sum_gh_xh += gh * (*xh)[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = gy[r * d + j] * gv[j];
            gx[r * d + j] += (*istd)[r] *
                             (gh - sum_gh / dn -
                              (*xh)[r * d + j] * sum_gh_xh / dn);
          }
        }
      }
    });
  }
  return y;
}

Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad) {
  check_rank2("conv1d", x);
  if (w.rank() != 3) {
    throw UsageError("conv1d: kernel must be [kw x d_in x d_out], have " +
                     shape_str(w.shape()));
  }
  const std::size_t len = x.dim(0), d_in = x.dim(1);
  const std::size_t kw = w.dim(0), d_out = w.dim(2);
  if (len == 0) throw UsageError("conv1d: empty input");
  if (w.dim(1) != d_in) {
    throw UsageError("conv1d: kernel " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (b.size() != d_out) {
    throw UsageError("conv1d: bias size must equal output channels");
  }
  if (stride == 0) throw UsageError("conv1d: stride must be positive");
  if (len + 2 * pad < kw) {
    throw UsageError("conv1d: kernel width " + std::to_string(kw) +
                     " exceeds padded length " + std::to_string(len + 2 * pad));
  }
  const std::size_t out_len = (len + 2 * pad - kw) / stride + 1;
  std::vector<double> out(out_len * d_out);
  kernels::conv1d(x.values().data(), w.values().data(), b.values().data(),
                  out.data(), len, d_in, d_out, kw, stride, pad);
  const bool rg = track(tape, {&x, &w, &b});
  Tensor y = make_out({out_len, d_out}, std::move(out), rg);
  if (rg) {
    tape.record([x, w, b, y, len, d_in, d_out, kw, stride, pad,
                 out_len]() mutable {
      const auto& gy = y.grad();
      const auto& xv = x.values();
      const auto& wv = w.values();
      const bool gx_on = x.requires_grad();
      const bool gw_on = w.requires_grad();
      double* gx = gx_on ? x.mutable_grad().data() : nullptr;
      double* gw = gw_on ? w.mutable_grad().data() : nullptr;
      if (b.requires_grad()) {
        auto& gb = b.mutable_grad();
        for (std::size_t t = 0; t < out_len; ++t) {
          for (std::size_t o = 0; o < d_out; ++o) gb[o] += gy[t * d_out + o];
        }
      }
      if (!gx_on && !gw_on) return;
      for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t i = 0; i < kw; ++i) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(t * stride + i) -
              static_cast<std::ptrdiff_t>(pad);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t s = static_cast<std::size_t>(src);
          for (std::size_t c = 0; c < d_in; ++c) {
            const std::size_t wbase = (i * d_in + c) * d_out;
            for (std::size_t o = 0; o < d_out; ++o) {
              const double g = gy[t * d_out + o];
              if (gx_on) gx[s * d_in + c] += g * wv[wbase + o];
              if (gw_on) gw[wbase + o] += g * xv[s * d_in + c];
            }
          }
        }
      }
    });
  }
  return y;
}

std::size_t pooled_len(std::size_t len, std::size_t width, std::size_t stride,
                       std::size_t pad) {
  return (len + 2 * pad - width) / stride + 1;
}

Tensor max_pool1d(Tape& tape, const Tensor& x, std::size_t width,
                  std::size_t stride, std::size_t pad) {
  check_rank2("max_pool1d", x);
  const std::size_t len = x.dim(0), d = x.dim(1);
  if (len == 0) throw UsageError("max_pool1d: empty input");
  if (len + 2 * pad < width) {
    throw UsageError("max_pool1d: window exceeds padded length");
  }
  const std::size_t out_len = pooled_len(len, width, stride, pad);
  std::vector<double> out(out_len * d);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out_len * d);
  kernels::max_pool1d(x.values().data(), out.data(), argmax->data(), len, d,
                      width, stride, pad);
  const bool rg = track(tape, {&x});
  Tensor y = make_out({out_len, d}, std::move(out), rg);
  if (rg) {
    tape.record([x, y, argmax]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gx[(*argmax)[i]] += gy[i];
      }
    });
  }
  return y;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  const bool rg = track(tape, {&x});
  Tensor y = make_out(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([x, y]() mutable {
      const auto& gy = y.grad();
      const auto& xv = x.values();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
        gx[i] += gy[i] * (cdf + xv[i] * pdf);
      }
    });
  }
  return y;
}

Tensor elu(Tape& tape, const Tensor& x, double alpha) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > 0.0 ? xv[i] : alpha * (std::exp(xv[i]) - 1.0);
  }
  const bool rg = track(tape, {&x});
  Tensor y = make_out(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([x, y, alpha]() mutable {
      const auto& gy = y.grad();
      const auto& xv = x.values();
      const auto& yv = y.values();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gx[i] += gy[i] * (xv[i] > 0.0 ? 1.0 : yv[i] + alpha);
      }
    });
  }
  return y;
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw UsageError("dropout: rate must be below 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const auto& xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    out[i] = xv[i] * (*mask)[i];
  }
  const bool rg = track(tape, {&x});
  Tensor y = make_out(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([x, y, mask]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
    });
  }
  return y;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const bool rg = track(tape, {&x});
  Tensor y = Tensor::from({1}, {s}, rg);
  if (rg) {
    tape.record([x, y]() mutable {
      const double g = y.grad()[0];
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mean_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.size());
  const bool rg = track(tape, {&x});
  Tensor y = Tensor::from({1}, {s / n}, rg);
  if (rg) {
    tape.record([x, y, n]() mutable {
      const double g = y.grad()[0] / n;
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  check_same_shape("mse_loss", pred, target);
  Tensor d = sub(tape, pred, target);
  return mean_all(tape, mul(tape, d, d));
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t r0,
                  std::size_t r1) {
  check_rank2("slice_rows", x);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (r0 > r1 || r1 > rows) {
    throw UsageError("slice_rows: range [" + std::to_string(r0) + ", " +
                     std::to_string(r1) + ") out of bounds for " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin() + r0 * d,
                          x.values().begin() + r1 * d);
  const bool rg = track(tape, {&x});
  Tensor y = make_out({r1 - r0, d}, std::move(out), rg);
  if (rg) {
    tape.record([x, y, r0, d]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[r0 * d + i] += gy[i];
    });
  }
  return y;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t c0,
                  std::size_t c1) {
  check_rank2("slice_cols", x);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (c0 > c1 || c1 > d) {
    throw UsageError("slice_cols: range out of bounds for " +
                     shape_str(x.shape()));
  }
  const std::size_t w = c1 - c0;
  std::vector<double> out(rows * w);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xv[r * d + c0 + j];
  }
  const bool rg = track(tape, {&x});
  Tensor y = make_out({rows, w}, std::move(out), rg);
  if (rg) {
    tape.record([x, y, c0, d, rows, w]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) {
          gx[r * d + c0 + j] += gy[r * w + j];
        }
      }
    });
  }
  return y;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t d = 0;
  for (const Tensor& p : parts) {
    check_rank2("concat_cols", p);
    if (p.dim(0) != rows) {
      throw UsageError("concat_cols: row counts differ");
    }
    d += p.dim(1);
  }
  std::vector<double> out(rows * d);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    const auto& pv = p.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) out[r * d + off + j] = pv[r * w + j];
    }
    off += w;
  }
  bool rg = false;
  if (tape.recording()) {
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
  }
  Tensor y = make_out({rows, d}, std::move(out), rg);
  if (rg) {
    tape.record([parts, y, rows, d]() mutable {
      const auto& gy = y.grad();
      std::size_t off = 0;
      for (Tensor& p : const_cast<std::vector<Tensor>&>(parts)) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.mutable_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) {
              gp[r * w + j] += gy[r * d + off + j];
            }
          }
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::vector<std::size_t> idx) {
  check_rank2("gather_rows", x);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  for (std::size_t i : idx) {
    if (i >= rows) throw UsageError("gather_rows: index out of range");
  }
  std::vector<double> out(idx.size() * d);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(xv.data() + idx[r] * d, d, out.data() + r * d);
  }
  const bool rg = track(tape, {&x});
  auto ids = std::make_shared<std::vector<std::size_t>>(std::move(idx));
  Tensor y = make_out({ids->size(), d}, std::move(out), rg);
  if (rg) {
    tape.record([x, y, ids, d]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t r = 0; r < ids->size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[(*ids)[r] * d + j] += gy[r * d + j];
        }
      }
    });
  }
  return y;
}

Tensor scatter_rows(Tape& tape, const Tensor& base, const Tensor& rows,
                    std::vector<std::size_t> idx) {
  check_rank2("scatter_rows", base);
  check_rank2("scatter_rows", rows);
  const std::size_t n = base.dim(0), d = base.dim(1);
  if (rows.dim(1) != d || rows.dim(0) != idx.size()) {
    throw UsageError("scatter_rows: rows " + shape_str(rows.shape()) +
                     " does not match " + std::to_string(idx.size()) +
                     " indices over " + shape_str(base.shape()));
  }
  std::vector<char> taken(n, 0);
  for (std::size_t i : idx) {
    if (i >= n) throw UsageError("scatter_rows: index out of range");
    if (taken[i]) throw UsageError("scatter_rows: duplicate index");
    taken[i] = 1;
  }
  std::vector<double> out = base.values();
  const auto& rv = rows.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(rv.data() + r * d, d, out.data() + idx[r] * d);
  }
  const bool rg = track(tape, {&base, &rows});
  auto ids = std::make_shared<std::vector<std::size_t>>(std::move(idx));
  auto mask = std::make_shared<std::vector<char>>(std::move(taken));
  Tensor y = make_out(base.shape(), std::move(out), rg);
  if (rg) {
    tape.record([base, rows, y, ids, mask, n, d]() mutable {
      const auto& gy = y.grad();
      if (base.requires_grad()) {
        auto& gb = base.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          if ((*mask)[r]) continue;
          for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += gy[r * d + j];
        }
      }
      if (rows.requires_grad()) {
        auto& gr = rows.mutable_grad();
        for (std::size_t r = 0; r < ids->size(); ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            gr[r * d + j] += gy[(*ids)[r] * d + j];
          }
        }
      }
    });
  }
  return y;
}

Tensor mean_over_rows(Tape& tape, const Tensor& x) {
  check_rank2("mean_over_rows", x);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<double> out(d, 0.0);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[r * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(rows);
  const bool rg = track(tape, {&x});
  Tensor y = make_out({d}, std::move(out), rg);
  if (rg) {
    tape.record([x, y, rows, d]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      const double inv = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += gy[j] * inv;
      }
    });
  }
  return y;
}

Tensor broadcast_row(Tape& tape, const Tensor& v, std::size_t rows) {
  if (v.rank() != 1) {
    throw UsageError("broadcast_row: expected rank-1 tensor");
  }
  const std::size_t d = v.size();
  std::vector<double> out(rows * d);
  const auto& vv = v.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(vv.data(), d, out.data() + r * d);
  }
  const bool rg = track(tape, {&v});
  Tensor y = make_out({rows, d}, std::move(out), rg);
  if (rg) {
    tape.record([v, y, rows, d]() mutable {
      const auto& gy = y.grad();
      auto& gv = v.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) gv[j] += gy[r * d + j];
      }
    });
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw UsageError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  const bool rg = track(tape, {&x});
  Tensor y = Tensor::from(std::move(new_shape), x.values(), rg);
  if (rg) {
    tape.record([x, y]() mutable {
      const auto& gy = y.grad();
      auto& gx = x.mutable_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

}  // namespace voltcast
