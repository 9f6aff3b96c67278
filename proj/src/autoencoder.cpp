#include "voltcast/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "voltcast/errors.hpp"
#include "voltcast/jsonio.hpp"
#include "voltcast/ops.hpp"
#include "voltcast/optim.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(tape, matmul(tape, x, w), b);
}

}  // namespace

void AutoencoderConfig::validate() const {
  if (window_len == 0 || n_features == 0) {
    throw UsageError("detector config: window_len and n_features must be positive");
  }
  if (latent_dim == 0 || latent_dim >= input_dim()) {
    throw UsageError("detector config: latent_dim must be a true bottleneck "
                     "(0 < latent < window_len * n_features)");
  }
  if (extreme_n == 0) {
    throw UsageError("detector config: extreme_n must be positive");
  }
  if (weight_decay < 0.0) {
    throw UsageError("detector config: weight_decay must be non-negative");
  }
}

AutoencoderParams AutoencoderParams::init(const AutoencoderConfig& cfg,
                                          Rng& rng) {
  cfg.validate();
  AutoencoderParams p;
  std::vector<std::size_t> widths;
  widths.push_back(cfg.input_dim());
  for (std::size_t h : cfg.hidden) widths.push_back(h);
  widths.push_back(cfg.latent_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.enc_w.push_back(glorot({widths[i], widths[i + 1]}, widths[i],
                             widths[i + 1], rng));
    p.enc_b.push_back(Tensor::zeros({widths[i + 1]}, true));
  }
  for (std::size_t i = widths.size() - 1; i > 0; --i) {
    p.dec_w.push_back(glorot({widths[i], widths[i - 1]}, widths[i],
                             widths[i - 1], rng));
    p.dec_b.push_back(Tensor::zeros({widths[i - 1]}, true));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>>
AutoencoderParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < enc_w.size(); ++i) {
    out.emplace_back("enc." + std::to_string(i) + ".w", enc_w[i]);
    out.emplace_back("enc." + std::to_string(i) + ".b", enc_b[i]);
  }
  for (std::size_t i = 0; i < dec_w.size(); ++i) {
    out.emplace_back("dec." + std::to_string(i) + ".w", dec_w[i]);
    out.emplace_back("dec." + std::to_string(i) + ".b", dec_b[i]);
  }
  return out;
}

Tensor ae_encode(Tape& tape, const AutoencoderParams& params,
                 const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != params.enc_w.front().dim(0)) {
    throw UsageError("ae_encode: input " + shape_str(x.shape()) +
                     " does not match first encoder layer " +
                     shape_str(params.enc_w.front().shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < params.enc_w.size(); ++i) {
    h = dense(tape, h, params.enc_w[i], params.enc_b[i]);
    if (i + 1 < params.enc_w.size()) h = gelu(tape, h);
  }
  return h;
}

Tensor ae_decode(Tape& tape, const AutoencoderParams& params,
                 const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != params.dec_w.front().dim(0)) {
    throw UsageError("ae_decode: latent " + shape_str(z.shape()) +
                     " does not match first decoder layer " +
                     shape_str(params.dec_w.front().shape()));
  }
  Tensor h = z;
  for (std::size_t i = 0; i < params.dec_w.size(); ++i) {
    h = dense(tape, h, params.dec_w[i], params.dec_b[i]);
    if (i + 1 < params.dec_w.size()) h = gelu(tape, h);
  }
  return h;
}

std::vector<double> flatten_window(const SeriesFrame& frame, std::size_t start,
                                   std::size_t window_len) {
  const std::size_t d = frame.n_features();
  return {frame.features.begin() + start * d,
          frame.features.begin() + (start + window_len) * d};
}

std::vector<std::vector<double>> sliding_windows(const SeriesFrame& frame,
                                                 std::size_t window_len) {
  if (frame.rows() < window_len) {
    throw UsageError("sliding_windows: frame has " +
                     std::to_string(frame.rows()) + " rows but windows need " +
                     std::to_string(window_len));
  }
  std::vector<std::vector<double>> out;
  out.reserve(frame.rows() - window_len + 1);
  for (std::size_t i = 0; i + window_len <= frame.rows(); ++i) {
    out.push_back(flatten_window(frame, i, window_len));
  }
  return out;
}

double squared_error(const std::vector<double>& x,
                     const std::vector<double>& xhat) {
  if (x.size() != xhat.size()) {
    throw UsageError("squared_error: length mismatch");
  }
  double e = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - xhat[i];
    e += d * d;
  }
  return e;
}

double reconstruction_error(const AutoencoderParams& params,
                            const std::vector<double>& window) {
  Tape tape = Tape::inference();
  Tensor x = Tensor::from({1, window.size()}, window, false);
  Tensor xhat = ae_decode(tape, params, ae_encode(tape, params, x));
  return squared_error(window, xhat.values());
}

std::vector<double> reconstruction_errors(
    const AutoencoderParams& params,
    const std::vector<std::vector<double>>& windows) {
  std::vector<double> out(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    out[i] = reconstruction_error(params, windows[i]);
  }
  return out;
}

AeTrainResult fit_autoencoder(AutoencoderParams& params,
                              const AutoencoderConfig& cfg,
                              const std::vector<std::vector<double>>& windows,
                              const AeTrainOptions& opts, Rng& rng) {
  if (windows.size() < 32) {
    throw UsageError("fit_autoencoder: need at least 32 windows, have " +
                     std::to_string(windows.size()));
  }
  auto named = params.named_parameters();
  AdamConfig acfg;
  acfg.lr = opts.lr;
  Adam optimizer(named, acfg);

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);

  AeTrainResult result;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opts.batch_size);
      const std::size_t batch = stop - start;
      optimizer.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& w = windows[order[i]];
        Tape tape;
        Tensor x = Tensor::from({1, w.size()}, w, false);
        Tensor xhat = ae_decode(tape, params, ae_encode(tape, params, x));
        Tensor diff = sub(tape, xhat, x);
        Tensor loss = sum_all(tape, mul(tape, diff, diff));
        tape.backward(loss);
        batch_loss += loss.item();
      }
      const double inv = 1.0 / static_cast<double>(batch);
      double decay_penalty = 0.0;
      for (auto& [name, p] : named) {
        auto& g = p.mutable_grad();
        const auto& v = p.values();
        const bool is_weight = name.back() == 'w';
        for (std::size_t j = 0; j < g.size(); ++j) {
          g[j] *= inv;
          if (is_weight && cfg.weight_decay > 0.0) {
            g[j] += 2.0 * cfg.weight_decay * v[j];
            decay_penalty += cfg.weight_decay * v[j] * v[j];
          }
        }
      }
      optimizer.step();
      epoch_loss += batch_loss * inv + decay_penalty;
    }
    result.epoch_loss.push_back(epoch_loss /
                                std::ceil(static_cast<double>(order.size()) /
                                          static_cast<double>(opts.batch_size)));
  }
  result.training_errors = reconstruction_errors(params, windows);
  return result;
}

double fit_threshold(const std::vector<double>& training_errors,
                     const ThresholdPolicy& policy) {
  if (policy.kind == ThresholdPolicy::Kind::Fixed) return policy.value;
  if (training_errors.empty()) {
    throw UsageError("fit_threshold: no training errors");
  }
  if (policy.kind == ThresholdPolicy::Kind::Quantile) {
    const double q = policy.value;
    if (q < 0.0 || q > 1.0) {
      throw UsageError("fit_threshold: quantile must be in [0, 1]");
    }
    std::vector<double> sorted = training_errors;
    std::sort(sorted.begin(), sorted.end());
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  }
  // mean + k * std
  double mean = 0.0;
  for (double e : training_errors) mean += e;
  mean /= static_cast<double>(training_errors.size());
  double var = 0.0;
  for (double e : training_errors) var += (e - mean) * (e - mean);
  var /= static_cast<double>(training_errors.size());
  return mean + policy.value * std::sqrt(var);
}

std::vector<std::size_t> AnomalyReport::flagged_points() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < point_flags.size(); ++i) {
    if (point_flags[i]) out.push_back(i);
  }
  return out;
}

std::string AnomalyReport::to_json(const std::string& errors_file) const {
  json j;
  j["threshold"] = json_double(threshold);
  j["window_len"] = window_len;
  j["flags"] = flagged_points();
  j["errors_file"] = errors_file;
  return j.dump(2);
}

AnomalyReport detect_anomalies(const SeriesFrame& standardized_frame,
                               const AutoencoderParams& params,
                               double threshold, std::size_t window_len) {
  if (standardized_frame.rows() < window_len) {
    throw UsageError("detect_anomalies: frame has " +
                     std::to_string(standardized_frame.rows()) +
                     " rows, shorter than the detector window " +
                     std::to_string(window_len));
  }
  AnomalyReport report;
  report.threshold = threshold;
  report.window_len = window_len;
  report.n_points = standardized_frame.rows();
  const std::size_t n_windows = standardized_frame.rows() - window_len + 1;
  report.errors.resize(n_windows);
  report.window_flags.resize(n_windows);
  report.point_flags.assign(report.n_points, false);
  for (std::size_t i = 0; i < n_windows; ++i) {
    const auto w = flatten_window(standardized_frame, i, window_len);
    report.errors[i] = reconstruction_error(params, w);
    report.window_flags[i] = report.errors[i] > threshold;
    if (report.window_flags[i]) {
      for (std::size_t p = i; p < i + window_len; ++p) {
        report.point_flags[p] = true;
      }
    }
  }
  return report;
}

ExtractResult extract_extreme_windows(const SeriesFrame& frame,
                                      const AnomalyReport& report,
                                      std::size_t n) {
  if (n == 0) throw UsageError("extract_extreme_windows: n must be positive");
  if (report.n_points != frame.rows()) {
    throw UsageError("extract_extreme_windows: report covers " +
                     std::to_string(report.n_points) + " points, frame has " +
                     std::to_string(frame.rows()));
  }
  // first index of every maximal flagged run
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < report.point_flags.size(); ++i) {
    if (report.point_flags[i] && (i == 0 || !report.point_flags[i - 1])) {
      anchors.push_back(i);
    }
  }
  // runs anchored closer than n merge into the earliest
  std::vector<std::size_t> merged;
  for (std::size_t a : anchors) {
    if (!merged.empty() && a - merged.back() < n) continue;
    merged.push_back(a);
  }

  ExtractResult out;
  const std::size_t d = frame.n_features();
  for (std::size_t a : merged) {
    if (a < 2 * n || a + n > frame.rows()) {
      ++out.skipped;
      continue;
    }
    ExtremeWindow w;
    w.source_anomaly_index = a;
    w.sample.input_len = 2 * n;
    w.sample.n_features = d;
    w.sample.origin_index = a - 1;
    w.sample.input.assign(frame.features.begin() + (a - 2 * n) * d,
                          frame.features.begin() + a * d);
    w.sample.target.resize(n);
    for (std::size_t h = 0; h < n; ++h) {
      w.sample.target[h] = frame.target(a + h);
    }
    out.windows.push_back(std::move(w));
  }
  return out;
}

void write_errors_bin(const std::vector<double>& errors,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (double e : errors) {
    unsigned char bytes[8];
    std::uint64_t bits;
    std::memcpy(&bits, &e, 8);
    for (int i = 0; i < 8; ++i) {
      bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

}  // namespace voltcast
