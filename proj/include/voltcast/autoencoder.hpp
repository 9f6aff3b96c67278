#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voltcast/data.hpp"
#include "voltcast/rng.hpp"
#include "voltcast/tensor.hpp"

namespace voltcast {

// Unsupervised anomaly detector: a bottleneck autoencoder reconstructs
// sliding windows of the standardized series, and the squared reconstruction
// error against a fitted threshold flags extreme-condition data.

struct ThresholdPolicy {
  enum class Kind { Quantile, MeanPlusKSigma, Fixed };
  Kind kind = Kind::Quantile;
  double value = 0.99;  // q, k, or the fixed threshold itself

  static ThresholdPolicy quantile(double q) {
    return {Kind::Quantile, q};
  }
  static ThresholdPolicy mean_plus_k_sigma(double k) {
    return {Kind::MeanPlusKSigma, k};
  }
  static ThresholdPolicy fixed(double eps) { return {Kind::Fixed, eps}; }
};

struct AutoencoderConfig {
  std::size_t window_len = 24;  // steps per reconstruction unit
  std::size_t latent_dim = 32;
  std::vector<std::size_t> hidden = {128};
  double weight_decay = 1e-3;
  ThresholdPolicy threshold_policy = ThresholdPolicy::quantile(0.99);
  std::size_t extreme_n = 50;
  std::size_t n_features = 1;

  std::size_t input_dim() const { return window_len * n_features; }
  void validate() const;
};

struct AutoencoderParams {
  // encoder: input_dim -> hidden... -> latent; decoder mirrors it
  std::vector<Tensor> enc_w, enc_b;
  std::vector<Tensor> dec_w, dec_b;

  static AutoencoderParams init(const AutoencoderConfig& cfg, Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

Tensor ae_encode(Tape& tape, const AutoencoderParams& params, const Tensor& x);
Tensor ae_decode(Tape& tape, const AutoencoderParams& params, const Tensor& z);

// flattened row-major window starting at `start`
std::vector<double> flatten_window(const SeriesFrame& frame, std::size_t start,
                                   std::size_t window_len);
std::vector<std::vector<double>> sliding_windows(const SeriesFrame& frame,
                                                 std::size_t window_len);

// squared Euclidean distance between a window and its reconstruction
double squared_error(const std::vector<double>& x,
                     const std::vector<double>& xhat);
double reconstruction_error(const AutoencoderParams& params,
                            const std::vector<double>& window);
std::vector<double> reconstruction_errors(
    const AutoencoderParams& params,
    const std::vector<std::vector<double>>& windows);

struct AeTrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double lr = 1e-3;
};

struct AeTrainResult {
  std::vector<double> epoch_loss;       // recon + decay penalty per epoch
  std::vector<double> training_errors;  // final per-window errors
};

// Minimizes mean ||x - g(f(x))||^2 plus weight_decay * sum ||W||^2.
// Needs at least 32 windows.
AeTrainResult fit_autoencoder(AutoencoderParams& params,
                              const AutoencoderConfig& cfg,
                              const std::vector<std::vector<double>>& windows,
                              const AeTrainOptions& opts, Rng& rng);

double fit_threshold(const std::vector<double>& training_errors,
                     const ThresholdPolicy& policy);

struct AnomalyReport {
  std::vector<double> errors;  // per window start, stride 1
  std::vector<bool> window_flags;
  std::vector<bool> point_flags;  // OR over windows covering the point
  double threshold = 0.0;
  std::size_t window_len = 0;
  std::size_t n_points = 0;

  std::vector<std::size_t> flagged_points() const;
  std::string to_json(const std::string& errors_file) const;
};

// Scores every stride-1 window of the (already standardized) frame; a point
// is anomalous if any window containing it exceeds the threshold.
AnomalyReport detect_anomalies(const SeriesFrame& standardized_frame,
                               const AutoencoderParams& params,
                               double threshold, std::size_t window_len);

struct ExtremeWindow {
  WindowSample sample;  // input 2n x d, target n
  std::size_t source_anomaly_index = 0;
};

struct ExtractResult {
  std::vector<ExtremeWindow> windows;
  std::size_t skipped = 0;  // runs whose window would leave the frame
};

// One window per maximal run of flagged points, anchored at the run's first
// flagged index a: input rows [a-2n, a), target rows [a, a+n). Runs whose
// anchors are closer than n merge into the earliest run's window.
ExtractResult extract_extreme_windows(const SeriesFrame& frame,
                                      const AnomalyReport& report,
                                      std::size_t n);

void write_errors_bin(const std::vector<double>& errors,
                      const std::string& path);

}  // namespace voltcast
