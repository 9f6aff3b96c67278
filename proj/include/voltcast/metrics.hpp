#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "voltcast/data.hpp"
#include "voltcast/hybrid.hpp"

namespace voltcast {

double mse(const std::vector<double>& y, const std::vector<double>& yhat);
double mae(const std::vector<double>& y, const std::vector<double>& yhat);

// Repeats the last observed target value h times.
std::vector<double> persistence_baseline(const std::vector<double>& history,
                                         std::size_t h);

// Least-squares AR(p) without intercept, solved via the normal equations on
// the lagged design matrix.
struct ArModel {
  std::size_t order = 0;
  std::vector<double> coef;  // coef[i] multiplies lag i+1
};

ArModel ar_fit(const std::vector<double>& series, std::size_t order);
// Recursive h-step forecast from the end of `history`.
std::vector<double> ar_forecast(const ArModel& model,
                                const std::vector<double>& history,
                                std::size_t h);

struct MetricSet {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
  std::string units = "standardized";
};

struct EvalReport {
  MetricSet hybrid;
  MetricSet persistence;
  MetricSet ar;
  std::size_t window_count = 0;
  std::size_t ar_order = 0;

  std::string to_json() const;
  std::string to_text() const;
};

// Splits the frame with the model's stored fractions, fits the AR baseline
// on the training split, and scores hybrid / persistence / AR forecasts over
// every test window. Metrics are in standardized units unless
// original_units is set.
EvalReport evaluate_forecasters(const HybridModel& model,
                                const SeriesFrame& frame,
                                std::size_t ar_order = 24,
                                std::size_t stride = 1,
                                bool original_units = false);

struct AblationReport {
  MetricSet with_overall;
  MetricSet without_overall;
  MetricSet with_flagged;
  MetricSet without_flagged;
  std::size_t flagged_steps = 0;
  std::size_t window_count = 0;

  std::string to_json() const;
  std::string to_text() const;
};

// Trains the full hybrid and an ASM-disabled variant (threshold fixed at
// +infinity) on identical splits and seed, then reports paired test metrics
// overall and restricted to the regions the detector flags on the test
// split.
AblationReport run_ablation(const SeriesFrame& frame, const HybridConfig& cfg,
                            std::size_t stride = 1);

}  // namespace voltcast
