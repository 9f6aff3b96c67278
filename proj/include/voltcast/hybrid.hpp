#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voltcast/autoencoder.hpp"
#include "voltcast/data.hpp"
#include "voltcast/transformer.hpp"

namespace voltcast {

// Five-stage training workflow: standardize, train the normal forecaster and
// the anomaly detector, fit the threshold, extract extreme-condition windows
// and (when enough exist) train a specialized extreme-condition forecaster.
// Serving dispatches between the two models on the detector's verdict.

struct HybridConfig {
  SplitSpec split;
  TransformerConfig model;       // normal forecaster; n_features/target_col
                                 // are filled in from the frame
  AutoencoderConfig detector;
  TrainOptions train;            // forecaster training (normal and extreme)
  AeTrainOptions detector_train;
  double blend_lambda = 0.5;
  std::uint64_t seed = 42;
  std::size_t min_extreme_windows = 8;
};

struct HybridModel {
  TransformerConfig normal_cfg;
  TransformerParams normal;
  std::optional<TransformerConfig> extreme_cfg;
  std::optional<TransformerParams> extreme;
  std::string no_extreme_reason;
  AutoencoderConfig detector_cfg;
  AutoencoderParams detector;
  double threshold = 0.0;
  Standardizer standardizer;
  double blend_lambda = 0.5;
  std::int64_t cadence = 0;
  std::uint64_t seed = 0;
  SplitSpec split;

  // Rows of history a forecast needs: the longest of the normal input, the
  // extreme input (2n) and the detector window.
  std::size_t required_history() const;
};

struct TrainReport {
  std::vector<EpochStats> normal_epochs;
  std::vector<EpochStats> extreme_epochs;
  std::vector<double> detector_epoch_loss;
  double threshold = 0.0;
  std::size_t extreme_window_count = 0;
  std::size_t extreme_skipped = 0;
  std::string no_extreme_reason;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_snapshot;  // JSON of the resolved HybridConfig

  std::string to_json() const;
};

std::string hybrid_config_to_json(const HybridConfig& cfg);

struct PipelineResult {
  HybridModel model;
  TrainReport report;
};

PipelineResult train_pipeline(const SeriesFrame& frame,
                              const HybridConfig& cfg);

enum class Regime { Normal, Extreme, Blend };
const char* regime_name(Regime r);

struct ForecastResult {
  std::vector<double> values;  // original price units
  std::vector<Regime> regime;  // one tag per step
  std::vector<std::int64_t> timestamps;
  bool anomaly_triggered = false;
  double trigger_error = 0.0;   // reconstruction error of the trigger window
  std::size_t dispatch_count = 0;

  std::string to_json() const;
};

struct DispatchResult {
  std::vector<double> values;  // standardized, length = normal horizon
  bool flagged = false;
  double error = 0.0;
  std::size_t blend_steps = 0;  // leading steps that blended in the extreme model
};

// One gate decision per forecast block: score the trailing detector window;
// unflagged (or no extreme model) runs the normal forecaster alone, flagged
// blends lambda * extreme + (1 - lambda) * normal over the first
// min(n, horizon) steps.
DispatchResult dispatch(const HybridModel& model,
                        const std::vector<double>& std_history,
                        std::size_t rows);

ForecastResult forecast_single_step(const HybridModel& model,
                                    const SeriesFrame& history);
ForecastResult forecast_multi_step_iterative(const HybridModel& model,
                                             const SeriesFrame& history,
                                             std::size_t total_horizon);

void save_model(const HybridModel& model, const std::string& dir);
HybridModel load_model(const std::string& dir);

}  // namespace voltcast
