#include "voltcast/hybrid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voltcast/checkpoint.hpp"
#include "voltcast/errors.hpp"
#include "voltcast/jsonio.hpp"

namespace voltcast {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json transformer_cfg_json(const TransformerConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"encoder_layers", c.n_encoder_layers},
              {"decoder_layers", c.n_decoder_layers},
              {"d_ff", c.d_ff},
              {"input_len", c.input_len},
              {"horizon", c.horizon},
              {"label_len", c.label_len},
              {"importance_factor", c.importance_factor},
              {"dropout", c.dropout},
              {"n_features", c.n_features},
              {"target_col", c.target_col}};
}

TransformerConfig transformer_cfg_from_json(const json& j) {
  TransformerConfig c;
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.n_encoder_layers = j.at("encoder_layers");
  c.n_decoder_layers = j.at("decoder_layers");
  c.d_ff = j.at("d_ff");
  c.input_len = j.at("input_len");
  c.horizon = j.at("horizon");
  c.label_len = j.at("label_len");
  c.importance_factor = j.at("importance_factor");
  c.dropout = j.at("dropout");
  c.n_features = j.at("n_features");
  c.target_col = j.at("target_col");
  return c;
}

json detector_cfg_json(const AutoencoderConfig& c) {
  const char* policy =
      c.threshold_policy.kind == ThresholdPolicy::Kind::Quantile
          ? "quantile"
          : (c.threshold_policy.kind == ThresholdPolicy::Kind::MeanPlusKSigma
                 ? "mean_plus_k_sigma"
                 : "fixed");
  return json{{"window_len", c.window_len},
              {"latent_dim", c.latent_dim},
              {"hidden", c.hidden},
              {"weight_decay", c.weight_decay},
              {"threshold", json{{"policy", policy},
                                 {"value", json_double(c.threshold_policy.value)}}},
              {"extreme_n", c.extreme_n},
              {"n_features", c.n_features}};
}

AutoencoderConfig detector_cfg_from_json(const json& j) {
  AutoencoderConfig c;
  c.window_len = j.at("window_len");
  c.latent_dim = j.at("latent_dim");
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.weight_decay = j.at("weight_decay");
  const std::string policy = j.at("threshold").at("policy");
  const double value = json_to_double(j.at("threshold").at("value"));
  if (policy == "quantile") {
    c.threshold_policy = ThresholdPolicy::quantile(value);
  } else if (policy == "mean_plus_k_sigma") {
    c.threshold_policy = ThresholdPolicy::mean_plus_k_sigma(value);
  } else if (policy == "fixed") {
    c.threshold_policy = ThresholdPolicy::fixed(value);
  } else {
    throw FormatError("unknown threshold policy '" + policy + "'");
  }
  c.extreme_n = j.at("extreme_n");
  c.n_features = j.at("n_features");
  return c;
}

json epoch_stats_json(const std::vector<EpochStats>& epochs) {
  json out = json::array();
  for (const auto& e : epochs) {
    out.push_back({{"train_mse", e.train_mse}, {"val_mse", e.val_mse}});
  }
  return out;
}

// Overwrite freshly initialized parameters with container blocks, matched by
// name, shapes checked.
void assign_blocks(std::vector<std::pair<std::string, Tensor>> target,
                   const std::vector<std::pair<std::string, Tensor>>& blocks,
                   const std::string& what) {
  if (target.size() != blocks.size()) {
    throw FormatError(what + ": expected " + std::to_string(target.size()) +
                      " parameter blocks, found " +
                      std::to_string(blocks.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].first != blocks[i].first ||
        target[i].second.shape() != blocks[i].second.shape()) {
      throw FormatError(what + ": block '" + blocks[i].first +
                        "' does not match expected '" + target[i].first + "'");
    }
    target[i].second.mutable_values() = blocks[i].second.values();
  }
}

std::vector<double> trailing_rows(const SeriesFrame& frame, std::size_t rows) {
  const std::size_t d = frame.n_features();
  const std::size_t from = frame.rows() - rows;
  return {frame.features.begin() + from * d, frame.features.end()};
}

std::vector<double> run_forecaster(const TransformerParams& params,
                                   const TransformerConfig& cfg,
                                   const std::vector<double>& std_history,
                                   std::size_t rows, std::size_t d) {
  const std::size_t take = cfg.input_len;
  const std::size_t from = rows - take;
  Tape tape = Tape::inference();
  Tensor window = Tensor::from(
      {take, d},
      std::vector<double>(std_history.begin() + from * d, std_history.end()),
      false);
  return forward(tape, params, cfg, window).values();
}

}  // namespace

std::size_t HybridModel::required_history() const {
  std::size_t need = std::max(normal_cfg.input_len, detector_cfg.window_len);
  if (extreme_cfg) need = std::max(need, extreme_cfg->input_len);
  return need;
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Normal:
      return "normal";
    case Regime::Extreme:
      return "extreme";
    default:
      return "blend";
  }
}

std::string hybrid_config_to_json(const HybridConfig& cfg) {
  json j;
  j["split"] = {{"train", cfg.split.train_fraction},
                {"val", cfg.split.val_fraction},
                {"test", cfg.split.test_fraction}};
  j["model"] = transformer_cfg_json(cfg.model);
  j["detector"] = detector_cfg_json(cfg.detector);
  j["train"] = {{"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr}};
  j["detector_train"] = {{"epochs", cfg.detector_train.epochs},
                         {"batch_size", cfg.detector_train.batch_size},
                         {"lr", cfg.detector_train.lr}};
  j["blend_lambda"] = cfg.blend_lambda;
  j["seed"] = cfg.seed;
  j["min_extreme_windows"] = cfg.min_extreme_windows;
  return j.dump(2);
}

std::string TrainReport::to_json() const {
  json j;
  j["normal_epochs"] = epoch_stats_json(normal_epochs);
  j["extreme_epochs"] = epoch_stats_json(extreme_epochs);
  j["detector_epoch_loss"] = detector_epoch_loss;
  j["threshold"] = json_double(threshold);
  j["extreme_window_count"] = extreme_window_count;
  j["extreme_skipped"] = extreme_skipped;
  j["no_extreme_reason"] = no_extreme_reason;
  j["wall_seconds"] = wall_seconds;
  j["seed"] = seed;
  j["config"] = json::parse(config_snapshot);
  return j.dump(2);
}

PipelineResult train_pipeline(const SeriesFrame& frame,
                              const HybridConfig& cfg_in) {
  const auto t0 = std::chrono::steady_clock::now();
  HybridConfig cfg = cfg_in;
  cfg.model.n_features = frame.n_features();
  cfg.model.target_col = frame.target_index;
  cfg.detector.n_features = frame.n_features();
  cfg.model.validate();
  cfg.detector.validate();

  auto staged = [](const std::string& stage, const std::string& msg) {
    return UsageError("train-pipeline stage '" + stage + "': " + msg);
  };

  PipelineResult out;
  TrainReport& report = out.report;
  report.seed = cfg.seed;
  report.config_snapshot = hybrid_config_to_json(cfg);

  // stage: split
  SplitFrames splits = split_chronological(frame, cfg.split);
  if (splits.train.rows() < cfg.model.input_len + cfg.model.horizon) {
    throw staged("split", "training split has " +
                              std::to_string(splits.train.rows()) +
                              " rows; need at least " +
                              std::to_string(cfg.model.input_len +
                                             cfg.model.horizon));
  }

  // stage: standardize (fitted on the training split only)
  Standardizer standardizer =
      fit_standardizer(splits.train, 0, splits.train.rows());
  SeriesFrame std_train = apply_standardizer(splits.train, standardizer);

  Rng rng(cfg.seed);

  // stage: normal-model
  std::vector<WindowSample> train_windows =
      make_windows(std_train, cfg.model.input_len, cfg.model.horizon);
  std::vector<WindowSample> val_windows;
  if (splits.val.rows() >= cfg.model.input_len + cfg.model.horizon) {
    SeriesFrame std_val = apply_standardizer(splits.val, standardizer);
    val_windows =
        make_windows(std_val, cfg.model.input_len, cfg.model.horizon);
  }
  TransformerParams normal = TransformerParams::init(cfg.model, rng);
  FitResult normal_fit = fit_transformer(normal, cfg.model, train_windows,
                                         val_windows, cfg.train, rng);
  report.normal_epochs = normal_fit.epochs;

  // stage: detector
  std::vector<std::vector<double>> detector_windows =
      sliding_windows(std_train, cfg.detector.window_len);
  AutoencoderParams detector = AutoencoderParams::init(cfg.detector, rng);
  AeTrainResult ae_fit = fit_autoencoder(detector, cfg.detector,
                                         detector_windows, cfg.detector_train,
                                         rng);
  report.detector_epoch_loss = ae_fit.epoch_loss;

  // stage: threshold
  const double threshold =
      fit_threshold(ae_fit.training_errors, cfg.detector.threshold_policy);
  report.threshold = threshold;

  // stage: detect + extract (on the training split)
  AnomalyReport anomalies = detect_anomalies(std_train, detector, threshold,
                                             cfg.detector.window_len);
  ExtractResult extremes =
      extract_extreme_windows(std_train, anomalies, cfg.detector.extreme_n);
  report.extreme_window_count = extremes.windows.size();
  report.extreme_skipped = extremes.skipped;

  HybridModel& model = out.model;
  model.normal_cfg = cfg.model;
  model.normal = std::move(normal);
  model.detector_cfg = cfg.detector;
  model.detector = std::move(detector);
  model.threshold = threshold;
  model.standardizer = standardizer;
  model.blend_lambda = cfg.blend_lambda;
  model.cadence = frame.cadence;
  model.seed = cfg.seed;
  model.split = cfg.split;

  // stage: extreme-model
  if (extremes.windows.empty()) {
    report.no_extreme_reason = "no extreme windows";
  } else if (extremes.windows.size() < cfg.min_extreme_windows) {
    report.no_extreme_reason =
        "only " + std::to_string(extremes.windows.size()) +
        " extreme windows extracted (need " +
        std::to_string(cfg.min_extreme_windows) + ")";
  } else {
    const std::size_t n = cfg.detector.extreme_n;
    TransformerConfig ecfg = cfg.model;
    ecfg.input_len = 2 * n;
    ecfg.horizon = n;
    ecfg.label_len = n;
    ecfg.validate();
    std::vector<WindowSample> esamples;
    esamples.reserve(extremes.windows.size());
    for (const auto& w : extremes.windows) esamples.push_back(w.sample);
    // chronological val carve-out, at least one window when >= 5
    std::vector<WindowSample> etrain = esamples, eval_set;
    if (esamples.size() >= 5) {
      const std::size_t n_val = std::max<std::size_t>(1, esamples.size() / 5);
      eval_set.assign(esamples.end() - n_val, esamples.end());
      etrain.assign(esamples.begin(), esamples.end() - n_val);
    }
    TransformerParams eparams = TransformerParams::init(ecfg, rng);
    FitResult efit =
        fit_transformer(eparams, ecfg, etrain, eval_set, cfg.train, rng);
    report.extreme_epochs = efit.epochs;
    model.extreme_cfg = ecfg;
    model.extreme = std::move(eparams);
  }
  model.no_extreme_reason = report.no_extreme_reason;

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

DispatchResult dispatch(const HybridModel& model,
                        const std::vector<double>& std_history,
                        std::size_t rows) {
  const std::size_t d = model.normal_cfg.n_features;
  if (rows * d != std_history.size()) {
    throw UsageError("dispatch: history buffer does not match row count");
  }
  if (rows < model.required_history()) {
    throw UsageError("dispatch: need at least " +
                     std::to_string(model.required_history()) +
                     " rows of history, have " + std::to_string(rows));
  }
  DispatchResult out;

  // score the trailing detector window
  const std::size_t w = model.detector_cfg.window_len;
  std::vector<double> tail_window(
      std_history.begin() + (rows - w) * d, std_history.end());
  out.error = reconstruction_error(model.detector, tail_window);
  out.flagged = out.error > model.threshold;

  out.values = run_forecaster(model.normal, model.normal_cfg, std_history,
                              rows, d);
  if (out.flagged && model.extreme) {
    const std::vector<double> extreme_vals = run_forecaster(
        *model.extreme, *model.extreme_cfg, std_history, rows, d);
    const double lambda = model.blend_lambda;
    out.blend_steps = std::min(extreme_vals.size(), out.values.size());
    for (std::size_t i = 0; i < out.blend_steps; ++i) {
      out.values[i] = lambda * extreme_vals[i] + (1.0 - lambda) * out.values[i];
    }
  }
  return out;
}

namespace {

void check_history(const HybridModel& model, const SeriesFrame& history) {
  if (history.n_features() != model.normal_cfg.n_features) {
    throw UsageError("forecast: history has " +
                     std::to_string(history.n_features()) +
                     " features but the model was trained on " +
                     std::to_string(model.normal_cfg.n_features));
  }
  if (history.rows() < model.required_history()) {
    throw UsageError("forecast: history too short, need at least " +
                     std::to_string(model.required_history()) + " rows");
  }
}

std::vector<double> standardize_rows(const HybridModel& model,
                                     const std::vector<double>& raw,
                                     std::size_t d) {
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = model.standardizer.apply_value(raw[i], i % d);
  }
  return out;
}

Regime step_regime(const HybridModel& model, const DispatchResult& d,
                   std::size_t step) {
  if (!d.flagged || step >= d.blend_steps) return Regime::Normal;
  return model.blend_lambda == 1.0 ? Regime::Extreme : Regime::Blend;
}

}  // namespace

ForecastResult forecast_single_step(const HybridModel& model,
                                    const SeriesFrame& history) {
  check_history(model, history);
  const std::size_t rows = model.required_history();
  const std::size_t d = history.n_features();
  const std::vector<double> raw = trailing_rows(history, rows);
  DispatchResult block = dispatch(model, standardize_rows(model, raw, d), rows);

  ForecastResult out;
  out.dispatch_count = 1;
  out.anomaly_triggered = block.flagged;
  out.trigger_error = block.error;
  out.values = {model.standardizer.invert_value(block.values[0],
                                                model.normal_cfg.target_col)};
  out.regime = {step_regime(model, block, 0)};
  out.timestamps = {history.timestamps.back() + model.cadence};
  return out;
}

ForecastResult forecast_multi_step_iterative(const HybridModel& model,
                                             const SeriesFrame& history,
                                             std::size_t total_horizon) {
  if (total_horizon == 0) {
    throw UsageError("forecast: horizon must be at least 1");
  }
  check_history(model, history);
  const std::size_t rows = model.required_history();
  const std::size_t d = history.n_features();
  const std::size_t target = model.normal_cfg.target_col;

  // working history in original units; predicted target values are appended,
  // exogenous features persist from the last observed row
  std::vector<double> working = trailing_rows(history, rows);
  std::vector<double> last_observed(working.end() - d, working.end());

  ForecastResult out;
  out.anomaly_triggered = false;
  bool have_trigger = false;
  while (out.values.size() < total_horizon) {
    DispatchResult block =
        dispatch(model, standardize_rows(model, working, d), rows);
    ++out.dispatch_count;
    if (out.dispatch_count == 1 || (block.flagged && !have_trigger)) {
      out.trigger_error = block.error;
    }
    if (block.flagged) {
      out.anomaly_triggered = true;
      have_trigger = true;
    }
    for (std::size_t i = 0;
         i < block.values.size() && out.values.size() < total_horizon; ++i) {
      const double value =
          model.standardizer.invert_value(block.values[i], target);
      out.values.push_back(value);
      out.regime.push_back(step_regime(model, block, i));
      // slide the working history forward by one predicted row
      working.erase(working.begin(), working.begin() + d);
      std::vector<double> row = last_observed;
      row[target] = value;
      working.insert(working.end(), row.begin(), row.end());
    }
  }
  out.timestamps.resize(out.values.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.timestamps[i] = history.timestamps.back() +
                        static_cast<std::int64_t>(i + 1) * model.cadence;
  }
  return out;
}

std::string ForecastResult::to_json() const {
  json j;
  j["values"] = values;
  json tags = json::array();
  for (Regime r : regime) tags.push_back(regime_name(r));
  j["regime"] = tags;
  json stamps = json::array();
  for (std::int64_t t : timestamps) stamps.push_back(format_iso8601(t));
  j["timestamps"] = stamps;
  j["anomaly_triggered"] = anomaly_triggered;
  j["trigger_error"] = json_double(trigger_error);
  j["dispatch_count"] = dispatch_count;
  return j.dump(2);
}

void save_model(const HybridModel& model, const std::string& dir) {
  fs::create_directories(dir);
  const std::string standardizer_file = "standardizer.json";
  model.standardizer.save(dir + "/" + standardizer_file);

  json normal_meta;
  normal_meta["kind"] = "forecaster";
  normal_meta["config"] = transformer_cfg_json(model.normal_cfg);
  normal_meta["feature_names"] = model.standardizer.feature_names;
  normal_meta["standardizer"] = standardizer_file;
  write_container(dir + "/normal.bin", normal_meta,
                  model.normal.named_parameters());

  if (model.extreme) {
    json extreme_meta;
    extreme_meta["kind"] = "forecaster";
    extreme_meta["config"] = transformer_cfg_json(*model.extreme_cfg);
    extreme_meta["feature_names"] = model.standardizer.feature_names;
    extreme_meta["standardizer"] = standardizer_file;
    write_container(dir + "/extreme.bin", extreme_meta,
                    model.extreme->named_parameters());
  }

  json det_meta;
  det_meta["kind"] = "detector";
  det_meta["config"] = detector_cfg_json(model.detector_cfg);
  det_meta["feature_names"] = model.standardizer.feature_names;
  det_meta["standardizer"] = standardizer_file;
  write_container(dir + "/detector.bin", det_meta,
                  model.detector.named_parameters());

  json manifest;
  manifest["format_version"] = 1;
  manifest["blend_lambda"] = model.blend_lambda;
  manifest["threshold"] = json_double(model.threshold);
  manifest["seed"] = model.seed;
  manifest["cadence"] = model.cadence;
  manifest["target_index"] = model.normal_cfg.target_col;
  manifest["split"] = {{"train", model.split.train_fraction},
                       {"val", model.split.val_fraction},
                       {"test", model.split.test_fraction}};
  manifest["no_extreme_reason"] = model.no_extreme_reason;
  manifest["files"] = {{"normal", "normal.bin"},
                       {"detector", "detector.bin"},
                       {"standardizer", standardizer_file}};
  if (model.extreme) manifest["files"]["extreme"] = "extreme.bin";
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw DataError("cannot write '" + dir + "/manifest.json'");
  mf << manifest.dump(2) << '\n';
}

HybridModel load_model(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw DataError("cannot open '" + dir + "/manifest.json'");
  std::stringstream ss;
  ss << mf.rdbuf();
  json manifest = json::parse(ss.str(), nullptr, false);
  if (manifest.is_discarded()) {
    throw FormatError("'" + dir + "/manifest.json' is not valid JSON");
  }
  if (manifest.value("format_version", 0) != 1) {
    throw FormatError("'" + dir + "': unsupported checkpoint version");
  }

  HybridModel model;
  model.blend_lambda = manifest.at("blend_lambda");
  model.threshold = json_to_double(manifest.at("threshold"));
  model.seed = manifest.at("seed");
  model.cadence = manifest.at("cadence");
  model.no_extreme_reason = manifest.value("no_extreme_reason", "");
  model.split.train_fraction = manifest.at("split").at("train");
  model.split.val_fraction = manifest.at("split").at("val");
  model.split.test_fraction = manifest.at("split").at("test");

  const json& files = manifest.at("files");
  model.standardizer =
      Standardizer::load(dir + "/" + files.at("standardizer").get<std::string>());

  Rng scratch(0);
  {
    std::vector<std::pair<std::string, Tensor>> blocks;
    json meta = read_container(
        dir + "/" + files.at("normal").get<std::string>(), blocks);
    model.normal_cfg = transformer_cfg_from_json(meta.at("config"));
    model.normal = TransformerParams::init(model.normal_cfg, scratch);
    assign_blocks(model.normal.named_parameters(), blocks, "normal model");
  }
  if (files.contains("extreme")) {
    std::vector<std::pair<std::string, Tensor>> blocks;
    json meta = read_container(
        dir + "/" + files.at("extreme").get<std::string>(), blocks);
    model.extreme_cfg = transformer_cfg_from_json(meta.at("config"));
    model.extreme = TransformerParams::init(*model.extreme_cfg, scratch);
    assign_blocks(model.extreme->named_parameters(), blocks, "extreme model");
  }
  {
    std::vector<std::pair<std::string, Tensor>> blocks;
    json meta = read_container(
        dir + "/" + files.at("detector").get<std::string>(), blocks);
    model.detector_cfg = detector_cfg_from_json(meta.at("config"));
    model.detector = AutoencoderParams::init(model.detector_cfg, scratch);
    assign_blocks(model.detector.named_parameters(), blocks, "detector");
  }
  return model;
}

}  // namespace voltcast
