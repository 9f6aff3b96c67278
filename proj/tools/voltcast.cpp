// voltcast: hybrid day-ahead electricity price forecasting toolkit.
//
// Subcommands wire the pipeline end to end: synthetic corpus generation,
// training, anomaly detection, forecasting, evaluation, the detector
// ablation, and the attention scaling benchmark.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voltcast/bench.hpp"
#include "voltcast/data.hpp"
#include "voltcast/errors.hpp"
#include "voltcast/hybrid.hpp"
#include "voltcast/jsonio.hpp"
#include "voltcast/metrics.hpp"
#include "voltcast/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voltcast;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 42;
  bool seed_set = false;
  std::string out = "out";
  bool quiet = false;
};

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
}

void say(const GlobalOpts& g, const std::string& line) {
  if (!g.quiet) std::cout << line << '\n';
}

// ---- run-config file ------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw UsageError("config: unknown key '" + where + key + "'");
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

struct RunConfig {
  HybridConfig hybrid;
  std::string data_path;
  std::string target_column;
  bool forward_fill = false;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) {
    throw FormatError("config '" + path + "' is not valid JSON");
  }
  check_keys(j,
             {"seed", "out", "data", "split", "model", "detector", "train",
              "detector_train", "blend_lambda", "min_extreme_windows"},
             "");
  maybe(j, "seed", rc.hybrid.seed);
  maybe(j, "blend_lambda", rc.hybrid.blend_lambda);
  maybe(j, "min_extreme_windows", rc.hybrid.min_extreme_windows);
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, {"path", "target", "forward_fill"}, "data.");
    maybe(d, "path", rc.data_path);
    maybe(d, "target", rc.target_column);
    maybe(d, "forward_fill", rc.forward_fill);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    check_keys(s, {"train", "val", "test"}, "split.");
    maybe(s, "train", rc.hybrid.split.train_fraction);
    maybe(s, "val", rc.hybrid.split.val_fraction);
    maybe(s, "test", rc.hybrid.split.test_fraction);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"d_model", "n_heads", "encoder_layers", "decoder_layers",
                "d_ff", "input_len", "horizon", "label_len",
                "importance_factor", "dropout"},
               "model.");
    TransformerConfig& c = rc.hybrid.model;
    maybe(m, "d_model", c.d_model);
    maybe(m, "n_heads", c.n_heads);
    maybe(m, "encoder_layers", c.n_encoder_layers);
    maybe(m, "decoder_layers", c.n_decoder_layers);
    maybe(m, "d_ff", c.d_ff);
    maybe(m, "input_len", c.input_len);
    maybe(m, "horizon", c.horizon);
    if (m.contains("label_len")) {
      c.label_len = m.at("label_len").get<std::size_t>();
    } else if (m.contains("horizon")) {
      c.label_len = std::min(c.horizon, c.input_len);
    }
    maybe(m, "importance_factor", c.importance_factor);
    maybe(m, "dropout", c.dropout);
  }
  if (j.contains("detector")) {
    const json& d = j["detector"];
    check_keys(d,
               {"window_len", "latent_dim", "hidden", "weight_decay",
                "threshold", "extreme_n"},
               "detector.");
    AutoencoderConfig& c = rc.hybrid.detector;
    maybe(d, "window_len", c.window_len);
    maybe(d, "latent_dim", c.latent_dim);
    maybe(d, "hidden", c.hidden);
    maybe(d, "weight_decay", c.weight_decay);
    maybe(d, "extreme_n", c.extreme_n);
    if (d.contains("threshold")) {
      const json& t = d["threshold"];
      check_keys(t, {"policy", "value"}, "detector.threshold.");
      const std::string policy = t.value("policy", "quantile");
      const double value =
          t.contains("value") ? json_to_double(t.at("value")) : 0.99;
      if (policy == "quantile") {
        c.threshold_policy = ThresholdPolicy::quantile(value);
      } else if (policy == "mean_plus_k_sigma") {
        c.threshold_policy = ThresholdPolicy::mean_plus_k_sigma(value);
      } else if (policy == "fixed") {
        c.threshold_policy = ThresholdPolicy::fixed(value);
      } else {
        throw UsageError("config: unknown threshold policy '" + policy + "'");
      }
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, {"max_epochs", "patience", "batch_size", "lr"}, "train.");
    maybe(t, "max_epochs", rc.hybrid.train.max_epochs);
    maybe(t, "patience", rc.hybrid.train.patience);
    maybe(t, "batch_size", rc.hybrid.train.batch_size);
    maybe(t, "lr", rc.hybrid.train.lr);
  }
  if (j.contains("detector_train")) {
    const json& t = j["detector_train"];
    check_keys(t, {"epochs", "batch_size", "lr"}, "detector_train.");
    maybe(t, "epochs", rc.hybrid.detector_train.epochs);
    maybe(t, "batch_size", rc.hybrid.detector_train.batch_size);
    maybe(t, "lr", rc.hybrid.detector_train.lr);
  }
  return rc;
}

// ---- subcommand bodies ----------------------------------------------------

int cmd_synth(const GlobalOpts& g, const std::string& kind, std::size_t rows,
              std::size_t events, std::uint64_t seed) {
  SynthSpec spec;
  spec.kind = kind;
  spec.rows = rows;
  spec.events = events;
  spec.seed = seed;
  SynthResult result = make_synthetic(spec);
  fs::create_directories(g.out);
  const std::string csv_path = g.out + "/synth_" + kind + ".csv";
  const std::string sidecar_path = g.out + "/synth_" + kind + "_events.json";
  write_csv(result.frame, csv_path);
  write_text_file(sidecar_path,
                  events_to_json(spec, result.events, result.base_sigma));
  say(g, "wrote " + csv_path + " (" + std::to_string(result.frame.rows()) +
             " rows, " + std::to_string(result.events.size()) + " events)");
  return kExitOk;
}

int cmd_train(const GlobalOpts& g, const RunConfig& rc) {
  if (rc.data_path.empty()) {
    throw UsageError("train: no data file (use --data or config data.path)");
  }
  CsvSchema schema;
  schema.target_column = rc.target_column;
  schema.forward_fill = rc.forward_fill;
  SeriesFrame frame = load_csv(rc.data_path, schema);
  PipelineResult result = train_pipeline(frame, rc.hybrid);
  fs::create_directories(g.out);
  save_model(result.model, g.out + "/model");
  write_text_file(g.out + "/train_report.json", result.report.to_json());
  say(g, "model saved to " + g.out + "/model");
  say(g, "threshold " + std::to_string(result.report.threshold) + ", " +
             std::to_string(result.report.extreme_window_count) +
             " extreme windows" +
             (result.report.no_extreme_reason.empty()
                  ? ""
                  : " (" + result.report.no_extreme_reason + ")"));
  return kExitOk;
}

int cmd_detect(const GlobalOpts& g, const std::string& model_dir,
               const std::string& data_path) {
  HybridModel model = load_model(model_dir);
  SeriesFrame frame = load_csv(data_path);
  if (frame.n_features() != model.normal_cfg.n_features) {
    throw UsageError("detect: data has " +
                     std::to_string(frame.n_features()) +
                     " features but the model expects " +
                     std::to_string(model.normal_cfg.n_features));
  }
  SeriesFrame standardized = apply_standardizer(frame, model.standardizer);
  AnomalyReport report =
      detect_anomalies(standardized, model.detector, model.threshold,
                       model.detector_cfg.window_len);
  fs::create_directories(g.out);
  const std::string errors_path = g.out + "/errors.bin";
  write_errors_bin(report.errors, errors_path);
  write_text_file(g.out + "/anomaly_report.json",
                  report.to_json("errors.bin"));
  const std::size_t flagged = report.flagged_points().size();
  std::cout << "flagged " << flagged << " of " << report.n_points
            << " points (threshold " << report.threshold << ")\n";
  return kExitOk;
}

int cmd_forecast(const GlobalOpts& g, const std::string& model_dir,
                 const std::string& history_path, std::size_t horizon,
                 const std::string& mode) {
  if (mode != "single" && mode != "iterative") {
    throw UsageError("forecast: mode must be 'single' or 'iterative'");
  }
  HybridModel model = load_model(model_dir);
  SeriesFrame history = load_csv(history_path);
  if (horizon == 0) horizon = model.normal_cfg.horizon;
  ForecastResult result =
      mode == "single"
          ? forecast_single_step(model, history)
          : forecast_multi_step_iterative(model, history, horizon);
  fs::create_directories(g.out);
  write_text_file(g.out + "/forecast.json", result.to_json());
  std::ostringstream csv;
  csv << "timestamp,prediction,regime\n";
  for (std::size_t i = 0; i < result.values.size(); ++i) {
    char num[48];
    std::snprintf(num, sizeof num, "%.10g", result.values[i]);
    csv << format_iso8601(result.timestamps[i]) << ',' << num << ','
        << regime_name(result.regime[i]) << '\n';
  }
  write_text_file(g.out + "/forecast.csv", csv.str());
  say(g, "wrote " + g.out + "/forecast.json (" +
             std::to_string(result.values.size()) + " steps, " +
             (result.anomaly_triggered ? "anomaly triggered"
                                       : "no anomaly") +
             ")");
  return kExitOk;
}

int cmd_eval(const GlobalOpts& g, const std::string& model_dir,
             const std::string& data_path, std::size_t ar_order,
             std::size_t stride, bool original_units) {
  HybridModel model = load_model(model_dir);
  SeriesFrame frame = load_csv(data_path);
  EvalReport report =
      evaluate_forecasters(model, frame, ar_order, stride, original_units);
  fs::create_directories(g.out);
  write_text_file(g.out + "/eval.json", report.to_json());
  write_text_file(g.out + "/eval.txt", report.to_text());
  std::cout << report.to_text();
  return kExitOk;
}

int cmd_ablate(const GlobalOpts& g, const RunConfig& rc, std::size_t stride) {
  if (rc.data_path.empty()) {
    throw UsageError("ablate: no data file (use --data or config data.path)");
  }
  CsvSchema schema;
  schema.target_column = rc.target_column;
  schema.forward_fill = rc.forward_fill;
  SeriesFrame frame = load_csv(rc.data_path, schema);
  AblationReport report = run_ablation(frame, rc.hybrid, stride);
  fs::create_directories(g.out);
  write_text_file(g.out + "/ablation.json", report.to_json());
  write_text_file(g.out + "/ablation.txt", report.to_text());
  std::cout << report.to_text();
  return kExitOk;
}

int cmd_bench(const GlobalOpts& g, const std::vector<std::size_t>& lengths,
              std::size_t d_model, std::size_t repeats) {
  BenchOptions opts;
  opts.seed = g.seed;
  ScalingReport report =
      bench_attention_scaling(lengths, d_model, repeats, opts);
  fs::create_directories(g.out);
  write_text_file(g.out + "/scaling_report.json", report.to_json());
  write_text_file(g.out + "/scaling_report.csv", report.to_csv());
  write_text_file(g.out + "/scaling_report.txt", report.to_text());
  std::cout << report.to_text();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voltcast: hybrid electricity price forecasting toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON run-config file");
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--quiet", g.quiet, "suppress informational output");

  // synth
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic market corpus (CSV + event sidecar)");
  std::string synth_kind = "seasonal";
  std::size_t synth_rows = 2000, synth_events = 10;
  synth->add_option("--kind", synth_kind,
                    "corpus kind: seasonal, spiky or negative");
  synth->add_option("--rows", synth_rows, "number of hourly rows (>= 500)");
  synth->add_option("--events", synth_events,
                    "injected extreme events (spiky/negative)");

  // train
  auto* train = app.add_subcommand(
      "train", "train the hybrid forecaster and write a checkpoint");
  std::string train_data, train_target;
  bool train_fill = false;
  train->add_option("--data", train_data, "training CSV");
  train->add_option("--target", train_target,
                    "target column (default: first feature column)");
  train->add_flag("--forward-fill", train_fill,
                  "forward-fill timestamp gaps at ingestion");

  // detect
  auto* detect = app.add_subcommand(
      "detect", "score a series with the trained detector");
  std::string detect_model, detect_data;
  detect->add_option("--model", detect_model, "checkpoint directory")
      ->required();
  detect->add_option("--data", detect_data, "CSV to scan")->required();

  // forecast
  auto* forecast = app.add_subcommand(
      "forecast", "forecast from the end of a history CSV");
  std::string fc_model, fc_history, fc_mode = "iterative";
  std::size_t fc_horizon = 0;
  forecast->add_option("--model", fc_model, "checkpoint directory")
      ->required();
  forecast->add_option("--history", fc_history, "history CSV")->required();
  forecast->add_option("--horizon", fc_horizon,
                       "total steps (default: model horizon)");
  forecast->add_option("--mode", fc_mode, "single or iterative");

  // eval
  auto* eval = app.add_subcommand(
      "eval", "score hybrid vs persistence and AR baselines on the test split");
  std::string eval_model, eval_data;
  std::size_t eval_ar = 24, eval_stride = 1;
  bool eval_original = false;
  eval->add_option("--model", eval_model, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "full series CSV")->required();
  eval->add_option("--ar-order", eval_ar, "AR baseline order");
  eval->add_option("--stride", eval_stride, "test window stride");
  eval->add_flag("--original-units", eval_original,
                 "report metrics in original price units");

  // ablate
  auto* ablate = app.add_subcommand(
      "ablate", "paired run: detector-gated hybrid vs detector disabled");
  std::string ablate_data, ablate_target;
  std::size_t ablate_stride = 1;
  ablate->add_option("--data", ablate_data, "training CSV");
  ablate->add_option("--target", ablate_target, "target column");
  ablate->add_option("--stride", ablate_stride, "test window stride");

  // bench
  auto* bench = app.add_subcommand(
      "bench", "attention scaling benchmark: full vs distilled encoder");
  std::vector<std::size_t> bench_lengths = {128, 256, 512, 1024};
  std::size_t bench_dmodel = 16, bench_repeats = 5;
  bench->add_option("--lengths", bench_lengths,
                    "sequence lengths to probe (>= 4 values)");
  bench->add_option("--d-model", bench_dmodel, "embedding width");
  bench->add_option("--repeats", bench_repeats, "timed repeats per probe");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = load_run_config(g.config_path);
    if (seed_opt->count()) rc.hybrid.seed = g.seed;

    if (synth->parsed()) {
      return cmd_synth(g, synth_kind, synth_rows, synth_events,
                       seed_opt->count() ? g.seed : rc.hybrid.seed);
    }
    if (train->parsed()) {
      if (!train_data.empty()) rc.data_path = train_data;
      if (!train_target.empty()) rc.target_column = train_target;
      if (train_fill) rc.forward_fill = true;
      return cmd_train(g, rc);
    }
    if (detect->parsed()) return cmd_detect(g, detect_model, detect_data);
    if (forecast->parsed()) {
      return cmd_forecast(g, fc_model, fc_history, fc_horizon, fc_mode);
    }
    if (eval->parsed()) {
      return cmd_eval(g, eval_model, eval_data, eval_ar, eval_stride,
                      eval_original);
    }
    if (ablate->parsed()) {
      if (!ablate_data.empty()) rc.data_path = ablate_data;
      if (!ablate_target.empty()) rc.target_column = ablate_target;
      return cmd_ablate(g, rc, ablate_stride);
    }
    if (bench->parsed()) {
      return cmd_bench(g, bench_lengths, bench_dmodel, bench_repeats);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}
