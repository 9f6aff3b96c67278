#include "voltcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voltcast/errors.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

void check_paired(const char* op, const std::vector<double>& y,
                  const std::vector<double>& yhat) {
  if (y.empty()) throw UsageError(std::string(op) + ": empty input");
  if (y.size() != yhat.size()) {
    throw UsageError(std::string(op) + ": length mismatch, " +
                     std::to_string(y.size()) + " vs " +
                     std::to_string(yhat.size()));
  }
}

struct MetricAccum {
  double sq = 0.0;
  double ab = 0.0;
  std::size_t n = 0;

  void add(double truth, double pred) {
    const double r = pred - truth;
    sq += r * r;
    ab += std::abs(r);
    ++n;
  }

  MetricSet finish(const std::string& units) const {
    MetricSet m;
    m.n = n;
    m.units = units;
    if (n) {
      m.mse = sq / static_cast<double>(n);
      m.mae = ab / static_cast<double>(n);
    }
    return m;
  }
};

json metric_json(const MetricSet& m) {
  return json{{"mse", m.mse}, {"mae", m.mae}, {"n", m.n}, {"units", m.units}};
}

// Gaussian elimination with partial pivoting; a is n x n row-major.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b,
                                 std::size_t n) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (std::abs(a[pivot * n + col]) < 1e-12) {
      throw NumericError(
          "ar_fit: singular normal matrix; try a smaller order");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a[col * n + c], a[pivot * n + c]);
      }
      std::swap(b[col], b[pivot]);
    }
    const double inv = 1.0 / a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] * inv;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ri = n; ri-- > 0;) {
    double acc = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) acc -= a[ri * n + c] * x[c];
    x[ri] = acc / a[ri * n + ri];
  }
  return x;
}

std::vector<double> window_targets_std(const WindowSample& w,
                                       std::size_t target_col) {
  std::vector<double> out(w.input_len);
  for (std::size_t r = 0; r < w.input_len; ++r) {
    out[r] = w.input[r * w.n_features + target_col];
  }
  return out;
}

}  // namespace

double mse(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_paired("mse", y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    acc += r * r;
  }
  return acc / static_cast<double>(y.size());
}

double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_paired("mae", y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

std::vector<double> persistence_baseline(const std::vector<double>& history,
                                         std::size_t h) {
  if (history.empty()) throw UsageError("persistence: empty history");
  return std::vector<double>(h, history.back());
}

ArModel ar_fit(const std::vector<double>& series, std::size_t order) {
  if (order == 0) throw UsageError("ar_fit: order must be positive");
  if (series.size() <= order + 1) {
    throw UsageError("ar_fit: series of length " +
                     std::to_string(series.size()) +
                     " cannot support order " + std::to_string(order));
  }
  const std::size_t rows = series.size() - order;
  // normal equations X^T X coef = X^T y, X[r][i] = series[order + r - 1 - i]
  std::vector<double> xtx(order * order, 0.0);
  std::vector<double> xty(order, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = series[order + r];
    for (std::size_t i = 0; i < order; ++i) {
      const double xi = series[order + r - 1 - i];
      xty[i] += xi * y;
      for (std::size_t j = i; j < order; ++j) {
        xtx[i * order + j] += xi * series[order + r - 1 - j];
      }
    }
  }
  for (std::size_t i = 0; i < order; ++i) {
    for (std::size_t j = 0; j < i; ++j) xtx[i * order + j] = xtx[j * order + i];
  }
  ArModel model;
  model.order = order;
  model.coef = solve_linear(std::move(xtx), std::move(xty), order);
  return model;
}

std::vector<double> ar_forecast(const ArModel& model,
                                const std::vector<double>& history,
                                std::size_t h) {
  if (history.size() < model.order) {
    throw UsageError("ar_forecast: history shorter than the model order");
  }
  std::vector<double> buf(history.end() - model.order, history.end());
  std::vector<double> out;
  out.reserve(h);
  for (std::size_t step = 0; step < h; ++step) {
    double next = 0.0;
    for (std::size_t i = 0; i < model.order; ++i) {
      next += model.coef[i] * buf[buf.size() - 1 - i];
    }
    out.push_back(next);
    buf.erase(buf.begin());
    buf.push_back(next);
  }
  return out;
}

EvalReport evaluate_forecasters(const HybridModel& model,
                                const SeriesFrame& frame, std::size_t ar_order,
                                std::size_t stride, bool original_units) {
  SplitFrames splits = split_chronological(frame, model.split);
  const SeriesFrame std_train =
      apply_standardizer(splits.train, model.standardizer);
  const SeriesFrame std_test =
      apply_standardizer(splits.test, model.standardizer);

  std::vector<double> train_target(std_train.rows());
  for (std::size_t r = 0; r < std_train.rows(); ++r) {
    train_target[r] = std_train.target(r);
  }
  const ArModel ar = ar_fit(train_target, ar_order);

  const std::size_t window_rows = model.required_history();
  const std::size_t horizon = model.normal_cfg.horizon;
  const std::size_t target_col = model.normal_cfg.target_col;
  const auto windows = make_windows(std_test, window_rows, horizon, stride);

  const std::string units = original_units ? "original" : "standardized";
  MetricAccum acc_hybrid, acc_persist, acc_ar;
  for (const WindowSample& w : windows) {
    const DispatchResult block = dispatch(model, w.input, window_rows);
    const std::vector<double> history = window_targets_std(w, target_col);
    const std::vector<double> persist = persistence_baseline(history, horizon);
    const std::vector<double> ar_pred = ar_forecast(ar, history, horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
      double truth = w.target[h];
      double p_hybrid = block.values[h];
      double p_persist = persist[h];
      double p_ar = ar_pred[h];
      if (original_units) {
        truth = model.standardizer.invert_value(truth, target_col);
        p_hybrid = model.standardizer.invert_value(p_hybrid, target_col);
        p_persist = model.standardizer.invert_value(p_persist, target_col);
        p_ar = model.standardizer.invert_value(p_ar, target_col);
      }
      acc_hybrid.add(truth, p_hybrid);
      acc_persist.add(truth, p_persist);
      acc_ar.add(truth, p_ar);
    }
  }
  EvalReport report;
  report.hybrid = acc_hybrid.finish(units);
  report.persistence = acc_persist.finish(units);
  report.ar = acc_ar.finish(units);
  report.window_count = windows.size();
  report.ar_order = ar_order;
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["hybrid"] = metric_json(hybrid);
  j["persistence"] = metric_json(persistence);
  j["ar"] = metric_json(ar);
  j["window_count"] = window_count;
  j["ar_order"] = ar_order;
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  char line[128];
  os << "forecaster            mse        mae          n\n";
  std::snprintf(line, sizeof line, "%-16s %10.6f %10.6f %10zu\n", "hybrid",
                hybrid.mse, hybrid.mae, hybrid.n);
  os << line;
  std::snprintf(line, sizeof line, "%-16s %10.6f %10.6f %10zu\n", "persistence",
                persistence.mse, persistence.mae, persistence.n);
  os << line;
  std::snprintf(line, sizeof line, "%-16s %10.6f %10.6f %10zu\n",
                ("ar(" + std::to_string(ar_order) + ")").c_str(), ar.mse,
                ar.mae, ar.n);
  os << line;
  os << "units: " << hybrid.units << ", windows: " << window_count << "\n";
  return os.str();
}

AblationReport run_ablation(const SeriesFrame& frame, const HybridConfig& cfg,
                            std::size_t stride) {
  PipelineResult with_asm = train_pipeline(frame, cfg);

  HybridConfig disabled_cfg = cfg;
  disabled_cfg.detector.threshold_policy =
      ThresholdPolicy::fixed(std::numeric_limits<double>::infinity());
  PipelineResult without_asm = train_pipeline(frame, disabled_cfg);

  const HybridModel& a = with_asm.model;
  const HybridModel& b = without_asm.model;

  SplitFrames splits = split_chronological(frame, cfg.split);
  const SeriesFrame std_test = apply_standardizer(splits.test, a.standardizer);

  // flagged regions come from the with-ASM detector, applied identically to
  // both variants
  const AnomalyReport flags = detect_anomalies(
      std_test, a.detector, a.threshold, a.detector_cfg.window_len);

  const std::size_t window_rows =
      std::max(a.required_history(), b.required_history());
  const std::size_t horizon = a.normal_cfg.horizon;
  const auto windows = make_windows(std_test, window_rows, horizon, stride);

  MetricAccum a_all, b_all, a_flag, b_flag;
  for (const WindowSample& w : windows) {
    const DispatchResult block_a = dispatch(a, w.input, window_rows);
    const DispatchResult block_b = dispatch(b, w.input, window_rows);
    for (std::size_t h = 0; h < horizon; ++h) {
      const double truth = w.target[h];
      a_all.add(truth, block_a.values[h]);
      b_all.add(truth, block_b.values[h]);
      const std::size_t pos = w.origin_index + 1 + h;
      if (flags.point_flags[pos]) {
        a_flag.add(truth, block_a.values[h]);
        b_flag.add(truth, block_b.values[h]);
      }
    }
  }
  AblationReport report;
  report.with_overall = a_all.finish("standardized");
  report.without_overall = b_all.finish("standardized");
  report.with_flagged = a_flag.finish("standardized");
  report.without_flagged = b_flag.finish("standardized");
  report.flagged_steps = a_flag.n;
  report.window_count = windows.size();
  return report;
}

std::string AblationReport::to_json() const {
  json j;
  j["with_asm"] = {{"overall", metric_json(with_overall)},
                   {"flagged", metric_json(with_flagged)}};
  j["without_asm"] = {{"overall", metric_json(without_overall)},
                      {"flagged", metric_json(without_flagged)}};
  j["flagged_steps"] = flagged_steps;
  j["window_count"] = window_count;
  return j.dump(2);
}

std::string AblationReport::to_text() const {
  std::ostringstream os;
  char line[160];
  os << "variant           overall_mse overall_mae flagged_mse flagged_mae\n";
  std::snprintf(line, sizeof line, "%-16s %11.6f %11.6f %11.6f %11.6f\n",
                "with-detector", with_overall.mse, with_overall.mae,
                with_flagged.mse, with_flagged.mae);
  os << line;
  std::snprintf(line, sizeof line, "%-16s %11.6f %11.6f %11.6f %11.6f\n",
                "without", without_overall.mse, without_overall.mae,
                without_flagged.mse, without_flagged.mae);
  os << line;
  os << "flagged steps: " << flagged_steps << " of "
     << with_overall.n << "\n";
  return os.str();
}

}  // namespace voltcast
