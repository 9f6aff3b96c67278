#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace voltcast {

// Timestamped multivariate series, T rows x d features, with one designated
// target column. Timestamps are epoch seconds at a fixed cadence.
struct SeriesFrame {
  std::vector<std::int64_t> timestamps;
  std::vector<double> features;  // row-major T x d
  std::vector<std::string> feature_names;
  std::size_t target_index = 0;
  std::int64_t cadence = 0;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  double at(std::size_t row, std::size_t col) const {
    return features[row * n_features() + col];
  }
  double target(std::size_t row) const { return at(row, target_index); }
  const std::string& target_name() const { return feature_names[target_index]; }

  SeriesFrame slice(std::size_t from, std::size_t to) const;
  SeriesFrame tail(std::size_t n) const;
  void append_row(std::int64_t timestamp, const std::vector<double>& row);
};

struct CsvSchema {
  // empty target_column means "use the first feature column"
  std::string target_column;
  bool forward_fill = false;
};

// Parses the CSV interface format: header row, first column `timestamp`
// (ISO-8601 or epoch seconds, auto-detected), remaining columns numeric.
// Rows are sorted by timestamp; duplicates and (unless forward_fill) gaps
// are ingestion errors naming the offending row.
SeriesFrame load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const SeriesFrame& frame, const std::string& path);

std::string format_iso8601(std::int64_t epoch_seconds);
// Accepts "YYYY-MM-DDTHH:MM:SS[Z]", a space separator, or raw epoch seconds.
std::int64_t parse_timestamp(const std::string& text, bool* parsed_ok = nullptr);

// Per-feature population mean / standard deviation, fitted on the training
// range only. Zero-variance columns get std = 1 so standardizing them is a
// pure centering.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::string> feature_names;

  std::size_t size() const { return mean.size(); }
  double apply_value(double x, std::size_t col) const {
    return (x - mean[col]) / stddev[col];
  }
  double invert_value(double z, std::size_t col) const {
    return z * stddev[col] + mean[col];
  }

  std::string to_json() const;
  static Standardizer from_json(const std::string& text);
  void save(const std::string& path) const;
  static Standardizer load(const std::string& path);
};

Standardizer fit_standardizer(const SeriesFrame& frame, std::size_t row_begin,
                              std::size_t row_end);
SeriesFrame apply_standardizer(const SeriesFrame& frame,
                               const Standardizer& params);
std::vector<double> invert_standardizer(const std::vector<double>& values,
                                        const Standardizer& params,
                                        std::size_t feature_index);

// One supervised pair: input window of length L (all features), target
// horizon of length H (target column only). origin_index is the position of
// the last input row in the source frame; the target covers
// origin_index+1 .. origin_index+H.
struct WindowSample {
  std::vector<double> input;  // row-major L x d
  std::size_t input_len = 0;
  std::size_t n_features = 0;
  std::vector<double> target;
  std::size_t origin_index = 0;
};

std::vector<WindowSample> make_windows(const SeriesFrame& frame,
                                       std::size_t input_len,
                                       std::size_t horizon,
                                       std::size_t stride = 1);

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
};

struct SplitFrames {
  SeriesFrame train;
  SeriesFrame val;
  SeriesFrame test;
};

// Chronological, contiguous, exhaustive partition; fractions must sum to 1.
SplitFrames split_chronological(const SeriesFrame& frame,
                                const SplitSpec& spec);

}  // namespace voltcast
