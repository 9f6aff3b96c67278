#include "voltcast/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voltcast/errors.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

// days since epoch for a civil date (proleptic Gregorian)
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yr + (m <= 2));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && *(e - 1) == ' ') --e;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && b != e;
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text, bool* parsed_ok) {
  if (parsed_ok) *parsed_ok = true;
  // pure integer -> epoch seconds
  {
    const char* b = text.data();
    const char* e = text.data() + text.size();
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec == std::errc() && p == e && b != e) return v;
  }
  // ISO-8601: YYYY-MM-DD[T ]HH:MM:SS[Z]
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int got = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d,
                              &sep, &h, &mi, &s);
  const bool date_only = got == 3;
  if ((got == 7 && (sep == 'T' || sep == ' ')) || date_only) {
    if (mo >= 1 && mo <= 12 && d >= 1 && d <= 31) {
      return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
    }
  }
  if (parsed_ok) {
    *parsed_ok = false;
    return 0;
  }
  throw DataError("unparseable timestamp '" + text + "'");
}

std::string format_iso8601(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, mo,
                d, static_cast<long long>(rem / 3600),
                static_cast<long long>((rem % 3600) / 60),
                static_cast<long long>(rem % 60));
  return buf;
}

SeriesFrame SeriesFrame::slice(std::size_t from, std::size_t to) const {
  SeriesFrame out;
  out.feature_names = feature_names;
  out.target_index = target_index;
  out.cadence = cadence;
  out.timestamps.assign(timestamps.begin() + from, timestamps.begin() + to);
  out.features.assign(features.begin() + from * n_features(),
                      features.begin() + to * n_features());
  return out;
}

SeriesFrame SeriesFrame::tail(std::size_t n) const {
  return slice(rows() - n, rows());
}

void SeriesFrame::append_row(std::int64_t timestamp,
                             const std::vector<double>& row) {
  timestamps.push_back(timestamp);
  features.insert(features.end(), row.begin(), row.end());
}

SeriesFrame load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  const auto header = split_line(line);
  if (header.empty() || header[0] != "timestamp") {
    throw DataError("'" + path + "': first column must be 'timestamp'");
  }
  const std::size_t d = header.size() - 1;
  if (d == 0) throw DataError("'" + path + "': no feature columns");

  SeriesFrame frame;
  frame.feature_names.assign(header.begin() + 1, header.end());
  if (!schema.target_column.empty()) {
    const auto it = std::find(frame.feature_names.begin(),
                              frame.feature_names.end(), schema.target_column);
    if (it == frame.feature_names.end()) {
      throw DataError("'" + path + "': missing column '" +
                      schema.target_column + "'");
    }
    frame.target_index =
        static_cast<std::size_t>(it - frame.feature_names.begin());
  }

  struct RawRow {
    std::int64_t ts;
    std::vector<double> vals;
  };
  std::vector<RawRow> raw;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    }
    bool ok = false;
    RawRow row;
    row.ts = parse_timestamp(cells[0], &ok);
    if (!ok) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": unparseable timestamp '" + cells[0] + "'");
    }
    row.vals.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      if (!parse_double(cells[j + 1], row.vals[j]) ||
          !std::isfinite(row.vals[j])) {
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": non-numeric value '" + cells[j + 1] +
                        "' in column '" + header[j + 1] + "'");
      }
    }
    raw.push_back(std::move(row));
  }
  if (raw.size() < 2) {
    throw DataError("'" + path + "': need at least 2 data rows");
  }

  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawRow& a, const RawRow& b) { return a.ts < b.ts; });

  // cadence = smallest gap between consecutive rows; a zero gap is a
  // duplicate, larger gaps must be exact multiples
  std::int64_t cadence = 0;
  for (std::size_t i = 1; i < raw.size(); ++i) {
    const std::int64_t gap = raw[i].ts - raw[i - 1].ts;
    if (gap == 0) {
      throw DataError("'" + path + "': duplicate timestamp " +
                      format_iso8601(raw[i].ts) + " (row " +
                      std::to_string(i + 1) + ")");
    }
    if (cadence == 0 || gap < cadence) cadence = gap;
  }
  frame.cadence = cadence;
  frame.timestamps.reserve(raw.size());
  frame.features.reserve(raw.size() * d);
  frame.append_row(raw[0].ts, raw[0].vals);
  for (std::size_t i = 1; i < raw.size(); ++i) {
    const std::int64_t gap = raw[i].ts - frame.timestamps.back();
    if (gap == 0) {
      throw DataError("'" + path + "': duplicate timestamp " +
                      format_iso8601(raw[i].ts) + " (row " +
                      std::to_string(i + 1) + ")");
    }
    if (gap % cadence != 0 || gap < 0) {
      throw DataError("'" + path + "': irregular timestamp " +
                      format_iso8601(raw[i].ts) + " (row " +
                      std::to_string(i + 1) + ")");
    }
    if (gap != cadence) {
      if (!schema.forward_fill) {
        throw DataError("'" + path + "': gap before " +
                        format_iso8601(raw[i].ts) + " (row " +
                        std::to_string(i + 1) +
                        "); enable forward-fill or repair the data");
      }
      std::vector<double> last(
          frame.features.end() - static_cast<std::ptrdiff_t>(d),
          frame.features.end());
      for (std::int64_t t = frame.timestamps.back() + cadence; t < raw[i].ts;
           t += cadence) {
        frame.append_row(t, last);
      }
    }
    frame.append_row(raw[i].ts, raw[i].vals);
  }
  return frame;
}

void write_csv(const SeriesFrame& frame, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& name : frame.feature_names) out << ',' << name;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    out << format_iso8601(frame.timestamps[r]);
    for (std::size_t c = 0; c < frame.n_features(); ++c) {
      std::snprintf(buf, sizeof buf, "%.10g", frame.at(r, c));
      out << ',' << buf;
    }
    out << '\n';
  }
}

Standardizer fit_standardizer(const SeriesFrame& frame, std::size_t row_begin,
                              std::size_t row_end) {
  if (row_begin >= row_end || row_end > frame.rows()) {
    throw UsageError("fit_standardizer: empty or out-of-range training range");
  }
  const std::size_t d = frame.n_features();
  const double n = static_cast<double>(row_end - row_begin);
  Standardizer p;
  p.feature_names = frame.feature_names;
  p.mean.assign(d, 0.0);
  p.stddev.assign(d, 0.0);
  for (std::size_t r = row_begin; r < row_end; ++r) {
    for (std::size_t c = 0; c < d; ++c) p.mean[c] += frame.at(r, c);
  }
  for (std::size_t c = 0; c < d; ++c) p.mean[c] /= n;
  for (std::size_t r = row_begin; r < row_end; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = frame.at(r, c) - p.mean[c];
      p.stddev[c] += dev * dev;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    p.stddev[c] = std::sqrt(p.stddev[c] / n);
    if (p.stddev[c] == 0.0) p.stddev[c] = 1.0;
  }
  return p;
}

SeriesFrame apply_standardizer(const SeriesFrame& frame,
                               const Standardizer& params) {
  if (params.size() != frame.n_features()) {
    throw UsageError("apply_standardizer: fitted on " +
                     std::to_string(params.size()) + " features, frame has " +
                     std::to_string(frame.n_features()));
  }
  SeriesFrame out = frame;
  const std::size_t d = frame.n_features();
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.features[r * d + c] = params.apply_value(frame.at(r, c), c);
    }
  }
  return out;
}

std::vector<double> invert_standardizer(const std::vector<double>& values,
                                        const Standardizer& params,
                                        std::size_t feature_index) {
  if (feature_index >= params.size()) {
    throw UsageError("invert_standardizer: feature index out of range");
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = params.invert_value(values[i], feature_index);
  }
  return out;
}

std::string Standardizer::to_json() const {
  json j;
  j["mean"] = mean;
  j["std"] = stddev;
  j["feature_names"] = feature_names;
  return j.dump(2);
}

Standardizer Standardizer::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.contains("mean") || !j.contains("std") ||
      !j.contains("feature_names")) {
    throw FormatError("standardizer JSON must carry mean/std/feature_names");
  }
  Standardizer p;
  p.mean = j["mean"].get<std::vector<double>>();
  p.stddev = j["std"].get<std::vector<double>>();
  p.feature_names = j["feature_names"].get<std::vector<std::string>>();
  if (p.mean.size() != p.stddev.size() ||
      p.mean.size() != p.feature_names.size()) {
    throw FormatError("standardizer JSON arrays disagree in length");
  }
  return p;
}

void Standardizer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << to_json() << '\n';
}

Standardizer Standardizer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<WindowSample> make_windows(const SeriesFrame& frame,
                                       std::size_t input_len,
                                       std::size_t horizon,
                                       std::size_t stride) {
  if (input_len == 0 || horizon == 0 || stride == 0) {
    throw UsageError("make_windows: input_len, horizon and stride must be positive");
  }
  const std::size_t need = input_len + horizon;
  if (frame.rows() < need) {
    throw UsageError("make_windows: need at least " + std::to_string(need) +
                     " rows (input " + std::to_string(input_len) +
                     " + horizon " + std::to_string(horizon) + "), have " +
                     std::to_string(frame.rows()));
  }
  const std::size_t count = (frame.rows() - need) / stride + 1;
  const std::size_t d = frame.n_features();
  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * stride;
    WindowSample s;
    s.input_len = input_len;
    s.n_features = d;
    s.origin_index = start + input_len - 1;
    s.input.assign(frame.features.begin() + start * d,
                   frame.features.begin() + (start + input_len) * d);
    s.target.resize(horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
      s.target[h] = frame.target(s.origin_index + 1 + h);
    }
    out.push_back(std::move(s));
  }
  return out;
}

SplitFrames split_chronological(const SeriesFrame& frame,
                                const SplitSpec& spec) {
  const double sum =
      spec.train_fraction + spec.val_fraction + spec.test_fraction;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw UsageError("split fractions must sum to 1, got " +
                     std::to_string(sum));
  }
  if (spec.train_fraction < 0 || spec.val_fraction < 0 ||
      spec.test_fraction < 0) {
    throw UsageError("split fractions must be non-negative");
  }
  const std::size_t t = frame.rows();
  const std::size_t n_train =
      static_cast<std::size_t>(std::floor(spec.train_fraction * t));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(spec.val_fraction * t));
  SplitFrames out;
  out.train = frame.slice(0, n_train);
  out.val = frame.slice(n_train, n_train + n_val);
  out.test = frame.slice(n_train + n_val, t);
  return out;
}

}  // namespace voltcast
