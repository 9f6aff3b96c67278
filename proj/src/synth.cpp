#include "voltcast/synth.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "voltcast/errors.hpp"
#include "voltcast/rng.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

constexpr std::int64_t kStartEpoch = 1325376000;  // 2012-01-01T00:00:00Z
constexpr std::int64_t kCadence = 3600;

constexpr double kDailyAmp = 1.0;
constexpr double kWeeklyAmp = 0.5;
constexpr double kDemandPersistence = 0.97;
constexpr double kDemandShock = 0.15;
constexpr double kPriceCurveGain = 0.6;
constexpr double kPriceCurveKnee = 1.0;
constexpr double kObsNoise = 0.05;

double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

SynthResult make_synthetic(const SynthSpec& spec) {
  if (spec.rows < 500) {
    throw UsageError("synth: need at least 500 rows, got " +
                     std::to_string(spec.rows));
  }
  const bool spiky = spec.kind == "spiky";
  const bool negative = spec.kind == "negative";
  if (!spiky && !negative && spec.kind != "seasonal") {
    throw UsageError("synth: unknown kind '" + spec.kind +
                     "' (want seasonal, spiky or negative)");
  }

  Rng rng(spec.seed);
  const std::size_t t_rows = spec.rows;

  std::vector<double> load(t_rows), price(t_rows);
  double demand = 0.0;
  for (std::size_t t = 0; t < t_rows; ++t) {
    demand = kDemandPersistence * demand + kDemandShock * rng.normal();
    const double daily = kDailyAmp * std::sin(2.0 * M_PI * t / 24.0);
    const double weekly = kWeeklyAmp * std::sin(2.0 * M_PI * t / 168.0);
    load[t] = daily + weekly + demand;
    const double scarcity = std::max(0.0, load[t] - kPriceCurveKnee);
    price[t] =
        load[t] + kPriceCurveGain * scarcity * scarcity + kObsNoise * rng.normal();
  }

  SynthResult out;
  out.base_sigma = population_std(price);

  if (spiky || negative) {
    if (spec.events == 0) {
      throw UsageError("synth: spiky/negative corpora need events >= 1");
    }
    // non-overlapping events with a comfortable separation, away from the
    // series edges
    const std::size_t margin = 200;
    const std::size_t min_gap = 60;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t attempts = 0;
    while (spans.size() < spec.events) {
      if (++attempts > spec.events * 2000) {
        throw UsageError("synth: cannot place " + std::to_string(spec.events) +
                         " events in " + std::to_string(t_rows) +
                         " rows; reduce events or add rows");
      }
      const std::size_t dur = 50 + rng.index(101);  // 50..150
      if (t_rows < 2 * margin + dur) {
        throw UsageError("synth: series too short for events of length " +
                         std::to_string(dur));
      }
      const std::size_t start = margin + rng.index(t_rows - 2 * margin - dur);
      const std::size_t end = start + dur;
      bool clash = false;
      for (const auto& [s, e] : spans) {
        if (start < e + min_gap && s < end + min_gap) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      spans.emplace_back(start, end);
    }
    std::sort(spans.begin(), spans.end());
    for (const auto& [start, end] : spans) {
      const double size = (8.0 + 4.0 * rng.uniform()) * out.base_sigma;
      const double magnitude = negative ? -size : size;
      for (std::size_t t = start; t < end; ++t) price[t] += magnitude;
      out.events.push_back({start, end, magnitude});
    }
  }

  SeriesFrame& frame = out.frame;
  frame.feature_names = {"price", "load"};
  frame.target_index = 0;
  frame.cadence = kCadence;
  frame.timestamps.resize(t_rows);
  frame.features.resize(t_rows * 2);
  for (std::size_t t = 0; t < t_rows; ++t) {
    frame.timestamps[t] = kStartEpoch + static_cast<std::int64_t>(t) * kCadence;
    frame.features[t * 2 + 0] = price[t];
    frame.features[t * 2 + 1] = load[t];
  }
  return out;
}

std::string events_to_json(const SynthSpec& spec,
                           const std::vector<SynthEvent>& events,
                           double base_sigma) {
  json j;
  j["kind"] = spec.kind;
  j["rows"] = spec.rows;
  j["seed"] = spec.seed;
  j["base_sigma"] = base_sigma;
  j["events"] = json::array();
  for (const auto& e : events) {
    j["events"].push_back(
        {{"start", e.start}, {"end", e.end}, {"magnitude", e.magnitude}});
  }
  return j.dump(2);
}

std::vector<SynthEvent> events_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.contains("events")) {
    throw FormatError("event sidecar JSON must carry an 'events' array");
  }
  std::vector<SynthEvent> out;
  for (const auto& e : j["events"]) {
    out.push_back({e.at("start").get<std::size_t>(),
                   e.at("end").get<std::size_t>(),
                   e.at("magnitude").get<double>()});
  }
  return out;
}

}  // namespace voltcast
