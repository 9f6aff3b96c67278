#include "voltcast/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voltcast/errors.hpp"
#include "voltcast/transformer.hpp"

namespace voltcast {

namespace {

using nlohmann::json;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double fit_loglog_slope(const std::vector<std::size_t>& lengths,
                        const std::vector<double>& seconds) {
  const std::size_t n = lengths.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(static_cast<double>(lengths[i]));
    const double y = std::log(seconds[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

struct ProbeResult {
  double seconds = 0.0;
  std::size_t peak_elements = 0;
};

ProbeResult probe_encoder(const TransformerParams& params,
                          const TransformerConfig& cfg, const Tensor& window,
                          AttentionKind kind, bool distill,
                          std::size_t repeats) {
  ProbeResult out;
  {  // warm-up, also measures peak activation elements
    memory::reset_peak();
    const std::size_t live_before = memory::live_elements();
    Tape tape = Tape::inference();
    EncoderOutput enc =
        encode_variant(tape, params, cfg, window, kind, distill);
    out.peak_elements = memory::peak_elements() - live_before;
    (void)enc;
  }
  std::vector<double> times(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape = Tape::inference();
    EncoderOutput enc =
        encode_variant(tape, params, cfg, window, kind, distill);
    (void)enc;
    times[r] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  }
  out.seconds = median(std::move(times));
  return out;
}

}  // namespace

ScalingReport bench_attention_scaling(std::vector<std::size_t> lengths,
                                      std::size_t d_model, std::size_t repeats,
                                      const BenchOptions& opts) {
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());
  if (lengths.size() < 4) {
    throw UsageError("bench: need at least 4 distinct lengths");
  }
  for (std::size_t len : lengths) {
    if (len < 16) {
      throw UsageError("bench: lengths must be at least 16, got " +
                       std::to_string(len));
    }
  }
  if (repeats == 0) throw UsageError("bench: repeats must be positive");

  ScalingReport report;
  report.d_model = d_model;
  report.repeats = repeats;

  for (std::size_t len : lengths) {
    TransformerConfig cfg;
    cfg.d_model = d_model;
    cfg.n_heads = d_model % opts.n_heads == 0 ? opts.n_heads : 1;
    cfg.n_encoder_layers = opts.n_layers;
    cfg.n_decoder_layers = 1;
    cfg.d_ff = opts.d_ff ? opts.d_ff : 2 * d_model;
    cfg.input_len = len;
    cfg.horizon = 1;
    cfg.label_len = 1;
    cfg.importance_factor = opts.importance_factor;
    cfg.dropout = 0.0;
    cfg.n_features = 1;
    cfg.validate();

    Rng rng(opts.seed + len);
    TransformerParams params = TransformerParams::init(cfg, rng);
    std::vector<double> data(len);
    for (double& v : data) v = rng.normal();
    Tensor window = Tensor::from({len, 1}, std::move(data), false);

    ScalingProbe probe;
    probe.length = len;
    const ProbeResult full = probe_encoder(params, cfg, window,
                                           AttentionKind::Full, false, repeats);
    const ProbeResult distilled = probe_encoder(
        params, cfg, window, AttentionKind::Importance, true, repeats);
    probe.full_seconds = full.seconds;
    probe.distilled_seconds = distilled.seconds;
    probe.full_peak_elements = full.peak_elements;
    probe.distilled_peak_elements = distilled.peak_elements;
    if (probe.full_seconds < opts.min_measurable_seconds ||
        probe.distilled_seconds < opts.min_measurable_seconds) {
      throw NumericError("bench: probe at length " + std::to_string(len) +
                         " is below timer resolution; use larger lengths");
    }
    report.probes.push_back(probe);
  }

  std::vector<std::size_t> ls;
  std::vector<double> full_t, dist_t;
  for (const auto& p : report.probes) {
    ls.push_back(p.length);
    full_t.push_back(p.full_seconds);
    dist_t.push_back(p.distilled_seconds);
  }
  report.full_exponent = fit_loglog_slope(ls, full_t);
  report.distilled_exponent = fit_loglog_slope(ls, dist_t);
  return report;
}

std::string ScalingReport::to_csv() const {
  std::ostringstream os;
  os << "length,variant,median_seconds,peak_elements\n";
  for (const auto& p : probes) {
    os << p.length << ",full," << p.full_seconds << ','
       << p.full_peak_elements << '\n';
    os << p.length << ",distilled," << p.distilled_seconds << ','
       << p.distilled_peak_elements << '\n';
  }
  return os.str();
}

std::string ScalingReport::to_json() const {
  json j;
  j["d_model"] = d_model;
  j["repeats"] = repeats;
  j["full_exponent"] = full_exponent;
  j["distilled_exponent"] = distilled_exponent;
  j["probes"] = json::array();
  for (const auto& p : probes) {
    j["probes"].push_back({{"length", p.length},
                           {"full_seconds", p.full_seconds},
                           {"distilled_seconds", p.distilled_seconds},
                           {"full_peak_elements", p.full_peak_elements},
                           {"distilled_peak_elements",
                            p.distilled_peak_elements}});
  }
  return j.dump(2);
}

std::string ScalingReport::to_text() const {
  std::ostringstream os;
  char line[160];
  os << "length   full_seconds  dist_seconds    full_peak    dist_peak\n";
  for (const auto& p : probes) {
    std::snprintf(line, sizeof line, "%6zu %13.6f %13.6f %12zu %12zu\n",
                  p.length, p.full_seconds, p.distilled_seconds,
                  p.full_peak_elements, p.distilled_peak_elements);
    os << line;
  }
  std::snprintf(line, sizeof line,
                "fitted exponents: full %.3f, distilled %.3f\n", full_exponent,
                distilled_exponent);
  os << line;
  return os.str();
}

}  // namespace voltcast
