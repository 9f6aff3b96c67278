#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace voltcast {

// Empirical scaling probe contrasting the quadratic-cost full-attention
// encoder with the importance+distillation encoder: forward-pass wall time
// and peak live tensor elements per sequence length, plus fitted log-log
// exponents.

struct ScalingProbe {
  std::size_t length = 0;
  double full_seconds = 0.0;
  double distilled_seconds = 0.0;
  std::size_t full_peak_elements = 0;
  std::size_t distilled_peak_elements = 0;
};

struct ScalingReport {
  std::vector<ScalingProbe> probes;
  double full_exponent = 0.0;
  double distilled_exponent = 0.0;
  std::size_t d_model = 0;
  std::size_t repeats = 0;

  std::string to_csv() const;   // length,variant,median_seconds,peak_elements
  std::string to_json() const;
  std::string to_text() const;
};

struct BenchOptions {
  std::size_t n_heads = 2;
  std::size_t n_layers = 3;
  std::size_t d_ff = 0;  // 0 -> 2 * d_model
  double importance_factor = 5.0;
  std::uint64_t seed = 2024;
  // probes whose median lands below this are unmeasurable
  double min_measurable_seconds = 1e-6;
};

// Needs >= 4 strictly increasing lengths, each >= 16. Probes run
// sequentially; timings are medians over `repeats` forwards after one
// warm-up.
ScalingReport bench_attention_scaling(std::vector<std::size_t> lengths,
                                      std::size_t d_model, std::size_t repeats,
                                      const BenchOptions& opts = {});

}  // namespace voltcast
