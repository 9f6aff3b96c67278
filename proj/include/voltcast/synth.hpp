#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voltcast/data.hpp"

namespace voltcast {

// Synthetic hourly electricity-market corpora used by the test and
// acceptance suites in place of real market data.
//
//   seasonal  daily + weekly sinusoids, a persistent stochastic demand
//             component, and a mildly convex price response with
//             observation noise. No events.
//   spiky     seasonal plus K injected extreme events: level shifts of
//             8-12 sigma lasting 50-150 steps.
//   negative  spiky with the shifts driven downward so prices go below
//             zero inside events.
struct SynthSpec {
  std::string kind = "seasonal";
  std::size_t rows = 2000;
  std::size_t events = 10;
  std::uint64_t seed = 42;
};

struct SynthEvent {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  double magnitude = 0.0;
};

struct SynthResult {
  SeriesFrame frame;
  std::vector<SynthEvent> events;
  double base_sigma = 0.0;
};

SynthResult make_synthetic(const SynthSpec& spec);

std::string events_to_json(const SynthSpec& spec,
                           const std::vector<SynthEvent>& events,
                           double base_sigma);
std::vector<SynthEvent> events_from_json(const std::string& text);

}  // namespace voltcast
