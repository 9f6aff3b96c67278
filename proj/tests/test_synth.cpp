#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "testutil.hpp"
#include "voltcast/data.hpp"
#include "voltcast/errors.hpp"
#include "voltcast/synth.hpp"

using namespace voltcast;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("seasonal corpus: clean, right size, hourly") {
  SynthSpec spec;
  spec.kind = "seasonal";
  spec.rows = 2000;
  spec.seed = 5;
  SynthResult r = make_synthetic(spec);
  CHECK(r.frame.rows() == 2000);
  CHECK(r.events.empty());
  CHECK(r.frame.cadence == 3600);
  CHECK(r.frame.feature_names ==
        std::vector<std::string>{"price", "load"});
  CHECK(r.base_sigma > 0.0);
}

TEST_CASE("spiky corpus: events sized and placed per contract") {
  SynthSpec spec;
  spec.kind = "spiky";
  spec.rows = 4000;
  spec.events = 10;
  spec.seed = 6;
  SynthResult r = make_synthetic(spec);
  CHECK(r.events.size() == 10);
  for (const auto& e : r.events) {
    const std::size_t len = e.end - e.start;
    CHECK(len >= 50);
    CHECK(len <= 150);
    CHECK(e.start >= 1);
    CHECK(e.end < r.frame.rows());
    CHECK(std::abs(e.magnitude) >= 8.0 * r.base_sigma);
    CHECK(std::abs(e.magnitude) <= 12.0 * r.base_sigma);
    CHECK(e.magnitude > 0.0);
  }
  // events are disjoint and ordered
  for (std::size_t i = 1; i < r.events.size(); ++i) {
    CHECK(r.events[i].start >= r.events[i - 1].end);
  }
}

TEST_CASE("negative corpus drives prices below zero inside events") {
  SynthSpec spec;
  spec.kind = "negative";
  spec.rows = 3000;
  spec.events = 5;
  spec.seed = 7;
  SynthResult r = make_synthetic(spec);
  for (const auto& e : r.events) {
    CHECK(e.magnitude < 0.0);
    double min_price = 1e300;
    for (std::size_t t = e.start; t < e.end; ++t) {
      min_price = std::min(min_price, r.frame.at(t, 0));
    }
    CHECK(min_price < 0.0);
  }
}

TEST_CASE("same seed gives a byte-identical CSV and sidecar") {
  const std::string dir = testutil::tmp_dir("synth");
  SynthSpec spec;
  spec.kind = "spiky";
  spec.rows = 1000;
  spec.events = 3;
  spec.seed = 99;
  SynthResult a = make_synthetic(spec);
  SynthResult b = make_synthetic(spec);
  write_csv(a.frame, dir + "/a.csv");
  write_csv(b.frame, dir + "/b.csv");
  CHECK(file_bytes(dir + "/a.csv") == file_bytes(dir + "/b.csv"));
  CHECK(events_to_json(spec, a.events, a.base_sigma) ==
        events_to_json(spec, b.events, b.base_sigma));
}

TEST_CASE("sidecar JSON round trip") {
  SynthSpec spec;
  spec.kind = "spiky";
  spec.rows = 900;
  spec.events = 4;
  spec.seed = 3;
  SynthResult r = make_synthetic(spec);
  const std::string text = events_to_json(spec, r.events, r.base_sigma);
  const auto parsed = events_from_json(text);
  REQUIRE(parsed.size() == r.events.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].start == r.events[i].start);
    CHECK(parsed[i].end == r.events[i].end);
    CHECK(parsed[i].magnitude == doctest::Approx(r.events[i].magnitude));
  }
  CHECK_THROWS_AS(events_from_json("{}"), FormatError);
}

TEST_CASE("synth input validation") {
  SynthSpec spec;
  spec.rows = 100;
  CHECK_THROWS_WITH_AS(make_synthetic(spec), doctest::Contains("500"),
                       UsageError);
  spec.rows = 600;
  spec.kind = "surprise";
  CHECK_THROWS_AS(make_synthetic(spec), UsageError);
}
