#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "testutil.hpp"
#include "voltcast/data.hpp"
#include "voltcast/errors.hpp"

using namespace voltcast;

namespace {

std::string write_fixture(const std::string& dir, const std::string& name,
                          const std::string& body) {
  const std::string path = dir + "/" + name;
  std::ofstream f(path);
  f << body;
  return path;
}

SeriesFrame ramp_frame(std::size_t rows, std::size_t d = 2) {
  SeriesFrame f;
  f.cadence = 3600;
  f.target_index = 0;
  for (std::size_t c = 0; c < d; ++c) {
    f.feature_names.push_back("f" + std::to_string(c));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    f.timestamps.push_back(1000000 + static_cast<std::int64_t>(r) * 3600);
    for (std::size_t c = 0; c < d; ++c) {
      f.features.push_back(static_cast<double>(r + 10 * c));
    }
  }
  return f;
}

}  // namespace

TEST_CASE("load_csv happy path, both timestamp styles") {
  const std::string dir = testutil::tmp_dir("data1");
  const std::string iso = write_fixture(dir, "iso.csv",
                                        "timestamp,price,load\n"
                                        "2012-01-01T00:00:00Z,1.5,10\n"
                                        "2012-01-01T01:00:00Z,2.5,11\n"
                                        "2012-01-01T02:00:00Z,3.5,12\n"
                                        "2012-01-01T03:00:00Z,4.5,13\n");
  SeriesFrame f = load_csv(iso);
  CHECK(f.rows() == 4);
  CHECK(f.cadence == 3600);
  CHECK(f.n_features() == 2);
  CHECK(f.at(2, 0) == 3.5);
  CHECK(f.target_index == 0);

  const std::string epoch = write_fixture(dir, "epoch.csv",
                                          "timestamp,price\n"
                                          "0,1\n3600,2\n7200,3\n10800,4\n");
  SeriesFrame g = load_csv(epoch);
  CHECK(g.rows() == 4);
  CHECK(g.timestamps[1] == 3600);

  // rows arrive unsorted, loader sorts them
  const std::string shuffled = write_fixture(dir, "shuffled.csv",
                                             "timestamp,price\n"
                                             "7200,3\n0,1\n10800,4\n3600,2\n");
  SeriesFrame s = load_csv(shuffled);
  CHECK(s.timestamps.front() == 0);
  CHECK(s.at(3, 0) == 4.0);

  // named target column
  CsvSchema schema;
  schema.target_column = "load";
  CHECK(load_csv(iso, schema).target_index == 1);
  schema.target_column = "nope";
  CHECK_THROWS_WITH_AS(load_csv(iso, schema), doctest::Contains("nope"),
                       DataError);
}

TEST_CASE("load_csv error paths cite the row") {
  const std::string dir = testutil::tmp_dir("data2");
  const std::string bad_cell = write_fixture(dir, "bad.csv",
                                             "timestamp,price\n"
                                             "0,1\n3600,oops\n7200,3\n");
  CHECK_THROWS_WITH_AS(load_csv(bad_cell), doctest::Contains(":3"), DataError);

  const std::string dup = write_fixture(dir, "dup.csv",
                                        "timestamp,price\n"
                                        "0,1\n3600,2\n3600,2\n");
  CHECK_THROWS_WITH_AS(load_csv(dup), doctest::Contains("duplicate"),
                       DataError);

  const std::string gap = write_fixture(dir, "gap.csv",
                                        "timestamp,price\n"
                                        "0,1\n3600,2\n10800,4\n");
  CHECK_THROWS_WITH_AS(load_csv(gap), doctest::Contains("gap"), DataError);

  CHECK_THROWS_AS(load_csv(dir + "/missing.csv"), DataError);
}

TEST_CASE("forward fill inserts the previous values") {
  const std::string dir = testutil::tmp_dir("data3");
  const std::string gap = write_fixture(dir, "gap.csv",
                                        "timestamp,price,load\n"
                                        "0,1,5\n3600,2,6\n10800,4,8\n"
                                        "14400,5,9\n18000,6,10\n");
  CsvSchema schema;
  schema.forward_fill = true;
  SeriesFrame f = load_csv(gap, schema);
  CHECK(f.rows() == 6);  // one gap row inserted
  CHECK(f.timestamps[2] == 7200);
  CHECK(f.at(2, 0) == 2.0);  // previous row's values
  CHECK(f.at(2, 1) == 6.0);
  CHECK(f.at(3, 0) == 4.0);
}

TEST_CASE("csv round trip") {
  const std::string dir = testutil::tmp_dir("data4");
  SeriesFrame f = ramp_frame(8);
  write_csv(f, dir + "/out.csv");
  SeriesFrame g = load_csv(dir + "/out.csv");
  CHECK(g.rows() == f.rows());
  CHECK(g.timestamps == f.timestamps);
  CHECK(g.features == f.features);
  CHECK(g.feature_names == f.feature_names);
}

TEST_CASE("standardizer fit examples") {
  SeriesFrame f;
  f.feature_names = {"a", "b"};
  f.cadence = 1;
  f.target_index = 0;
  f.timestamps = {0, 1, 2};
  f.features = {5, 1, 5, 2, 5, 3};  // a constant, b = 1,2,3

  Standardizer p = fit_standardizer(f, 0, 3);
  CHECK(p.mean[0] == doctest::Approx(5.0));
  CHECK(p.stddev[0] == 1.0);  // zero variance -> 1
  CHECK(p.mean[1] == doctest::Approx(2.0));
  CHECK(p.stddev[1] == doctest::Approx(0.81649658));

  CHECK_THROWS_AS(fit_standardizer(f, 2, 2), UsageError);
}

TEST_CASE("apply / invert standardizer") {
  SeriesFrame f = ramp_frame(50);
  Standardizer p = fit_standardizer(f, 0, 50);
  SeriesFrame z = apply_standardizer(f, p);

  // training data maps to mean 0, variance 1
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < 50; ++r) mean += z.at(r, c);
    mean /= 50;
    for (std::size_t r = 0; r < 50; ++r) {
      var += (z.at(r, c) - mean) * (z.at(r, c) - mean);
    }
    var /= 50;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }

  // single-value example
  Standardizer q;
  q.mean = {2.0};
  q.stddev = {0.8165};
  q.feature_names = {"x"};
  CHECK(q.apply_value(3.0, 0) == doctest::Approx(1.2247).epsilon(1e-3));
  CHECK(q.invert_value(1.2247, 0) == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(q.invert_value(0.0, 0) == doctest::Approx(2.0));

  // round trips within 1e-9
  std::vector<double> zs;
  for (std::size_t r = 0; r < 50; ++r) zs.push_back(z.at(r, 0));
  std::vector<double> back = invert_standardizer(zs, p, 0);
  for (std::size_t r = 0; r < 50; ++r) {
    CHECK(std::abs(back[r] - f.at(r, 0)) < 1e-9);
  }

  // dimension guard
  Standardizer wrong;
  wrong.mean = {0};
  wrong.stddev = {1};
  wrong.feature_names = {"only"};
  CHECK_THROWS_AS(apply_standardizer(f, wrong), UsageError);
}

TEST_CASE("standardizer JSON persistence") {
  const std::string dir = testutil::tmp_dir("data5");
  Standardizer p;
  p.mean = {1.0, 2.0};
  p.stddev = {0.5, 4.0};
  p.feature_names = {"price", "load"};
  p.save(dir + "/std.json");
  Standardizer q = Standardizer::load(dir + "/std.json");
  CHECK(q.mean == p.mean);
  CHECK(q.stddev == p.stddev);
  CHECK(q.feature_names == p.feature_names);
  CHECK_THROWS_AS(Standardizer::from_json("{\"mean\": [1]}"), FormatError);
}

TEST_CASE("make_windows counting and layout") {
  SeriesFrame f = ramp_frame(10, 1);
  auto windows = make_windows(f, 4, 2, 1);
  CHECK(windows.size() == 5);
  CHECK(windows[0].origin_index == 3);
  CHECK(windows[0].input.size() == 4);
  CHECK(windows[0].target == std::vector<double>{4, 5});
  CHECK(windows[4].origin_index == 7);
  CHECK(windows[4].target == std::vector<double>{8, 9});

  // exactly one window at the boundary
  CHECK(make_windows(f, 8, 2).size() == 1);

  CHECK_THROWS_WITH_AS(make_windows(f, 9, 2),
                       doctest::Contains("at least 11"), UsageError);

  // count formula by exhaustive enumeration for small sizes
  for (std::size_t t = 2; t <= 64; ++t) {
    SeriesFrame g = ramp_frame(t, 1);
    for (std::size_t len = 1; len < t; ++len) {
      for (std::size_t h = 1; len + h <= t; ++h) {
        for (std::size_t stride : {1u, 2u, 3u}) {
          const auto w = make_windows(g, len, h, stride);
          CHECK(w.size() == (t - len - h) / stride + 1);
          // adjacency: target immediately follows the input rows
          for (const auto& s : w) {
            CHECK(s.target[0] ==
                  doctest::Approx(static_cast<double>(s.origin_index + 1)));
          }
        }
      }
    }
  }
}

TEST_CASE("chronological split") {
  SeriesFrame f = ramp_frame(100, 1);
  SplitFrames s = split_chronological(f, {0.7, 0.1, 0.2});
  CHECK(s.train.rows() == 70);
  CHECK(s.val.rows() == 10);
  CHECK(s.test.rows() == 20);

  // splits concatenate back exactly
  std::vector<double> joined;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    joined.insert(joined.end(), part->features.begin(), part->features.end());
  }
  CHECK(joined == f.features);

  // no temporal leakage
  CHECK(s.train.timestamps.back() < s.test.timestamps.front());

  SplitFrames all = split_chronological(f, {1.0, 0.0, 0.0});
  CHECK(all.train.rows() == 100);
  CHECK(all.val.rows() == 0);
  CHECK(all.test.rows() == 0);

  CHECK_THROWS_AS(split_chronological(f, {0.5, 0.1, 0.2}), UsageError);
}

TEST_CASE("no leakage: training windows end before the test split") {
  SeriesFrame f = ramp_frame(200, 1);
  SplitFrames s = split_chronological(f, {0.7, 0.1, 0.2});
  auto train_windows = make_windows(s.train, 12, 6);
  std::int64_t max_train_ts = 0;
  for (const auto& w : train_windows) {
    max_train_ts =
        std::max(max_train_ts, s.train.timestamps[w.origin_index]);
  }
  CHECK(max_train_ts < s.test.timestamps.front());
}
