#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "raincast/bundle.hpp"
#include "raincast/dataset.hpp"
#include "raincast/features.hpp"
#include "raincast/synthetic.hpp"

using namespace raincast;
using namespace raincast::data;

namespace {

/// Minimal manifest + matching CSV text for tests.
struct Fixture {
  DatasetManifest manifest;
  std::string csv;
};

Fixture make_fixture(int rows, int cols, std::vector<std::string> vars, int days,
                     double (*value)(int d, int r, int c, int ch)) {
  Fixture fx;
  fx.manifest.grid_rows = rows;
  fx.manifest.grid_cols = cols;
  fx.manifest.variables = vars;
  fx.manifest.date_start = Date{2010, 6, 1};
  fx.manifest.date_end = Date{2010, 6, 1}.plus(days - 1);
  fx.manifest.city = "testville";
  std::ostringstream out;
  out << "date,row,col,variable,value\n";
  for (int d = 0; d < days; ++d)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (std::size_t ch = 0; ch < vars.size(); ++ch) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.17g", value(d, r, c, static_cast<int>(ch)));
          out << fx.manifest.date_start.plus(d).iso() << ',' << r << ',' << c << ',' << vars[ch]
              << ',' << buf << '\n';
        }
  fx.csv = out.str();
  return fx;
}

FeatureCube ingest(const Fixture& fx) {
  std::istringstream in(fx.csv);
  return ingest_csv(fx.manifest, in);
}

}  // namespace

TEST_CASE("dates: serial round trip and parsing") {
  Date d{2010, 6, 1};
  REQUIRE(Date::from_serial(d.serial()) == d);
  REQUIRE(d.plus(30).iso() == "2010-07-01");
  REQUIRE(Date::parse("1999-12-31").next() == Date{2000, 1, 1});
  REQUIRE_THROWS_AS(Date::parse("2010-13-01"), std::invalid_argument);
  REQUIRE_THROWS_AS(Date::parse("2010-02-30"), std::invalid_argument);
  REQUIRE_THROWS_AS(Date::parse("junk"), std::invalid_argument);
}

TEST_CASE("ingest: dense cube from long CSV") {
  Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 2,
                            [](int d, int, int, int) { return d + 1.0; });
  FeatureCube cube = ingest(fx);
  REQUIRE(cube.days() == 2);
  REQUIRE(cube.width() == 1);
  REQUIRE(cube.at(0, 0, 0, 0) == 1.0);
  REQUIRE(cube.at(1, 0, 0, 0) == 2.0);
}

TEST_CASE("ingest: missing, duplicate and unknown cells are rejected with coordinates") {
  Fixture fx = make_fixture(2, 2, {"total_precipitation", "rh"}, 2,
                            [](int d, int r, int c, int ch) { return d + r + c + ch + 0.5; });

  SECTION("missing cell") {
    // drop the last data line
    std::string csv = fx.csv;
    csv.erase(csv.rfind("2010-06-02,1,1,rh"));
    std::istringstream in(csv);
    REQUIRE_THROWS_WITH(ingest_csv(fx.manifest, in),
                        Catch::Matchers::ContainsSubstring("missing cell") &&
                            Catch::Matchers::ContainsSubstring("2010-06-02") &&
                            Catch::Matchers::ContainsSubstring("(1,1)") &&
                            Catch::Matchers::ContainsSubstring("rh"));
  }
  SECTION("duplicate cell") {
    std::string csv = fx.csv + "2010-06-01,0,0,rh,9.0\n";
    std::istringstream in(csv);
    REQUIRE_THROWS_WITH(ingest_csv(fx.manifest, in),
                        Catch::Matchers::ContainsSubstring("duplicate cell"));
  }
  SECTION("unknown variable") {
    std::string csv = fx.csv + "2010-06-01,0,0,mystery,1.0\n";
    std::istringstream in(csv);
    REQUIRE_THROWS_WITH(ingest_csv(fx.manifest, in),
                        Catch::Matchers::ContainsSubstring("unknown variable"));
  }
}

TEST_CASE("ingest/export round trip is bit-exact") {
  Fixture fx = make_fixture(3, 3, {"total_precipitation", "rh", "t2m", "wind_u"}, 30,
                            [](int d, int r, int c, int ch) {
                              Rng rng(static_cast<std::uint64_t>(((d * 3 + r) * 3 + c) * 4 + ch));
                              return rng.uniform(-5.0, 40.0);
                            });
  FeatureCube cube = ingest(fx);
  std::ostringstream exported;
  export_csv(cube, exported);
  std::istringstream in(exported.str());
  FeatureCube again = ingest_csv(fx.manifest, in);
  REQUIRE(again.values == cube.values);
  REQUIRE(again.channels == cube.channels);
}

TEST_CASE("manifest rejects duplicates and reversed ranges") {
  DatasetManifest m;
  m.grid_rows = 2;
  m.grid_cols = 2;
  m.variables = {"a", "a"};
  m.date_start = Date{2010, 6, 1};
  m.date_end = Date{2010, 6, 5};
  REQUIRE_THROWS_AS(m.validate(), std::invalid_argument);
  m.variables = {"a", "b"};
  REQUIRE_NOTHROW(m.validate());
  m.date_end = Date{2010, 5, 1};
  REQUIRE_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("lag features shift within each cell's series") {
  Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 4,
                            [](int d, int, int, int) { return d + 1.0; });  // 1,2,3,4
  FeatureCube cube = ingest(fx);

  FeatureCube lag1 = build_lag_features(cube, {1});
  REQUIRE(lag1.channels == std::vector<std::string>{"total_precipitation",
                                                    "total_precipitation_lag1"});
  REQUIRE(lag1.warmup == 1);
  REQUIRE(lag1.at(1, 0, 0, 1) == 1.0);
  REQUIRE(lag1.at(2, 0, 0, 1) == 2.0);
  REQUIRE(lag1.at(3, 0, 0, 1) == 3.0);

  FeatureCube lag3 = build_lag_features(cube, {3});
  REQUIRE(lag3.warmup == 3);  // exactly one valid day remains out of four

  REQUIRE_THROWS_AS(build_lag_features(ingest(make_fixture(1, 1, {"total_precipitation"}, 3,
                                                           [](int, int, int, int) { return 1.0; })),
                                       std::vector<int>{3}),
                    std::invalid_argument);
}

TEST_CASE("lag features: exhaustive index check on a random cube") {
  Fixture fx = make_fixture(3, 2, {"total_precipitation", "rh"}, 12,
                            [](int d, int r, int c, int ch) {
                              Rng rng(static_cast<std::uint64_t>(((d * 3 + r) * 2 + c) * 2 + ch + 7));
                              return rng.uniform(0.0, 10.0);
                            });
  FeatureCube cube = ingest(fx);
  FeatureCube lagged = build_lag_features(cube, {1, 2, 3});
  REQUIRE(lagged.width() == 8);
  for (int lag = 1; lag <= 3; ++lag)
    for (int ch = 0; ch < 2; ++ch) {
      const int lch = lagged.channel_of(cube.channels[ch] + "_lag" + std::to_string(lag));
      for (int d = lag; d < cube.days(); ++d)
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 2; ++c)
            REQUIRE(lagged.at(d, r, c, lch) == cube.at(d - lag, r, c, ch));
    }
}

TEST_CASE("precipitation deltas") {
  SECTION("requires the lag channels") {
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 6,
                              [](int d, int, int, int) { return 1.0 * d; });
    REQUIRE_THROWS_WITH(build_precip_deltas(ingest(fx)),
                        Catch::Matchers::ContainsSubstring("total_precipitation_lag1"));
  }

  SECTION("constant precipitation gives zero deltas") {
    Fixture fx = make_fixture(2, 2, {"total_precipitation"}, 8,
                              [](int, int, int, int) { return 4.2; });
    FeatureCube cube = build_precip_deltas(build_lag_features(ingest(fx), {1, 2, 3}));
    for (int lag = 1; lag <= 3; ++lag) {
      const int ch = cube.channel_of("total_precipitation_delta" + std::to_string(lag));
      for (int d = cube.warmup; d < cube.days(); ++d)
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c) REQUIRE(cube.at(d, r, c, ch) == 0.0);
    }
  }

  SECTION("hand case: P = [0,2,5], delta1 at t=2 is P1 - P2 = -3") {
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 5, [](int d, int, int, int) {
      const double p[5] = {0, 2, 5, 1, 3};
      return p[d];
    });
    FeatureCube cube = build_precip_deltas(build_lag_features(ingest(fx), {1, 2, 3}));
    const int d1 = cube.channel_of("total_precipitation_delta1");
    REQUIRE(cube.at(2, 0, 0, d1) == -3.0);
  }

  SECTION("telescoping: delta1 + delta2 at t equals P_{t-2} - P_t, and P reconstructs") {
    // values quantized to 2^-20 mm so IEEE subtraction is exact and the
    // identities hold bitwise
    Fixture fx = make_fixture(2, 3, {"total_precipitation", "rh"}, 15,
                              [](int d, int r, int c, int ch) {
                                Rng rng(static_cast<std::uint64_t>(((d * 2 + r) * 3 + c) * 2 + ch));
                                return std::round(rng.uniform(0.0, 20.0) * 1048576.0) / 1048576.0;
                              });
    FeatureCube raw = ingest(fx);
    FeatureCube cube = build_precip_deltas(build_lag_features(raw, {1, 2, 3}));
    const int d1 = cube.channel_of("total_precipitation_delta1");
    const int d2 = cube.channel_of("total_precipitation_delta2");
    const int l1 = cube.channel_of("total_precipitation_lag1");
    for (int d = 3; d < cube.days(); ++d)
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c) {
          REQUIRE(cube.at(d, r, c, d1) + cube.at(d, r, c, d2) ==
                  raw.at(d - 2, r, c, 0) - raw.at(d, r, c, 0));
          // P_t = P_{t-1} - delta1
          REQUIRE(cube.at(d, r, c, l1) - cube.at(d, r, c, d1) == raw.at(d, r, c, 0));
        }
  }
}

TEST_CASE("quantiles and robust scaling") {
  SECTION("worked example: [1,2,3,4,100]") {
    std::vector<double> v = {1, 2, 3, 4, 100};
    REQUIRE(quantile_sorted(v, 0.25) == 2.0);
    REQUIRE(quantile_sorted(v, 0.50) == 3.0);
    REQUIRE(quantile_sorted(v, 0.75) == 4.0);
    // x' = (100 - 3) / 2
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 5, [](int d, int, int, int) {
      const double p[5] = {1, 2, 3, 4, 100};
      return p[d];
    });
    FeatureCube cube = ingest(fx);
    ScalerParams sp = robust_fit(cube, 0, 5);
    REQUIRE(sp.median[0] == 3.0);
    REQUIRE(sp.iqr[0] == 2.0);
    FeatureCube scaled = robust_transform(cube, sp);
    REQUIRE(scaled.at(4, 0, 0, 0) == 48.5);
  }

  SECTION("constant channel scales to exact zeros") {
    Fixture fx = make_fixture(2, 2, {"total_precipitation", "flat"}, 6,
                              [](int d, int r, int c, int ch) {
                                return ch == 1 ? 7.0 : d + r + c + 0.0;
                              });
    FeatureCube cube = ingest(fx);
    ScalerParams sp = robust_fit(cube, 0, 6);
    REQUIRE(sp.iqr[1] == 1.0);  // guard kicked in
    FeatureCube scaled = robust_transform(cube, sp);
    for (int d = 0; d < 6; ++d)
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) REQUIRE(scaled.at(d, r, c, 1) == 0.0);
  }

  SECTION("transformed training channel has median zero") {
    Fixture fx = make_fixture(2, 2, {"total_precipitation"}, 21,
                              [](int d, int r, int c, int) {
                                Rng rng(static_cast<std::uint64_t>((d * 2 + r) * 2 + c + 3));
                                return rng.uniform(0.0, 30.0);
                              });
    FeatureCube cube = ingest(fx);
    ScalerParams sp = robust_fit(cube, 0, 21);
    FeatureCube scaled = robust_transform(cube, sp);
    std::vector<double> all;
    for (int d = 0; d < 21; ++d)
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) all.push_back(scaled.at(d, r, c, 0));
    std::sort(all.begin(), all.end());
    REQUIRE(std::abs(quantile_sorted(all, 0.5)) < 1e-12);
  }
}

TEST_CASE("target transform: log1p and clamped inverse") {
  REQUIRE(log1p_target(0.0) == 0.0);
  REQUIRE(std::abs(expm1_inverse(log1p_target(7.3)) - 7.3) < 1e-12);
  REQUIRE_THROWS_AS(log1p_target(-0.5), std::invalid_argument);
  bool clamped = false;
  REQUIRE(expm1_inverse(-0.01, &clamped) == 0.0);
  REQUIRE(clamped);
  clamped = true;
  REQUIRE(expm1_inverse(0.5, &clamped) > 0.0);
  REQUIRE_FALSE(clamped);
}

TEST_CASE("sequencing: counting and target values") {
  auto flat = [](int d, int, int, int) { return 3.0 + 0.0 * d; };

  SECTION("8 valid days, T=7, exactly one sample; y = log(4) for 3 mm/day") {
    Fixture fx = make_fixture(2, 2, {"total_precipitation"}, 8, flat);
    FeatureCube cube = ingest(fx);
    std::vector<double> mm(8, 3.0);
    SequencingResult res = assemble_sequences(cube, mm, 7);
    REQUIRE(res.samples.size() == 1);
    REQUIRE(res.samples[0].y == Catch::Approx(std::log(4.0)).margin(1e-12));
    REQUIRE(res.samples[0].y == Catch::Approx(1.386294).margin(1e-6));
    REQUIRE(res.samples[0].target_date == Date{2010, 6, 8});
  }

  SECTION("N valid days give N - T samples") {
    for (int n : {9, 15, 40}) {
      Fixture fx = make_fixture(1, 1, {"total_precipitation"}, n, flat);
      FeatureCube cube = ingest(fx);
      std::vector<double> mm(static_cast<std::size_t>(n), 1.0);
      REQUIRE(assemble_sequences(cube, mm, 7).samples.size() == static_cast<std::size_t>(n - 7));
    }
  }

  SECTION("too few days yields empty list plus warning") {
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 7, flat);
    FeatureCube cube = ingest(fx);
    std::vector<double> mm(7, 1.0);
    SequencingResult res = assemble_sequences(cube, mm, 7);
    REQUIRE(res.samples.empty());
    REQUIRE_FALSE(res.warnings.empty());
  }

  SECTION("sequences never span a seasonal gap") {
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 20, flat);
    FeatureCube cube = ingest(fx);
    // simulate two monsoon blocks: jump the calendar by ~8 months mid-series
    for (int d = 10; d < 20; ++d) cube.dates[d] = cube.dates[d].plus(240);
    std::vector<double> mm(20, 1.0);
    SequencingResult res = assemble_sequences(cube, mm, 7);
    // each block of 10 contiguous days yields 10 - 7 = 3 samples
    REQUIRE(res.samples.size() == 6);
    for (const auto& s : res.samples) {
      const bool first_block = s.anchor_day <= 9;
      REQUIRE((first_block ? s.anchor_day >= 6 : s.anchor_day >= 16));
    }
  }

  SECTION("every valid target day appears exactly once") {
    Fixture fx = make_fixture(1, 1, {"total_precipitation"}, 25, flat);
    FeatureCube cube = ingest(fx);
    std::vector<double> mm(25, 1.0);
    SequencingResult res = assemble_sequences(cube, mm, 7);
    std::vector<long> targets;
    for (const auto& s : res.samples) targets.push_back(s.target_date.serial());
    std::sort(targets.begin(), targets.end());
    REQUIRE(std::adjacent_find(targets.begin(), targets.end()) == targets.end());
  }
}

TEST_CASE("chronological split boundaries") {
  SplitSpec s100 = chronological_split(100);
  REQUIRE(s100.train_end == 70);
  REQUIRE(s100.val_end == 85);

  SplitSpec s10 = chronological_split(10);
  REQUIRE(s10.train_end == 7);   // floor(7.0)
  REQUIRE(s10.val_end == 8);     // floor(8.5)
  // sizes 7 / 1 / 2

  REQUIRE_THROWS_AS(chronological_split(2), std::invalid_argument);

  SplitSpec s3 = chronological_split(3);
  REQUIRE(s3.train_end == 1);
  REQUIRE(s3.val_end == 2);
}

TEST_CASE("full pipeline: leakage-free scaler and stable feature map") {
  Fixture fx = make_fixture(2, 2, {"total_precipitation", "rh"}, 60,
                            [](int d, int r, int c, int ch) {
                              Rng rng(static_cast<std::uint64_t>(((d * 2 + r) * 2 + c) * 2 + ch));
                              return ch == 0 ? rng.uniform(0.0, 12.0) : rng.uniform(20.0, 90.0);
                            });
  FeatureCube raw = ingest(fx);
  PipelineOptions opt;
  ProcessedDataset ds = build_processed(fx.manifest, raw, opt);

  // feature index map: base, lags, deltas, in declared order
  REQUIRE(ds.feature_names[0] == "total_precipitation");
  REQUIRE(ds.feature_names[1] == "rh");
  REQUIRE(ds.feature_names[2] == "total_precipitation_lag1");
  REQUIRE(ds.feature_names.back() == "total_precipitation_delta3");
  REQUIRE(ds.feature_names.size() == 2u + 3u * 2u + 3u);

  const int n = static_cast<int>(ds.samples.size());
  REQUIRE(n == 60 - 3 - 7);  // warm-up 3 days, then N - T anchors
  REQUIRE(ds.split.train_end == static_cast<int>(std::floor(0.7 * n)));

  // strict chronology
  REQUIRE(ds.samples[static_cast<std::size_t>(ds.split.train_end) - 1].target_date <
          ds.samples[static_cast<std::size_t>(ds.split.train_end)].target_date);
  REQUIRE(ds.samples[static_cast<std::size_t>(ds.split.val_end) - 1].target_date <
          ds.samples[static_cast<std::size_t>(ds.split.val_end)].target_date);

  // perturbing values after the training window changes nothing in the scaler
  const int last_train_anchor = ds.samples[static_cast<std::size_t>(ds.split.train_end) - 1].anchor_day;
  FeatureCube perturbed = raw;
  for (int d = last_train_anchor + 2; d < perturbed.days(); ++d)
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        for (int ch = 0; ch < 2; ++ch) perturbed.at(d, r, c, ch) += 500.0;
  ProcessedDataset ds2 = build_processed(fx.manifest, perturbed, opt);
  REQUIRE(ds2.scaler.median == ds.scaler.median);
  REQUIRE(ds2.scaler.iqr == ds.scaler.iqr);
  // and training samples themselves are untouched
  for (int i = 0; i < ds.split.train_end; ++i)
    REQUIRE(ds2.samples[static_cast<std::size_t>(i)].x.data ==
            ds.samples[static_cast<std::size_t>(i)].x.data);
}

TEST_CASE("bundle save/load round trip") {
  SyntheticSpec spec;
  spec.grid_rows = 3;
  spec.grid_cols = 4;
  spec.n_days = 40;
  spec.n_channels = 3;
  spec.driver_lag = 2;
  spec.seed = 99;
  SyntheticDataset sd = generate_synthetic(spec);
  PipelineOptions opt;
  opt.lags = {1};
  opt.precip_deltas = false;
  ProcessedDataset ds = build_processed(sd.manifest, sd.cube, opt);
  ds.signal = sd.signal;

  const std::string path = std::filesystem::temp_directory_path() / "raincast_bundle_test.bin";
  save_bundle(ds, path);
  ProcessedDataset back = load_bundle(path);
  REQUIRE(back.feature_names == ds.feature_names);
  REQUIRE(back.samples.size() == ds.samples.size());
  REQUIRE(back.split.train_end == ds.split.train_end);
  REQUIRE(back.scaler.median == ds.scaler.median);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    REQUIRE(back.samples[i].x.data == ds.samples[i].x.data);
    REQUIRE(back.samples[i].y == ds.samples[i].y);
    REQUIRE(back.samples[i].target_date == ds.samples[i].target_date);
  }
  REQUIRE(back.signal.has_value());
  REQUIRE(back.signal->driver_lag == 2);
  REQUIRE(back.signal->mask == ds.signal->mask);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic generator: determinism and planted correlation") {
  SyntheticSpec spec;
  spec.grid_rows = 5;
  spec.grid_cols = 5;
  spec.n_days = 200;
  spec.n_channels = 4;
  spec.driver_channel = 2;
  spec.driver_lag = 3;
  spec.coeff = 1.0;
  spec.noise_std = 0.05;
  spec.seed = 7;

  SyntheticDataset a = generate_synthetic(spec);
  SyntheticDataset b = generate_synthetic(spec);
  REQUIRE(a.cube.values == b.cube.values);  // same seed, bit-identical

  SyntheticDataset c = generate_synthetic([&] {
    SyntheticSpec s = spec;
    s.seed = 8;
    return s;
  }());
  REQUIRE(a.cube.values != c.cube.values);

  // correlation between anchor-indexed targets and the masked driver at the
  // planted lag
  const int days = spec.n_days;
  const int precip = 0;
  std::vector<double> y, drv;
  for (int t = spec.driver_lag; t + 1 < days; ++t) {
    y.push_back(std::log1p(a.cube.area_mean(t + 1, precip)));
    double m = 0.0;
    int cnt = 0;
    for (int r = 0; r < 5; ++r)
      for (int ccol = 0; ccol < 5; ++ccol) {
        m += a.cube.at(t - spec.driver_lag, r, ccol, spec.driver_channel);
        ++cnt;
      }
    drv.push_back(m / cnt);
  }
  const auto n = static_cast<double>(y.size());
  double my = 0, md = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    my += y[i];
    md += drv[i];
  }
  my /= n;
  md /= n;
  double num = 0, vy = 0, vd = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += (y[i] - my) * (drv[i] - md);
    vy += (y[i] - my) * (y[i] - my);
    vd += (drv[i] - md) * (drv[i] - md);
  }
  const double corr = num / std::sqrt(vy * vd);
  REQUIRE(corr > 0.9);

  // precipitation never negative, so targets are always >= 0
  for (int d = 0; d < days; ++d) REQUIRE(a.cube.area_mean(d, precip) >= 0.0);
}

TEST_CASE("synthetic generator: validation errors") {
  SyntheticSpec spec;
  spec.driver_lag = 9;  // >= seq_len
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec.driver_lag = 1;
  spec.mask.assign(64, 0);  // empty mask on 8x8
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec.mask.assign(10, 1);  // wrong size
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
}
