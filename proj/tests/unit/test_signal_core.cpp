#include "doctest.h"

#include <cmath>
#include <complex>
#include <numbers>

#include "bedexit/error.hpp"
#include "bedexit/rng.hpp"
#include "bedexit/signal_core.hpp"
#include "bedexit/synth.hpp"

using namespace bedexit;
using namespace bedexit::signal;

namespace {

std::vector<double> sine(double freq, double fs, double seconds) {
  std::vector<double> x(static_cast<std::size_t>(std::llround(seconds * fs)));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs);
  return x;
}

double steady_amplitude(const std::vector<double>& y, std::size_t skip) {
  double peak = 0.0;
  for (std::size_t i = skip; i + skip < y.size(); ++i) peak = std::max(peak, std::abs(y[i]));
  return peak;
}

// |H(e^jw)|^2 of one biquad pass, squared again for the forward-backward pass.
double filtfilt_gain(const Biquad& f, double freq, double fs) {
  const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * freq / fs);
  const auto num = f.b[0] + f.b[1] * z + f.b[2] * z * z;
  const auto den = f.a[0] + f.a[1] * z + f.a[2] * z * z;
  return std::norm(num / den);
}

RawStream stream_from(const std::vector<double>& load, double fs) {
  RawStream r;
  r.sample_rate_hz = fs;
  r.load = load;
  for (std::size_t i = 0; i < load.size(); ++i) r.timestamps.push_back(static_cast<double>(i) / fs);
  return r;
}

std::vector<double> step_trace(double fs) {
  std::vector<double> x;
  for (double level : {5.0, 72.0, 5.0})
    for (int i = 0; i < static_cast<int>(600 * fs); ++i) x.push_back(level);
  return x;
}

}  // namespace

TEST_CASE("band-pass gains match the transfer function") {
  const double fs = 25.0;
  const Biquad f = design_bandpass(fs, 0.5, 10.0);
  // Unity gain at the prewarped centre frequency.
  const double centre = fs / std::numbers::pi *
                        std::atan(std::sqrt(std::tan(std::numbers::pi * 0.5 / fs) * std::tan(std::numbers::pi * 10.0 / fs)));
  CHECK(filtfilt_gain(f, centre, fs) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(filtfilt_gain(f, std::sqrt(5.0), fs) >= 0.89);
  CHECK(filtfilt_gain(f, 0.0, fs) < 1e-12);
  CHECK(filtfilt_gain(f, fs / 2.0, fs) < 1e-12);

  const auto mid = bandpass_vibration(sine(2.24, fs, 30.0), fs);
  const double amp = steady_amplitude(mid, 5 * 25);
  CHECK(amp >= 0.89);
  CHECK(amp <= 1.12);
  CHECK(amp == doctest::Approx(filtfilt_gain(f, 2.24, fs)).epsilon(0.01));

  const auto low = bandpass_vibration(sine(0.05, fs, 120.0), fs);
  CHECK(steady_amplitude(low, 20 * 25) <= 0.1);
}

TEST_CASE("band-pass removes a constant level") {
  const std::vector<double> x(200, 70.0);
  const auto y = bandpass_vibration(x, 25.0);
  REQUIRE(y.size() == x.size());
  for (std::size_t i = 50; i < y.size(); ++i) CHECK(std::abs(y[i]) <= 1e-3);
}

TEST_CASE("band-pass is linear") {
  CounterRng rng(7);
  std::vector<double> a(500), b(500), mix(500);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(-3, 3);
    b[i] = rng.uniform(0, 80);
    mix[i] = 2.5 * a[i] - 0.75 * b[i];
  }
  const auto fa = bandpass_vibration(a, 25.0), fb = bandpass_vibration(b, 25.0), fm = bandpass_vibration(mix, 25.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double want = 2.5 * fa[i] - 0.75 * fb[i];
    CHECK(std::abs(fm[i] - want) <= 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("band-pass rejects bad arguments") {
  const std::vector<double> x(64, 1.0);
  CHECK_THROWS_AS(bandpass_vibration(x, 25.0, 0.5, 12.5), Error);
  CHECK_THROWS_AS(bandpass_vibration(x, 25.0, 2.0, 1.0), Error);
  CHECK_THROWS_AS(bandpass_vibration(std::vector<double>(7, 1.0), 25.0), Error);
  std::vector<double> bad(64, 1.0);
  bad[10] = std::nan("");
  CHECK_THROWS_AS(bandpass_vibration(bad, 25.0), Error);
}

TEST_CASE("occupancy of an empty bed is zero") {
  const std::vector<double> x(25 * 120, 0.0);
  for (auto v : detect_occupancy(x, 25.0)) CHECK(v == 0);
}

TEST_CASE("occupancy follows a 5-72-5 kg step trace within 10 s") {
  for (double offset : {0.0, 0.4, 1.0}) {
    auto x = step_trace(1.0);
    for (auto& v : x) v += offset;
    const auto occ = detect_occupancy(x, 1.0);
    REQUIRE(occ.size() == x.size());
    for (std::size_t i = 0; i < occ.size(); ++i) {
      const bool near_edge = (i >= 600 && i < 610) || (i >= 1200 && i < 1210);
      if (near_edge) continue;
      const int want = i >= 600 && i < 1200 ? 1 : 0;
      CHECK_MESSAGE(occ[i] == want, "sample " << i << " offset " << offset);
    }
  }
}

TEST_CASE("constant occupied level after an empty prefix stays occupied") {
  std::vector<double> x(600, 5.0);
  x.insert(x.end(), 3000, 72.0);
  const auto occ = detect_occupancy(x, 1.0);
  for (std::size_t i = 610; i < occ.size(); ++i) REQUIRE(occ[i] == 1);
}

TEST_CASE("occupancy needs a minute of data") {
  CHECK_THROWS_AS(detect_occupancy(std::vector<double>(59, 0.0), 1.0), Error);
}

TEST_CASE("in-bed duration") {
  const std::vector<std::uint8_t> occ{0, 1, 1, 1, 0, 1};
  const auto d = in_bed_duration(occ, 1.0 / 60.0);
  const std::vector<double> want{0, 0, 1, 2, 0, 0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(d[i] == doctest::Approx(want[i]));

  const std::vector<std::uint8_t> run(180, 1);
  CHECK(in_bed_duration(run, 1.0 / 60.0).back() == doctest::Approx(179.0));
  for (auto v : in_bed_duration(std::vector<std::uint8_t>(50, 0), 25.0)) CHECK(v == 0.0);
}

TEST_CASE("derive_frame on a zero stream") {
  const auto frame = derive_frame(stream_from(std::vector<double>(25 * 90, 0.0), 25.0));
  frame.validate();
  for (std::size_t i = 0; i < frame.size(); ++i) {
    CHECK(frame.vibration[i] == 0.0);
    CHECK(frame.occupancy[i] == 0);
    CHECK(frame.in_bed_duration[i] == 0.0);
  }
}

TEST_CASE("derive_frame matches generator occupancy and is deterministic") {
  synth::SynthConfig cfg;
  cfg.stable_hours = {0.5, 0.7};
  for (std::uint64_t ep = 0; ep < 3; ++ep) {
    const auto e = synth::generate_episode(cfg, ep);
    const auto frame = derive_frame(e.raw);
    frame.validate();
    std::size_t agree = 0, counted = 0;
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const double t = e.raw.timestamps[i];
      const double entry_mid = e.plan.entry_s + e.plan.entry_ramp_s / 2.0;
      const double exit_mid = e.plan.exit_s + e.plan.exit_ramp_s / 2.0;
      if (std::abs(t - entry_mid) <= 10.0 || std::abs(t - exit_mid) <= 10.0) continue;
      ++counted;
      agree += frame.occupancy[i] == (e.plan.occupied(t) ? 1 : 0);
    }
    CHECK(agree == counted);
    const auto again = derive_frame(e.raw);
    CHECK(again.vibration == frame.vibration);
    CHECK(again.occupancy == frame.occupancy);
    CHECK(again.in_bed_duration == frame.in_bed_duration);
  }
}

TEST_CASE("raw stream validation") {
  auto r = stream_from(std::vector<double>(100, 1.0), 25.0);
  CHECK_NOTHROW(r.validate());
  r.timestamps[50] += 0.01;
  CHECK_THROWS_AS(r.validate(), Error);
  r = stream_from(std::vector<double>(100, 1.0), 25.0);
  r.load[3] = -0.5;
  CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("window extraction arithmetic") {
  SignalFrame f;
  f.sample_rate_hz = 1.0;
  const std::size_t n = 4 * 3600;
  f.load.assign(n, 1.0);
  f.vibration.assign(n, 0.0);
  f.occupancy.assign(n, 1);
  f.in_bed_duration.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) f.in_bed_duration[i] = static_cast<double>(i) / 60.0;
  const WindowSpec spec{10800.0, 1800.0};
  const std::vector<LabelInterval> labels{{3.0 * 3600, 4.0 * 3600, Label::transition}};
  const auto w = extract_windows(f, spec, labels);
  REQUIRE(w.size() == 3);
  CHECK(w[0].t_end == doctest::Approx(3.0 * 3600));
  CHECK(w[1].t_end == doctest::Approx(3.5 * 3600));
  CHECK(w[2].t_end == doctest::Approx(4.0 * 3600));
  for (const auto& x : w) {
    CHECK(x.size() == 10800);
    CHECK_FALSE(x.padded);
    CHECK(x.label == Label::transition);
  }
  // Last sample of each window is the one just before t_end.
  CHECK(w[1].channels[3].back() == doctest::Approx((3.5 * 3600 - 1) / 60.0));

  const std::vector<LabelInterval> all{{0.0, 4.0 * 3600, Label::non_active}};
  const auto early = extract_windows(f, spec, all);
  REQUIRE(early.size() == 8);
  CHECK(early[0].padded);
  CHECK(early[0].channels[3].front() == 0.0);
  CHECK_FALSE(early[5].padded);

  const std::vector<LabelInterval> none{{5.0 * 3600, 6.0 * 3600, Label::transition}};
  CHECK(extract_windows(f, spec, none).empty());
}

TEST_CASE("a frame shorter than the look-back pads every window") {
  SignalFrame f;
  f.sample_rate_hz = 1.0;
  f.load.assign(3600, 2.0);
  f.vibration.assign(3600, 0.0);
  f.occupancy.assign(3600, 0);
  f.in_bed_duration.assign(3600, 0.0);
  const std::vector<LabelInterval> all{{0.0, 3600.0, Label::non_active}};
  const auto w = extract_windows(f, {10800.0, 600.0}, all);
  REQUIRE(w.size() == 6);
  for (const auto& x : w) {
    CHECK(x.padded);
    CHECK(x.size() == 10800);
  }
}

TEST_CASE("synthetic windows carry generator labels") {
  synth::SynthConfig cfg;
  cfg.stable_hours = {3.2, 3.5};
  const auto e = synth::generate_episode(cfg, 4);
  const auto frame = derive_frame(e.raw);
  const auto labels = e.labels();
  const auto windows = extract_windows(frame, {10800.0, 30.0}, labels);
  REQUIRE_FALSE(windows.empty());
  std::size_t positives = 0;
  for (const auto& w : windows) {
    const bool in_transition = w.t_end >= e.plan.transition_start_s && w.t_end <= e.plan.exit_s;
    CHECK((w.label == Label::transition) == in_transition);
    positives += in_transition;
  }
  CHECK(positives > 0);
}
