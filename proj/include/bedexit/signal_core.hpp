#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bedexit::signal {

/// Raw load-cell samples at a uniform rate.
struct RawStream {
  double sample_rate_hz = 25.0;
  std::vector<double> timestamps;  // seconds
  std::vector<double> load;        // kilograms

  std::size_t size() const { return load.size(); }
  /// Throws Error(data) when timestamps are not uniform at 1/sample_rate_hz (1e-6 s)
  /// or when any load value is non-finite or negative.
  void validate() const;
};

/// The four time-aligned channels classified downstream.
struct SignalFrame {
  double sample_rate_hz = 25.0;
  double start_time_s = 0.0;
  std::vector<double> load;
  std::vector<double> vibration;
  std::vector<std::uint8_t> occupancy;
  std::vector<double> in_bed_duration;  // minutes

  std::size_t size() const { return load.size(); }
  double end_time_s() const { return start_time_s + static_cast<double>(size()) / sample_rate_hz; }
  /// Invariant checker: equal lengths, binary occupancy, duration zero when unoccupied
  /// and non-decreasing within each occupied run.
  void validate() const;
};

struct OccupancyConfig {
  double horizon_s = 1800.0;       // trailing calibration horizon
  double hysteresis_frac = 0.10;   // of the distance between cluster centers
  double min_dwell_s = 5.0;
  double min_range_kg = 2.0;       // below this the horizon is considered unimodal
  double min_separation_kg = 25.0; // empty/occupied centers closer than this are rejected
  double bin_kg = 0.25;            // histogram resolution for the two-means split
};

struct SignalConfig {
  double sample_rate_hz = 25.0;
  double band_low_hz = 0.5;
  double band_high_hz = 10.0;
  OccupancyConfig occupancy;
};

/// Second-order section, direct form II transposed, a0 normalised to 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 3> a{1.0, 0.0, 0.0};
};

/// Butterworth band-pass (first-order prototype, one biquad) via the bilinear transform
/// with both band edges prewarped.
Biquad design_bandpass(double sample_rate_hz, double low_hz, double high_hz);

/// One-pass filter with the given initial state.
std::vector<double> lfilter(const Biquad& f, std::span<const double> x, std::array<double, 2> state);

/// Steady-state initial state for a unit step input.
std::array<double, 2> lfilter_steady_state(const Biquad& f);

/// Zero-phase forward-backward filtering with odd-extension padding and steady-state
/// initial conditions scaled to the edge samples.
std::vector<double> filtfilt(const Biquad& f, std::span<const double> x);

std::vector<double> bandpass_vibration(std::span<const double> load, double sample_rate_hz,
                                       double low_hz = 0.5, double high_hz = 10.0);

/// Adaptive empty/occupied classification. The calibration is a two-means split of
/// one-second load means over the trailing horizon; a split is accepted only when the
/// horizon range and the center separation exceed their minimums, otherwise the last
/// accepted calibration is held. Decisions use the midpoint threshold with a hysteresis
/// band and a minimum dwell before a state change commits.
std::vector<std::uint8_t> detect_occupancy(std::span<const double> load, double sample_rate_hz,
                                           const OccupancyConfig& config = {});

std::vector<double> in_bed_duration(std::span<const std::uint8_t> occupancy, double sample_rate_hz);

SignalFrame derive_frame(const RawStream& raw, const SignalConfig& config = {});

enum class Label : int { non_active = 0, transition = 1 };

std::string label_name(Label label);
Label parse_label(const std::string& text);

struct LabelInterval {
  double start_s = 0.0;
  double end_s = 0.0;
  Label label = Label::non_active;
};

struct WindowSpec {
  double lookback_s = 10800.0;
  double stride_s = 1800.0;
};

/// Number of samples in one look-back window; throws unless lookback is a whole number
/// of sample periods.
std::size_t window_length(const WindowSpec& spec, double sample_rate_hz);

/// Fixed-length slice covering [t_end - lookback, t_end). Index 0..3 of `channels`
/// are load, vibration, occupancy and in-bed duration.
struct Window {
  std::array<std::vector<double>, 4> channels;
  double t_end = 0.0;
  std::optional<Label> label;
  bool padded = false;

  std::size_t size() const { return channels[0].size(); }
  const std::vector<double>& load() const { return channels[0]; }
};

/// Slices the window ending (exclusively) at sample index `end_index`; samples before
/// the frame start are filled with the first sample of each channel.
Window slice_window(const SignalFrame& frame, std::size_t length, std::int64_t end_index);

/// One window per stride step t_end = start + k*stride (k >= 1, t_end <= frame end)
/// whose t_end falls inside a labelled interval (bounds inclusive).
std::vector<Window> extract_windows(const SignalFrame& frame, const WindowSpec& spec,
                                    std::span<const LabelInterval> intervals);

/// Window end indices only; used to avoid materialising windows that are discarded.
struct WindowRef {
  std::int64_t end_index = 0;
  double t_end = 0.0;
  Label label = Label::non_active;
  bool padded = false;
};

std::vector<WindowRef> plan_windows(const SignalFrame& frame, const WindowSpec& spec,
                                    std::span<const LabelInterval> intervals);

}  // namespace bedexit::signal
