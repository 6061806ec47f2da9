#include "bedexit/signal_core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>

#include "bedexit/error.hpp"

namespace bedexit::signal {

namespace {

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

void RawStream::validate() const {
  require(sample_rate_hz > 0.0 && std::isfinite(sample_rate_hz), ErrorCode::data,
          "raw stream: sample rate must be positive");
  require(timestamps.size() == load.size(), ErrorCode::data,
          "raw stream: timestamp and load counts differ");
  const double dt = 1.0 / sample_rate_hz;
  for (std::size_t i = 0; i < load.size(); ++i) {
    if (!std::isfinite(load[i]) || load[i] < 0.0)
      fail(ErrorCode::data, "raw stream: load at sample " + std::to_string(i) +
                                " is non-finite or negative");
    if (i > 0) {
      const double expected = timestamps[0] + static_cast<double>(i) * dt;
      if (std::abs(timestamps[i] - expected) > 1e-6 || timestamps[i] <= timestamps[i - 1])
        fail(ErrorCode::data, "raw stream: timestamp at sample " + std::to_string(i) +
                                  " breaks uniform spacing at " + std::to_string(sample_rate_hz) +
                                  " Hz");
    }
  }
}

void SignalFrame::validate() const {
  const std::size_t n = load.size();
  require(vibration.size() == n && occupancy.size() == n && in_bed_duration.size() == n,
          ErrorCode::data, "signal frame: channel lengths differ");
  for (std::size_t i = 0; i < n; ++i) {
    require(occupancy[i] <= 1, ErrorCode::data, "signal frame: occupancy is not binary");
    require(std::isfinite(in_bed_duration[i]) && in_bed_duration[i] >= 0.0, ErrorCode::data,
            "signal frame: negative in-bed duration");
    if (occupancy[i] == 0)
      require(in_bed_duration[i] == 0.0, ErrorCode::data,
              "signal frame: in-bed duration nonzero while unoccupied");
    else if (i > 0 && occupancy[i - 1] == 1)
      require(in_bed_duration[i] >= in_bed_duration[i - 1], ErrorCode::data,
              "signal frame: in-bed duration decreases within an occupied run");
  }
}

Biquad design_bandpass(double sample_rate_hz, double low_hz, double high_hz) {
  require(sample_rate_hz > 0.0, ErrorCode::invalid_argument, "band-pass: sample rate must be positive");
  require(low_hz > 0.0 && low_hz < high_hz, ErrorCode::invalid_argument,
          "band-pass: require 0 < low_hz < high_hz");
  require(high_hz < sample_rate_hz / 2.0, ErrorCode::invalid_argument,
          "band-pass: high_hz must be below Nyquist");
  // Analog prototype B s / (s^2 + B s + w0^2) on prewarped edges, then s = (1 - z^-1)/(1 + z^-1).
  const double wl = std::tan(std::numbers::pi * low_hz / sample_rate_hz);
  const double wh = std::tan(std::numbers::pi * high_hz / sample_rate_hz);
  const double bw = wh - wl;
  const double w0sq = wl * wh;
  const double a0 = 1.0 + bw + w0sq;
  Biquad f;
  f.b = {bw / a0, 0.0, -bw / a0};
  f.a = {1.0, 2.0 * (w0sq - 1.0) / a0, (1.0 - bw + w0sq) / a0};
  return f;
}

std::vector<double> lfilter(const Biquad& f, std::span<const double> x, std::array<double, 2> z) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = f.b[0] * xi + z[0];
    z[0] = f.b[1] * xi - f.a[1] * yi + z[1];
    z[1] = f.b[2] * xi - f.a[2] * yi;
    y[i] = yi;
  }
  return y;
}

std::array<double, 2> lfilter_steady_state(const Biquad& f) {
  const double yss = (f.b[0] + f.b[1] + f.b[2]) / (f.a[0] + f.a[1] + f.a[2]);
  const double z1 = f.b[2] - f.a[2] * yss;
  const double z0 = f.b[1] - f.a[1] * yss + z1;
  return {z0, z1};
}

std::vector<double> filtfilt(const Biquad& f, std::span<const double> x) {
  const std::size_t n = x.size();
  require(n >= 2, ErrorCode::invalid_argument, "filtfilt: need at least two samples");
  const std::size_t edge = std::min<std::size_t>(9, n - 1);

  std::vector<double> ext;
  ext.reserve(n + 2 * edge);
  for (std::size_t k = edge; k >= 1; --k) ext.push_back(2.0 * x[0] - x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t k = 1; k <= edge; ++k) ext.push_back(2.0 * x[n - 1] - x[n - 1 - k]);

  const auto zi = lfilter_steady_state(f);
  auto fwd = lfilter(f, ext, {zi[0] * ext.front(), zi[1] * ext.front()});
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = lfilter(f, fwd, {zi[0] * fwd.front(), zi[1] * fwd.front()});
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(edge),
          bwd.begin() + static_cast<std::ptrdiff_t>(edge + n)};
}

std::vector<double> bandpass_vibration(std::span<const double> load, double sample_rate_hz,
                                       double low_hz, double high_hz) {
  require(load.size() >= 8, ErrorCode::invalid_argument, "band-pass: need at least 8 samples");
  require(all_finite(load), ErrorCode::invalid_argument, "band-pass: non-finite input");
  return filtfilt(design_bandpass(sample_rate_hz, low_hz, high_hz), load);
}

namespace {

/// Sliding histogram of values keyed by bin; per-bin sums keep the cluster means exact.
class SlidingTwoMeans {
public:
  explicit SlidingTwoMeans(double bin) : bin_(bin) {}

  void add(double v) {
    auto& b = bins_[key(v)];
    b.count += 1;
    b.sum += v;
  }

  void remove(double v) {
    auto it = bins_.find(key(v));
    if (it == bins_.end()) return;
    if (--it->second.count == 0)
      bins_.erase(it);
    else
      it->second.sum -= v;
  }

  double range_upper_bound() const {
    if (bins_.empty()) return 0.0;
    return static_cast<double>(bins_.rbegin()->first - bins_.begin()->first + 1) * bin_;
  }

  /// Optimal split between consecutive bins: maximises S_lo^2/n_lo + S_hi^2/n_hi, which
  /// minimises the within-cluster sum of squares.
  std::optional<std::pair<double, double>> centers() const {
    if (bins_.size() < 2) return std::nullopt;
    double total_sum = 0.0;
    long total_n = 0;
    for (const auto& [k, b] : bins_) {
      total_sum += b.sum;
      total_n += b.count;
    }
    double best = -1.0;
    double best_lo = 0.0, best_hi = 0.0;
    double s_lo = 0.0;
    long n_lo = 0;
    std::size_t seen = 0;
    for (const auto& [k, b] : bins_) {
      if (++seen == bins_.size()) break;
      s_lo += b.sum;
      n_lo += b.count;
      const double s_hi = total_sum - s_lo;
      const long n_hi = total_n - n_lo;
      const double score = s_lo * s_lo / static_cast<double>(n_lo) + s_hi * s_hi / static_cast<double>(n_hi);
      if (score > best) {
        best = score;
        best_lo = s_lo / static_cast<double>(n_lo);
        best_hi = s_hi / static_cast<double>(n_hi);
      }
    }
    return std::make_pair(best_lo, best_hi);
  }

private:
  struct Bin {
    long count = 0;
    double sum = 0.0;
  };

  std::int64_t key(double v) const { return static_cast<std::int64_t>(std::floor(v / bin_)); }

  double bin_;
  std::map<std::int64_t, Bin> bins_;
};

}  // namespace

std::vector<std::uint8_t> detect_occupancy(std::span<const double> load, double sample_rate_hz,
                                           const OccupancyConfig& config) {
  require(sample_rate_hz > 0.0, ErrorCode::invalid_argument, "occupancy: sample rate must be positive");
  require(static_cast<double>(load.size()) >= 60.0 * sample_rate_hz, ErrorCode::invalid_argument,
          "occupancy: need at least 60 s of samples");
  require(all_finite(load), ErrorCode::invalid_argument, "occupancy: non-finite input");

  const std::size_t block = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sample_rate_hz)));
  const double block_s = static_cast<double>(block) / sample_rate_hz;
  const std::size_t horizon_blocks =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.horizon_s / block_s)));
  const std::size_t dwell =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.min_dwell_s * sample_rate_hz - 1e-9)));

  SlidingTwoMeans hist(config.bin_kg);
  std::deque<double> history;
  bool calibrated = false;
  double lo = 0.0, hi = 0.0;
  std::uint8_t state = 0;
  std::size_t pending = 0;
  double block_sum = 0.0;
  std::size_t block_fill = 0;

  std::vector<std::uint8_t> out(load.size());
  for (std::size_t i = 0; i < load.size(); ++i) {
    const double x = load[i];
    block_sum += x;
    if (++block_fill == block) {
      const double mean = block_sum / static_cast<double>(block);
      block_sum = 0.0;
      block_fill = 0;
      history.push_back(mean);
      hist.add(mean);
      if (history.size() > horizon_blocks) {
        hist.remove(history.front());
        history.pop_front();
      }
      if (hist.range_upper_bound() >= config.min_range_kg) {
        if (auto c = hist.centers(); c && c->second - c->first >= config.min_separation_kg) {
          lo = c->first;
          hi = c->second;
          calibrated = true;
        }
      }
    }

    std::uint8_t desired = state;
    if (calibrated) {
      const double threshold = 0.5 * (lo + hi);
      const double band = config.hysteresis_frac * (hi - lo);
      if (x > threshold + band)
        desired = 1;
      else if (x < threshold - band)
        desired = 0;
    }
    if (desired != state) {
      if (++pending >= dwell) {
        state = desired;
        pending = 0;
      }
    } else {
      pending = 0;
    }
    out[i] = state;
  }
  return out;
}

std::vector<double> in_bed_duration(std::span<const std::uint8_t> occupancy, double sample_rate_hz) {
  require(sample_rate_hz > 0.0, ErrorCode::invalid_argument, "in-bed duration: sample rate must be positive");
  std::vector<double> out(occupancy.size(), 0.0);
  std::size_t run_start = 0;
  for (std::size_t i = 0; i < occupancy.size(); ++i) {
    require(occupancy[i] <= 1, ErrorCode::invalid_argument, "in-bed duration: occupancy must be 0/1");
    if (occupancy[i] == 0) continue;
    if (i == 0 || occupancy[i - 1] == 0) run_start = i;
    out[i] = static_cast<double>(i - run_start) / sample_rate_hz / 60.0;
  }
  return out;
}

SignalFrame derive_frame(const RawStream& raw, const SignalConfig& config) {
  raw.validate();
  SignalFrame frame;
  frame.sample_rate_hz = raw.sample_rate_hz;
  frame.start_time_s = raw.timestamps.empty() ? 0.0 : raw.timestamps.front();
  frame.load = raw.load;
  frame.vibration = bandpass_vibration(raw.load, raw.sample_rate_hz, config.band_low_hz, config.band_high_hz);
  frame.occupancy = detect_occupancy(raw.load, raw.sample_rate_hz, config.occupancy);
  frame.in_bed_duration = in_bed_duration(frame.occupancy, raw.sample_rate_hz);
  frame.validate();
  return frame;
}

std::string label_name(Label label) {
  return label == Label::transition ? "transition" : "non_active";
}

Label parse_label(const std::string& text) {
  if (text == "transition") return Label::transition;
  if (text == "non_active") return Label::non_active;
  fail(ErrorCode::format, "unknown label '" + text + "' (expected transition or non_active)");
}

std::size_t window_length(const WindowSpec& spec, double sample_rate_hz) {
  require(spec.lookback_s > 0.0 && spec.stride_s > 0.0, ErrorCode::invalid_argument,
          "window: lookback and stride must be positive");
  const double samples = spec.lookback_s * sample_rate_hz;
  const double rounded = std::round(samples);
  require(rounded >= 1.0 && std::abs(samples - rounded) <= 1e-6 * std::max(1.0, samples),
          ErrorCode::invalid_argument, "window: lookback must be a whole number of sample periods");
  return static_cast<std::size_t>(rounded);
}

Window slice_window(const SignalFrame& frame, std::size_t length, std::int64_t end_index) {
  require(frame.size() > 0, ErrorCode::invalid_argument, "window: empty frame");
  require(end_index >= 1 && end_index <= static_cast<std::int64_t>(frame.size()), ErrorCode::invalid_argument,
          "window: end index outside frame");
  Window w;
  w.t_end = frame.start_time_s + static_cast<double>(end_index) / frame.sample_rate_hz;
  const std::int64_t begin = end_index - static_cast<std::int64_t>(length);
  w.padded = begin < 0;
  const std::size_t pad = w.padded ? static_cast<std::size_t>(-begin) : 0;
  const std::size_t first = w.padded ? 0 : static_cast<std::size_t>(begin);

  auto fill = [&](std::vector<double>& dst, auto&& get) {
    dst.resize(length);
    const double head = get(0);
    for (std::size_t k = 0; k < pad; ++k) dst[k] = head;
    for (std::size_t k = pad; k < length; ++k) dst[k] = get(first + k - pad);
  };
  fill(w.channels[0], [&](std::size_t i) { return frame.load[i]; });
  fill(w.channels[1], [&](std::size_t i) { return frame.vibration[i]; });
  fill(w.channels[2], [&](std::size_t i) { return static_cast<double>(frame.occupancy[i]); });
  fill(w.channels[3], [&](std::size_t i) { return frame.in_bed_duration[i]; });
  return w;
}

std::vector<WindowRef> plan_windows(const SignalFrame& frame, const WindowSpec& spec,
                                    std::span<const LabelInterval> intervals) {
  const std::size_t length = window_length(spec, frame.sample_rate_hz);
  std::vector<WindowRef> refs;
  const double end = frame.end_time_s();
  for (std::int64_t k = 1;; ++k) {
    const double offset = static_cast<double>(k) * spec.stride_s;
    const std::int64_t end_index = std::llround(offset * frame.sample_rate_hz);
    if (end_index > static_cast<std::int64_t>(frame.size())) break;
    const double t_end = frame.start_time_s + offset;
    if (t_end > end + 1e-9) break;
    for (const auto& iv : intervals) {
      if (t_end >= iv.start_s && t_end <= iv.end_s) {
        refs.push_back({end_index, t_end, iv.label, end_index < static_cast<std::int64_t>(length)});
        break;
      }
    }
  }
  return refs;
}

std::vector<Window> extract_windows(const SignalFrame& frame, const WindowSpec& spec,
                                    std::span<const LabelInterval> intervals) {
  const std::size_t length = window_length(spec, frame.sample_rate_hz);
  std::vector<Window> windows;
  for (const auto& ref : plan_windows(frame, spec, intervals)) {
    Window w = slice_window(frame, length, ref.end_index);
    w.t_end = ref.t_end;
    w.label = ref.label;
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace bedexit::signal
