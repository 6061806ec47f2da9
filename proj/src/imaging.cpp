#include "bedexit/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "bedexit/error.hpp"

namespace bedexit::imaging {

void EncodingConfig::validate() const {
  require(series_len_n >= 2, ErrorCode::config, "encoding.series_len_n must be >= 2");
  require(image_size >= 2 * (2 * kQuadrantMargin + 1), ErrorCode::config,
          "encoding.image_size too small for a 2x2 line plot");
  require(rp_epsilon_quantile > 0.0 && rp_epsilon_quantile <= 1.0, ErrorCode::config,
          "encoding.rp_epsilon_quantile must be in (0, 1]");
  require(mtf_bins_q >= 2, ErrorCode::config, "encoding.mtf_bins_q must be >= 2");
  require(series_len_n <= image_size * 4, ErrorCode::config, "encoding.series_len_n must be <= 4 * image_size");
  require(mtf_bins_q <= series_len_n, ErrorCode::config, "encoding.mtf_bins_q must be <= series_len_n");
}

bool ImageTensor::valid() const {
  if (values.size() != static_cast<std::size_t>(height) * width * channels) return false;
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

std::vector<double> paa_downsample(std::span<const double> series, int target_n) {
  require(target_n > 0, ErrorCode::invalid_argument, "PAA: target length must be positive");
  const std::size_t n = static_cast<std::size_t>(target_n);
  require(series.size() >= n, ErrorCode::invalid_argument, "PAA: series shorter than target length");
  const std::size_t seg = series.size() / n;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t begin = k * seg;
    const std::size_t end = (k + 1 == n) ? series.size() : begin + seg;
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += series[i];
    out[k] = sum / static_cast<double>(end - begin);
  }
  return out;
}

double rp_epsilon_from_quantile(std::span<const double> series, double q) {
  require(series.size() >= 2, ErrorCode::invalid_argument, "RP epsilon: need at least two samples");
  require(q > 0.0 && q <= 1.0, ErrorCode::invalid_argument, "RP epsilon: quantile must be in (0, 1]");
  std::vector<double> d;
  d.reserve(series.size() * (series.size() - 1) / 2);
  for (std::size_t i = 0; i < series.size(); ++i)
    for (std::size_t j = i + 1; j < series.size(); ++j) d.push_back(std::abs(series[i] - series[j]));
  const double m = static_cast<double>(d.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q * m - 1e-9)));
  const auto k = static_cast<std::ptrdiff_t>(std::min(rank, d.size()) - 1);
  std::nth_element(d.begin(), d.begin() + k, d.end());
  return d[static_cast<std::size_t>(k)];
}

Matrix encode_rp(std::span<const double> series, double epsilon) {
  require(series.size() >= 2, ErrorCode::invalid_argument, "RP: need at least two samples");
  require(epsilon >= 0.0, ErrorCode::invalid_argument, "RP: epsilon must be >= 0");
  const std::size_t n = series.size();
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::abs(series[i] - series[j]) <= epsilon ? 1.0 : 0.0;
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

std::vector<int> quantile_bins(std::span<const double> series, int q_bins) {
  require(series.size() >= 2, ErrorCode::invalid_argument, "MTF: need at least two samples");
  require(q_bins >= 2, ErrorCode::invalid_argument, "MTF: need at least two bins");
  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end());
  const double last = static_cast<double>(sorted.size() - 1);
  std::vector<double> edges(static_cast<std::size_t>(q_bins - 1));
  for (int k = 1; k < q_bins; ++k) {
    const double pos = last * static_cast<double>(k) / static_cast<double>(q_bins);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    edges[static_cast<std::size_t>(k - 1)] = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  }
  std::vector<int> bins(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    // Edges are sorted, so the count of edges strictly below x is a lower_bound offset.
    bins[t] = static_cast<int>(std::lower_bound(edges.begin(), edges.end(), series[t]) - edges.begin());
  }
  return bins;
}

Matrix markov_transition_matrix(std::span<const int> bins, int q_bins) {
  const std::size_t q = static_cast<std::size_t>(q_bins);
  Matrix p(q, q);
  std::vector<double> visits(q, 0.0);
  for (std::size_t t = 0; t + 1 < bins.size(); ++t) {
    p(static_cast<std::size_t>(bins[t]), static_cast<std::size_t>(bins[t + 1])) += 1.0;
    visits[static_cast<std::size_t>(bins[t])] += 1.0;
  }
  for (std::size_t k = 0; k < q; ++k)
    for (std::size_t l = 0; l < q; ++l)
      p(k, l) = visits[k] > 0.0 ? p(k, l) / visits[k] : 1.0 / static_cast<double>(q);
  return p;
}

Matrix encode_mtf(std::span<const double> series, int q_bins) {
  const auto bins = quantile_bins(series, q_bins);
  const Matrix p = markov_transition_matrix(bins, q_bins);
  const std::size_t n = series.size();
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = p(static_cast<std::size_t>(bins[i]), static_cast<std::size_t>(bins[j]));
  return m;
}

std::vector<double> rescale_symmetric(std::span<const double> series) {
  const auto [mn, mx] = std::minmax_element(series.begin(), series.end());
  const double lo = *mn, hi = *mx;
  std::vector<double> out(series.size(), 0.0);
  if (!(hi > lo)) return out;
  for (std::size_t t = 0; t < series.size(); ++t)
    out[t] = std::clamp(((series[t] - lo) - (hi - series[t])) / (hi - lo), -1.0, 1.0);
  return out;
}

Matrix encode_gasf(std::span<const double> series) {
  require(series.size() >= 2, ErrorCode::invalid_argument, "GASF: need at least two samples");
  const auto x = rescale_symmetric(series);
  const std::size_t n = x.size();
  std::vector<double> s(n);
  for (std::size_t t = 0; t < n; ++t) s[t] = std::sqrt(std::max(0.0, 1.0 - x[t] * x[t]));
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = x[i] * x[j] - s[i] * s[j];
      g(i, j) = v;
      g(j, i) = v;
    }
  return g;
}

TextureMatrices encode_textures(std::span<const double> load, const EncodingConfig& config) {
  const auto series = paa_downsample(load, config.series_len_n);
  const double eps = rp_epsilon_from_quantile(series, config.rp_epsilon_quantile);
  return {encode_rp(series, eps), encode_mtf(series, config.mtf_bins_q), encode_gasf(series)};
}

std::vector<double> resize_bilinear(const Matrix& m, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0 && m.rows() > 0 && m.cols() > 0, ErrorCode::invalid_argument,
          "resize: empty input or output");
  auto coords = [](std::size_t in, int out) {
    struct Tap {
      std::size_t i0, i1;
      double f;
    };
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      const double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
      const auto i0 = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
      taps[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return taps;
  };
  const auto ty = coords(m.rows(), out_h);
  const auto tx = coords(m.cols(), out_w);
  std::vector<double> out(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double top = (1.0 - b.f) * m(a.i0, b.i0) + b.f * m(a.i0, b.i1);
      const double bot = (1.0 - b.f) * m(a.i1, b.i0) + b.f * m(a.i1, b.i1);
      out[static_cast<std::size_t>(y) * static_cast<std::size_t>(out_w) + static_cast<std::size_t>(x)] =
          (1.0 - a.f) * top + a.f * bot;
    }
  }
  return out;
}

ImageTensor stack_texture_image(const TextureMatrices& tm, int image_size) {
  const std::size_t n = tm.rp.rows();
  require(tm.mtf.rows() == n && tm.gasf.rows() == n && tm.rp.cols() == n, ErrorCode::invalid_argument,
          "texture image: matrices must share N");
  Matrix gasf01(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) gasf01(i, j) = (tm.gasf(i, j) + 1.0) / 2.0;

  ImageTensor img(image_size, image_size, 3);
  const std::array<std::vector<double>, 3> planes{resize_bilinear(tm.rp, image_size, image_size),
                                                  resize_bilinear(tm.mtf, image_size, image_size),
                                                  resize_bilinear(gasf01, image_size, image_size)};
  for (int c = 0; c < 3; ++c) {
    const auto& plane = planes[static_cast<std::size_t>(c)];
    for (int y = 0; y < image_size; ++y)
      for (int x = 0; x < image_size; ++x)
        img.at(y, x, c) = static_cast<float>(
            std::clamp(plane[static_cast<std::size_t>(y) * static_cast<std::size_t>(image_size) + static_cast<std::size_t>(x)], 0.0, 1.0));
  }
  return img;
}

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), image_(height, width, 3) {
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      image_.at(y, x, 0) = background.r;
      image_.at(y, x, 1) = background.g;
      image_.at(y, x, 2) = background.b;
    }
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  image_.at(y, x, 0) = c.r;
  image_.at(y, x, 1) = c.g;
  image_.at(y, x, 2) = c.b;
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

int scale_to_row(double v, double lo, double hi, int y_top, int y_bottom) {
  if (!(hi > lo)) return y_top + (y_bottom - y_top) / 2;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return y_bottom - static_cast<int>(std::lround(t * static_cast<double>(y_bottom - y_top)));
}

void Canvas::polyline(std::span<const double> values, int x_left, int x_right, int y_top, int y_bottom, Rgb c) {
  if (values.empty()) return;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  const std::int64_t span = x_right - x_left;
  auto column = [&](std::int64_t i) {
    if (n == 1) return x_left;
    return x_left + static_cast<int>((2 * i * span + (n - 1)) / (2 * (n - 1)));
  };

  int cur_x = column(0);
  int last_y = scale_to_row(values[0], lo, hi, y_top, y_bottom);
  int span_lo = last_y, span_hi = last_y;
  for (std::int64_t i = 1; i < n; ++i) {
    const int x = column(i);
    const int y = scale_to_row(values[static_cast<std::size_t>(i)], lo, hi, y_top, y_bottom);
    if (x == cur_x) {
      span_lo = std::min(span_lo, y);
      span_hi = std::max(span_hi, y);
    } else {
      for (int yy = span_lo; yy <= span_hi; ++yy) set(cur_x, yy, c);
      line(cur_x, last_y, x, y, c);
      cur_x = x;
      span_lo = span_hi = y;
    }
    last_y = y;
  }
  for (int yy = span_lo; yy <= span_hi; ++yy) set(cur_x, yy, c);
}

void Canvas::dashed_hline(int x0, int x1, int y, int on, int off, Rgb c) {
  const int period = std::max(1, on + off);
  for (int x = x0; x <= x1; ++x)
    if ((x - x0) % period < on) set(x, y, c);
}

ImageTensor encode_line_plot(const signal::Window& window, int image_size) {
  require(image_size >= 2 * (2 * kQuadrantMargin + 1), ErrorCode::invalid_argument,
          "line plot: image too small");
  const std::size_t n = window.size();
  for (const auto& ch : window.channels)
    require(ch.size() == n && n > 0, ErrorCode::invalid_argument, "line plot: channels must be equal and non-empty");

  Canvas canvas(image_size, image_size);
  const int q = image_size / 2;
  for (int c = 0; c < 4; ++c) {
    const int qx = (c % 2) * q;
    const int qy = (c / 2) * q;
    canvas.polyline(window.channels[static_cast<std::size_t>(c)], qx + kQuadrantMargin, qx + q - 1 - kQuadrantMargin,
                    qy + kQuadrantMargin, qy + q - 1 - kQuadrantMargin, kLinePalette[static_cast<std::size_t>(c)]);
  }
  return canvas.take();
}

ImagePair encode_window(const signal::Window& window, const EncodingConfig& config) {
  return {encode_line_plot(window, config.image_size),
          stack_texture_image(encode_textures(window.load(), config), config.image_size)};
}

void quantize_u8(ImageTensor& image) {
  for (auto& v : image.values) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

}  // namespace bedexit::imaging
