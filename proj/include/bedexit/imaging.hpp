#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "bedexit/signal_core.hpp"

namespace bedexit::imaging {

struct EncodingConfig {
  int series_len_n = 224;
  double rp_epsilon_quantile = 0.10;
  int mtf_bins_q = 8;
  int image_size = 224;

  /// Throws Error(config) when a field is out of range.
  void validate() const;
};

/// Dense row-major N x N matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> data() const { return data_; }

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// H x W x C image with values in [0, 1], interleaved row-major.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> values;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  /// True when every value is finite and inside [0, 1].
  bool valid() const;
};

struct TextureMatrices {
  Matrix rp;
  Matrix mtf;
  Matrix gasf;
};

/// Piecewise aggregate approximation: means of target_n equal segments of
/// floor(len / target_n) samples, the last segment absorbing the remainder.
std::vector<double> paa_downsample(std::span<const double> series, int target_n);

/// q-quantile (lower nearest rank) of the N(N-1)/2 pairwise absolute differences.
double rp_epsilon_from_quantile(std::span<const double> series, double q);

/// R[i,j] = 1 iff |x_i - x_j| <= epsilon.
Matrix encode_rp(std::span<const double> series, double epsilon);

/// Equal-frequency bins in 0..q_bins-1: bin = number of interior quantile edges strictly
/// below the value (edges by linear interpolation between order statistics).
std::vector<int> quantile_bins(std::span<const double> series, int q_bins);

/// Row-normalised first-order transition counts of a bin sequence; unvisited rows are uniform.
Matrix markov_transition_matrix(std::span<const int> bins, int q_bins);

/// M[i,j] = P[b_i, b_j].
Matrix encode_mtf(std::span<const double> series, int q_bins);

/// Min-max rescale to [-1, 1]; a constant series maps to all zeros.
std::vector<double> rescale_symmetric(std::span<const double> series);

/// G[i,j] = cos(phi_i + phi_j) with phi = arccos(x~), evaluated in the closed form
/// x~_i x~_j - sqrt(1 - x~_i^2) sqrt(1 - x~_j^2).
Matrix encode_gasf(std::span<const double> series);

TextureMatrices encode_textures(std::span<const double> load, const EncodingConfig& config);

/// Bilinear resize with corner-aligned sampling; identity when sizes match.
std::vector<double> resize_bilinear(const Matrix& m, int out_h, int out_w);

/// Channel 0 = RP, 1 = MTF, 2 = (GASF + 1) / 2, each resized to image_size.
ImageTensor stack_texture_image(const TextureMatrices& tm, int image_size);

struct Rgb {
  float r, g, b;
};

/// Channel colours of the line plot: load, vibration, occupancy, in-bed duration.
inline constexpr std::array<Rgb, 4> kLinePalette{{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {0.0f, 0.0f, 0.0f},
}};

inline constexpr int kQuadrantMargin = 4;

/// Minimal RGB canvas with integer line drawing; shared with the trace renderer.
class Canvas {
public:
  Canvas(int width, int height, Rgb background = {1.0f, 1.0f, 1.0f});

  int width() const { return width_; }
  int height() const { return height_; }
  void set(int x, int y, Rgb c);
  /// Bresenham line, both endpoints included; pixels outside the canvas are clipped.
  void line(int x0, int y0, int x1, int y1, Rgb c);
  /// Draws the polyline through `ys` (one y per point) with x spread evenly over
  /// [x_left, x_right]. Equivalent to a Bresenham segment between every pair of
  /// consecutive points, but collapses runs that land in the same pixel column.
  void polyline(std::span<const double> values, int x_left, int x_right, int y_top, int y_bottom, Rgb c);
  /// Dashed horizontal line: `on` pixels drawn, `off` skipped.
  void dashed_hline(int x0, int x1, int y, int on, int off, Rgb c);

  const ImageTensor& image() const { return image_; }
  ImageTensor take() { return std::move(image_); }

private:
  int width_, height_;
  ImageTensor image_;
};

/// Pixel row for `v` when [lo, hi] is mapped onto [y_bottom, y_top]; a zero range maps
/// to the middle row.
int scale_to_row(double v, double lo, double hi, int y_top, int y_bottom);

/// 2x2 grid of per-channel line plots on white: load top-left, vibration top-right,
/// occupancy bottom-left, in-bed duration bottom-right.
ImageTensor encode_line_plot(const signal::Window& window, int image_size);

/// Both model inputs for one window.
struct ImagePair {
  ImageTensor line;
  ImageTensor texture;
};

ImagePair encode_window(const signal::Window& window, const EncodingConfig& config);

/// Rounds every value to the nearest multiple of 1/255, matching what survives an
/// 8-bit PNG round trip.
void quantize_u8(ImageTensor& image);

}  // namespace bedexit::imaging
