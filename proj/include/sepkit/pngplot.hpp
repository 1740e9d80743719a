#pragma once

// Dependency-free plotting: an RGB canvas with a 5x7 bitmap font, a PNG
// writer (stored-block deflate, so no external compressor), and the two plot
// layouts the reports need -- a multi-series line plot and a scatter plot
// with marginal histograms and a y=x reference line.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

namespace png_detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::vector<std::uint32_t> t(256);
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_u32be(out, std::uint32_t(payload.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, crc32(body.data(), body.size()));
}

// zlib stream made of uncompressed deflate blocks.
inline std::vector<std::uint8_t> zlib_stored(const std::vector<std::uint8_t>& raw) {
  std::vector<std::uint8_t> out;
  out.push_back(0x78);  // 32K window, deflate
  out.push_back(0x01);  // no preset dictionary, fastest
  std::size_t pos = 0;
  do {
    const std::size_t n = std::min<std::size_t>(65535, raw.size() - pos);
    const bool last = pos + n == raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(std::uint8_t(n));
    out.push_back(std::uint8_t(n >> 8));
    out.push_back(std::uint8_t(~n));
    out.push_back(std::uint8_t(~n >> 8));
    out.insert(out.end(), raw.begin() + long(pos), raw.begin() + long(pos + n));
    pos += n;
  } while (pos < raw.size());
  put_u32be(out, adler32(raw.data(), raw.size()));
  return out;
}

// 5x7 glyphs, one byte per column, least significant bit on top.
inline const std::uint8_t* glyph(char c) {
  static const std::map<char, std::array<std::uint8_t, 5>> font = {
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00}}, {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
      {'.', {0x00, 0x60, 0x60, 0x00, 0x00}}, {'(', {0x00, 0x1c, 0x22, 0x41, 0x00}},
      {')', {0x00, 0x41, 0x22, 0x1c, 0x00}}, {'/', {0x20, 0x10, 0x08, 0x04, 0x02}},
      {':', {0x00, 0x36, 0x36, 0x00, 0x00}}, {'=', {0x14, 0x14, 0x14, 0x14, 0x14}},
      {'0', {0x3e, 0x51, 0x49, 0x45, 0x3e}}, {'1', {0x00, 0x42, 0x7f, 0x40, 0x00}},
      {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4b, 0x31}},
      {'4', {0x18, 0x14, 0x12, 0x7f, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
      {'6', {0x3c, 0x4a, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
      {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1e}},
      {'A', {0x7e, 0x11, 0x11, 0x11, 0x7e}}, {'B', {0x7f, 0x49, 0x49, 0x49, 0x36}},
      {'C', {0x3e, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7f, 0x41, 0x41, 0x22, 0x1c}},
      {'E', {0x7f, 0x49, 0x49, 0x49, 0x41}}, {'F', {0x7f, 0x09, 0x09, 0x09, 0x01}},
      {'G', {0x3e, 0x41, 0x49, 0x49, 0x7a}}, {'H', {0x7f, 0x08, 0x08, 0x08, 0x7f}},
      {'I', {0x00, 0x41, 0x7f, 0x41, 0x00}}, {'J', {0x20, 0x40, 0x41, 0x3f, 0x01}},
      {'K', {0x7f, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7f, 0x40, 0x40, 0x40, 0x40}},
      {'M', {0x7f, 0x02, 0x0c, 0x02, 0x7f}}, {'N', {0x7f, 0x04, 0x08, 0x10, 0x7f}},
      {'O', {0x3e, 0x41, 0x41, 0x41, 0x3e}}, {'P', {0x7f, 0x09, 0x09, 0x09, 0x06}},
      {'Q', {0x3e, 0x41, 0x51, 0x21, 0x5e}}, {'R', {0x7f, 0x09, 0x19, 0x29, 0x46}},
      {'S', {0x46, 0x49, 0x49, 0x49, 0x31}}, {'T', {0x01, 0x01, 0x7f, 0x01, 0x01}},
      {'U', {0x3f, 0x40, 0x40, 0x40, 0x3f}}, {'V', {0x1f, 0x20, 0x40, 0x20, 0x1f}},
      {'W', {0x3f, 0x40, 0x38, 0x40, 0x3f}}, {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
      {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}}, {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}}};
  auto it = font.find(char(std::toupper(static_cast<unsigned char>(c))));
  return it == font.end() ? font.at(' ').data() : it->second.data();
}

}  // namespace png_detail

class Canvas {
 public:
  Canvas(int width, int height, Rgb bg = {255, 255, 255})
      : width_(width), height_(height), pix_(std::size_t(width) * height, bg) {
    if (width < 1 || height < 1) throw std::invalid_argument("Canvas: bad size");
  }

  int width() const { return width_; }
  int height() const { return height_; }

  void set(int x, int y, Rgb c) {
    if (x >= 0 && x < width_ && y >= 0 && y < height_)
      pix_[std::size_t(y) * width_ + x] = c;
  }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
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

  void marker(int x, int y, Rgb c, int radius = 2) {
    fill_rect(x - radius, y - radius, x + radius, y + radius, c);
  }

  void text(int x, int y, const std::string& s, Rgb c) {
    for (char ch : s) {
      const std::uint8_t* g = png_detail::glyph(ch);
      for (int col = 0; col < 5; ++col)
        for (int row = 0; row < 7; ++row)
          if (g[col] & (1 << row)) set(x + col, y + row, c);
      x += 6;
    }
  }

  void save_png(const std::filesystem::path& path) const {
    using namespace png_detail;
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height_) * (std::size_t(width_) * 3 + 1));
    for (int y = 0; y < height_; ++y) {
      raw.push_back(0);  // filter: none
      for (int x = 0; x < width_; ++x) {
        const Rgb& p = pix_[std::size_t(y) * width_ + x];
        raw.push_back(p.r);
        raw.push_back(p.g);
        raw.push_back(p.b);
      }
    }
    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, std::uint32_t(width_));
    put_u32be(ihdr, std::uint32_t(height_));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", zlib_stored(raw));
    put_chunk(out, "IEND", {});
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_png: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("save_png: write failed: " + path.string());
  }

 private:
  int width_, height_;
  std::vector<Rgb> pix_;
};

// ---------------------------------------------------------------------------
// Plot descriptions. The structure (ticks, series, diagonal) is exposed so
// layout contracts can be checked without decoding pixels.

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

struct LinePlot {
  std::string title, x_label, y_label;
  std::vector<double> x_ticks;
  std::vector<Series> series;
};

struct ScatterPlot {
  std::string title, x_label, y_label;
  std::vector<std::pair<double, double>> points;
  bool diagonal = true;  // y = x reference line
  int histogram_bins = 20;
};

namespace plot_detail {

inline Rgb palette(std::size_t i) {
  static const Rgb colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                               {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
  return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

inline std::string format_tick(double v) {
  char buf[32];
  if (std::abs(v - std::round(v)) < 1e-9)
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  else
    std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace plot_detail

inline void render_line_plot(const LinePlot& plot, const std::filesystem::path& path,
                             int width = 640, int height = 480) {
  using namespace plot_detail;
  if (plot.series.empty()) throw std::invalid_argument("render_line_plot: no series");
  double x_min = std::numeric_limits<double>::max(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (double t : plot.x_ticks) {
    x_min = std::min(x_min, t);
    x_max = std::max(x_max, t);
  }
  for (const auto& s : plot.series)
    for (auto [x, y] : s.points) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  if (x_min >= x_max) x_max = x_min + 1;
  if (y_min >= y_max) y_max = y_min + 1;
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const int left = 60, right = width - 20, top = 40, bottom = height - 50;
  Canvas canvas(width, height);
  const Rgb black{0, 0, 0}, grey{200, 200, 200};
  auto px = [&](double x) { return int(left + (x - x_min) / (x_max - x_min) * (right - left)); };
  auto py = [&](double y) { return int(bottom - (y - y_min) / (y_max - y_min) * (bottom - top)); };

  canvas.text(left, 12, plot.title, black);
  canvas.text((left + right) / 2 - int(plot.x_label.size()) * 3, height - 14, plot.x_label, black);
  canvas.text(4, top - 14, plot.y_label, black);
  canvas.line(left, top, left, bottom, black);
  canvas.line(left, bottom, right, bottom, black);

  for (double t : plot.x_ticks) {
    const int x = px(t);
    canvas.line(x, bottom, x, bottom + 4, black);
    for (int y = top; y < bottom; y += 4) canvas.set(x, y, grey);
    const std::string label = format_tick(t);
    canvas.text(x - int(label.size()) * 3, bottom + 8, label, black);
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = y_min + (y_max - y_min) * k / 4.0;
    const int y = py(v);
    canvas.line(left - 4, y, left, y, black);
    const std::string label = format_tick(v);
    canvas.text(left - 8 - int(label.size()) * 6, y - 3, label, black);
  }

  for (std::size_t s = 0; s < plot.series.size(); ++s) {
    const Rgb c = palette(s);
    auto pts = plot.series[s].points;
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
      canvas.line(px(pts[i].first), py(pts[i].second), px(pts[i + 1].first),
                  py(pts[i + 1].second), c);
    for (auto [x, y] : pts) canvas.marker(px(x), py(y), c, 2);
    // Legend entry.
    const int ly = top + 4 + int(s) * 12;
    canvas.fill_rect(right - 110, ly, right - 98, ly + 6, c);
    canvas.text(right - 92, ly, plot.series[s].name, black);
  }
  canvas.save_png(path);
}

inline void render_scatter_plot(const ScatterPlot& plot, const std::filesystem::path& path,
                                int width = 640, int height = 640) {
  using namespace plot_detail;
  if (plot.points.empty()) throw std::invalid_argument("render_scatter_plot: no points");
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  for (auto [x, y] : plot.points) {
    lo = std::min({lo, x, y});
    hi = std::max({hi, x, y});
  }
  if (lo >= hi) hi = lo + 1;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  // Main panel with histogram strips above (x margin) and right (y margin).
  const int strip = 80, gap = 8;
  const int left = 60, top = 30 + strip + gap;
  const int right = width - 30 - strip - gap, bottom = height - 50;
  Canvas canvas(width, height);
  const Rgb black{0, 0, 0}, blue{31, 119, 180}, grey{150, 150, 150};
  auto px = [&](double x) { return int(left + (x - lo) / (hi - lo) * (right - left)); };
  auto py = [&](double y) { return int(bottom - (y - lo) / (hi - lo) * (bottom - top)); };

  canvas.text(left, 10, plot.title, black);
  canvas.text((left + right) / 2 - int(plot.x_label.size()) * 3, height - 14, plot.x_label, black);
  canvas.text(4, top - 14, plot.y_label, black);
  canvas.line(left, top, left, bottom, black);
  canvas.line(left, bottom, right, bottom, black);

  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    canvas.line(px(v), bottom, px(v), bottom + 4, black);
    const std::string label = format_tick(v);
    canvas.text(px(v) - int(label.size()) * 3, bottom + 8, label, black);
    canvas.line(left - 4, py(v), left, py(v), black);
    canvas.text(left - 8 - int(label.size()) * 6, py(v) - 3, label, black);
  }

  if (plot.diagonal) canvas.line(px(lo), py(lo), px(hi), py(hi), grey);
  for (auto [x, y] : plot.points) canvas.marker(px(x), py(y), blue, 2);

  // Marginal histograms.
  std::vector<int> hx(std::size_t(plot.histogram_bins), 0), hy(std::size_t(plot.histogram_bins), 0);
  auto bin = [&](double v) {
    return std::min(plot.histogram_bins - 1,
                    std::max(0, int((v - lo) / (hi - lo) * plot.histogram_bins)));
  };
  for (auto [x, y] : plot.points) {
    ++hx[std::size_t(bin(x))];
    ++hy[std::size_t(bin(y))];
  }
  const int hx_max = *std::max_element(hx.begin(), hx.end());
  const int hy_max = *std::max_element(hy.begin(), hy.end());
  for (int b = 0; b < plot.histogram_bins; ++b) {
    const int x0 = px(lo + (hi - lo) * b / plot.histogram_bins);
    const int x1 = px(lo + (hi - lo) * (b + 1) / plot.histogram_bins) - 1;
    const int h = hx_max > 0 ? hx[std::size_t(b)] * (strip - 4) / hx_max : 0;
    if (h > 0) canvas.fill_rect(x0, top - gap - h, x1, top - gap, blue);
    const int y0 = py(lo + (hi - lo) * (b + 1) / plot.histogram_bins) + 1;
    const int y1 = py(lo + (hi - lo) * b / plot.histogram_bins);
    const int w = hy_max > 0 ? hy[std::size_t(b)] * (strip - 4) / hy_max : 0;
    if (w > 0) canvas.fill_rect(right + gap, y0, right + gap + w, y1, blue);
  }
  canvas.save_png(path);
}

}  // namespace sepkit
