#include "rccm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace rccm::plot {

namespace {

// ---------------------------------------------------------------------------
// PNG writing: stored (uncompressed) deflate blocks, hand-rolled CRC/Adler.
// ---------------------------------------------------------------------------

uint32_t crc32_of(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[n] = c;
    }
    init = true;
  }
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> head;
  put_u32(head, static_cast<uint32_t>(payload.size()));
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  std::vector<uint8_t> crc;
  put_u32(crc, crc32_of(body.data(), body.size()) ^ 0xffffffffu);
  f.write(reinterpret_cast<const char*>(crc.data()), 4);
}

std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> out;
  out.push_back(0x78);  // zlib header: deflate, 32k window
  out.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size() || raw.empty()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
    const bool last = pos + chunk >= raw.size();
    out.push_back(last ? 1 : 0);  // stored block, BFINAL on the last
    out.push_back(static_cast<uint8_t>(chunk & 0xff));
    out.push_back(static_cast<uint8_t>(chunk >> 8));
    out.push_back(static_cast<uint8_t>(~chunk & 0xff));
    out.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + static_cast<std::ptrdiff_t>(pos),
               raw.begin() + static_cast<std::ptrdiff_t>(pos + chunk));
    pos += chunk;
    if (last) break;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  put_u32(out, (b << 16) | a);
  return out;
}

// 5x7 glyphs for axis labels
const char* glyph(char c) {
  switch (c) {
    case '0': return "01110100011001110101110011000101110";
    case '1': return "00100011000010000100001000010001110";
    case '2': return "01110100010000100110010001000011111";
    case '3': return "01110100010000101110000011000101110";
    case '4': return "00010001100101010010111110001000010";
    case '5': return "11111100001111000001000011000101110";
    case '6': return "01110100011000011110100011000101110";
    case '7': return "11111000010001000100010001000010000";
    case '8': return "01110100011000101110100011000101110";
    case '9': return "01110100011000101111000011000101110";
    case '-': return "00000000000000011111000000000000000";
    case '.': return "00000000000000000000000000110001100";
    default: return "00000000000000000000000000000000000";
  }
}

}  // namespace

void Canvas::set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const size_t i = 3 * (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x));
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

void Canvas::hline(int x0, int x1, int y, uint8_t r, uint8_t g, uint8_t b) {
  for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, r, g, b);
}

void Canvas::vline(int x, int y0, int y1, uint8_t r, uint8_t g, uint8_t b) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) set(x, y, r, g, b);
}

void Canvas::dot(int x, int y, int radius, uint8_t r, uint8_t g, uint8_t b) {
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, r, g, b);
    }
  }
}

void Canvas::line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(x0, y0, r, g, b);
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

void Canvas::text(int x, int y, const std::string& s, uint8_t r, uint8_t g, uint8_t b) {
  for (char c : s) {
    const char* bits = glyph(c);
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (bits[row * 5 + col] == '1') set(x + col, y + row, r, g, b);
      }
    }
    x += 6;
  }
}

void write_png(const std::filesystem::path& path, const Canvas& canvas) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write plot: " + path.string());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(canvas.width));
  put_u32(ihdr, static_cast<uint32_t>(canvas.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(canvas.height) * (static_cast<size_t>(canvas.width) * 3 + 1));
  for (int y = 0; y < canvas.height; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = canvas.rgb.data() + static_cast<size_t>(y) * static_cast<size_t>(canvas.width) * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(canvas.width) * 3);
  }
  write_chunk(f, "IDAT", zlib_stored(raw));
  write_chunk(f, "IEND", {});
}

namespace {

struct AxisScale {
  double lo = 0.0, hi = 1.0;
  int px0 = 0, px1 = 1;
  int to_px(double v) const {
    const double t = (v - lo) / (hi - lo);
    return px0 + static_cast<int>(std::lround(t * (px1 - px0)));
  }
};

AxisScale make_scale(double lo, double hi, int px0, int px1) {
  if (hi <= lo) hi = lo + 1.0;
  const double pad = 0.06 * (hi - lo);
  return AxisScale{lo - pad, hi + pad, px0, px1};
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

void draw_axes(Canvas& c, const AxisScale& xs, const AxisScale& ys) {
  c.hline(xs.px0, xs.px1, ys.px0, 0, 0, 0);
  c.vline(xs.px0, ys.px1, ys.px0, 0, 0, 0);
  for (int t = 0; t <= 4; ++t) {
    const double xv = xs.lo + (xs.hi - xs.lo) * t / 4.0;
    const double yv = ys.lo + (ys.hi - ys.lo) * t / 4.0;
    const int xp = xs.to_px(xv), yp = ys.to_px(yv);
    c.vline(xp, ys.px0, ys.px0 + 3, 0, 0, 0);
    c.text(xp - 8, ys.px0 + 6, short_num(xv), 0, 0, 0);
    c.hline(xs.px0 - 3, xs.px0, yp, 0, 0, 0);
    c.text(std::max(0, xs.px0 - 42), yp - 3, short_num(yv), 0, 0, 0);
  }
}

}  // namespace

void scatter_plot(const std::filesystem::path& path, const std::vector<double>& x,
                  const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) {
    throw std::invalid_argument("scatter_plot: need equal nonempty vectors");
  }
  Canvas c(520, 400);
  double lo = x[0], hi = x[0];
  for (size_t i = 0; i < x.size(); ++i) {
    lo = std::min({lo, x[i], y[i]});
    hi = std::max({hi, x[i], y[i]});
  }
  const AxisScale xs = make_scale(lo, hi, 60, 500);
  const AxisScale ys = make_scale(lo, hi, 380, 20);
  draw_axes(c, xs, ys);
  c.line(xs.to_px(xs.lo), ys.to_px(xs.lo), xs.to_px(xs.hi), ys.to_px(xs.hi), 180, 180, 180);
  for (size_t i = 0; i < x.size(); ++i) {
    c.dot(xs.to_px(x[i]), ys.to_px(y[i]), 2, 30, 60, 200);
  }
  write_png(path, c);
}

void bland_altman_plot(const std::filesystem::path& path, const std::vector<double>& x,
                       const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) {
    throw std::invalid_argument("bland_altman_plot: need equal nonempty vectors");
  }
  std::vector<double> mean(x.size()), diff(x.size());
  double bias = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mean[i] = 0.5 * (x[i] + y[i]);
    diff[i] = x[i] - y[i];
    bias += diff[i];
  }
  bias /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double d : diff) ss += (d - bias) * (d - bias);
  const double sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
  const double lo_lim = bias - 1.96 * sd, hi_lim = bias + 1.96 * sd;

  Canvas c(520, 400);
  double mlo = mean[0], mhi = mean[0], dlo = std::min(diff[0], lo_lim), dhi = std::max(diff[0], hi_lim);
  for (size_t i = 0; i < x.size(); ++i) {
    mlo = std::min(mlo, mean[i]);
    mhi = std::max(mhi, mean[i]);
    dlo = std::min(dlo, diff[i]);
    dhi = std::max(dhi, diff[i]);
  }
  const AxisScale xs = make_scale(mlo, mhi, 60, 500);
  const AxisScale ys = make_scale(dlo, dhi, 380, 20);
  draw_axes(c, xs, ys);
  c.hline(xs.px0, xs.px1, ys.to_px(bias), 200, 30, 30);
  c.hline(xs.px0, xs.px1, ys.to_px(lo_lim), 200, 120, 120);
  c.hline(xs.px0, xs.px1, ys.to_px(hi_lim), 200, 120, 120);
  for (size_t i = 0; i < x.size(); ++i) {
    c.dot(xs.to_px(mean[i]), ys.to_px(diff[i]), 2, 30, 60, 200);
  }
  write_png(path, c);
}

}  // namespace rccm::plot
