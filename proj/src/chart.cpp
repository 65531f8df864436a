#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <memory>

#include "veil/error.hpp"
#include "veil/experiment.hpp"

namespace veil {
namespace {

using Rgb = std::array<unsigned char, 3>;

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kInk{40, 40, 40};
constexpr Rgb kGrid{220, 220, 220};
constexpr Rgb kPlrColor{214, 96, 39};
constexpr Rgb kAccColor{51, 102, 170};

// 3x5 glyphs, rows top to bottom, three bits per row (MSB left).
struct Glyph {
  char c;
  std::array<unsigned char, 5> rows;
};

constexpr Glyph kFont[] = {
    {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}},
    {'3', {7, 1, 7, 1, 7}}, {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}},
    {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}}, {'8', {7, 5, 7, 5, 7}},
    {'9', {7, 5, 7, 1, 7}}, {'a', {2, 5, 7, 5, 5}}, {'b', {6, 5, 6, 5, 6}},
    {'c', {3, 4, 4, 4, 3}}, {'d', {6, 5, 5, 5, 6}}, {'e', {7, 4, 6, 4, 7}},
    {'f', {7, 4, 6, 4, 4}}, {'g', {3, 4, 5, 5, 3}}, {'h', {5, 5, 7, 5, 5}},
    {'i', {7, 2, 2, 2, 7}}, {'j', {1, 1, 1, 5, 2}}, {'k', {5, 5, 6, 5, 5}},
    {'l', {4, 4, 4, 4, 7}}, {'m', {5, 7, 7, 5, 5}}, {'n', {6, 5, 5, 5, 5}},
    {'o', {2, 5, 5, 5, 2}}, {'p', {6, 5, 6, 4, 4}}, {'q', {2, 5, 5, 6, 3}},
    {'r', {6, 5, 6, 5, 5}}, {'s', {3, 4, 2, 1, 6}}, {'t', {7, 2, 2, 2, 2}},
    {'u', {5, 5, 5, 5, 7}}, {'v', {5, 5, 5, 5, 2}}, {'w', {5, 5, 7, 7, 5}},
    {'x', {5, 5, 2, 5, 5}}, {'y', {5, 5, 2, 2, 2}}, {'z', {7, 1, 2, 4, 7}},
    {'(', {2, 4, 4, 4, 2}}, {')', {2, 1, 1, 1, 2}}, {'.', {0, 0, 0, 0, 2}},
    {'-', {0, 0, 7, 0, 0}}, {'_', {0, 0, 0, 0, 7}},
};

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h), kWhite) {}

  void fill(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(y0, 0); y < std::min(y1, h_); ++y) {
      for (int x = std::max(x0, 0); x < std::min(x1, w_); ++x) px_[y * w_ + x] = c;
    }
  }

  // Draws text with `scale`-pixel dots; returns the advance width.
  int text(int x, int y, const std::string& s, int scale, Rgb c) {
    int cx = x;
    for (char ch : s) {
      const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      const auto* g = std::find_if(std::begin(kFont), std::end(kFont),
                                   [&](const Glyph& f) { return f.c == lower; });
      if (g != std::end(kFont)) {
        for (int r = 0; r < 5; ++r) {
          for (int b = 0; b < 3; ++b) {
            if (g->rows[r] & (4 >> b)) {
              fill(cx + b * scale, y + r * scale, cx + (b + 1) * scale, y + (r + 1) * scale, c);
            }
          }
        }
      }
      cx += 4 * scale;
    }
    return cx - x;
  }

  void save(const std::filesystem::path& path) const {
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!f) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w_, h_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(w_) * 3);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        std::copy(px_[y * w_ + x].begin(), px_[y * w_ + x].end(), row.begin() + x * 3);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

}  // namespace

void write_bar_chart(const std::filesystem::path& path, const std::vector<TableRow>& rows) {
  if (rows.empty()) throw ValidationError("bar chart needs at least one row");
  constexpr int kLeft = 40, kTop = 30, kPlotH = 200, kBar = 18, kGroup = 80, kBottom = 60;
  const int width = kLeft + kGroup * static_cast<int>(rows.size()) + 20;
  Canvas c(width, kTop + kPlotH + kBottom);

  for (int tick = 0; tick <= 4; ++tick) {
    const int y = kTop + kPlotH - tick * kPlotH / 4;
    c.fill(kLeft, y, width - 10, y + 1, kGrid);
    const std::string label = tick == 0 ? "0" : tick == 4 ? "1" : "." + std::to_string(tick * 25);
    c.text(4, y - 5, label, 2, kInk);
  }
  c.fill(kLeft, kTop, kLeft + 1, kTop + kPlotH + 1, kInk);
  c.fill(kLeft, kTop + kPlotH, width - 10, kTop + kPlotH + 1, kInk);

  // Legend.
  c.fill(kLeft, 8, kLeft + 10, 18, kPlrColor);
  const int adv = c.text(kLeft + 14, 8, "plr", 2, kInk);
  c.fill(kLeft + 24 + adv, 8, kLeft + 34 + adv, 18, kAccColor);
  c.text(kLeft + 38 + adv, 8, "acc", 2, kInk);

  auto bar = [&](int x, std::optional<double> v, Rgb color) {
    if (!v) return;
    const int h = static_cast<int>(std::clamp(*v, 0.0, 1.0) * kPlotH + 0.5);
    c.fill(x, kTop + kPlotH - h, x + kBar, kTop + kPlotH, color);
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int x = kLeft + 12 + kGroup * static_cast<int>(i);
    bar(x, rows[i].plr, kPlrColor);
    bar(x + kBar + 4, rows[i].acc, kAccColor);
    // Labels alternate between two lines so long ids do not collide.
    const int y = kTop + kPlotH + 8 + (i % 2) * 14;
    c.text(x - 4, y, rows[i].variant.substr(0, 19), 1 + (rows[i].variant.size() <= 9), kInk);
  }
  c.save(path);
}

}  // namespace veil
