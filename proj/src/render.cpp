#include "bdgp/render.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "bdgp/error.hpp"

namespace bdgp {

namespace {

using Anchor = std::array<double, 3>;

constexpr std::array<Anchor, 9> kViridis{{{68, 1, 84},
                                          {71, 44, 122},
                                          {59, 81, 139},
                                          {44, 113, 142},
                                          {33, 144, 141},
                                          {39, 173, 129},
                                          {92, 200, 99},
                                          {170, 220, 50},
                                          {253, 231, 37}}};

constexpr std::array<Anchor, 3> kCoolwarm{{{59, 76, 192}, {221, 221, 221}, {180, 4, 38}}};

template <std::size_t N>
Rgba interpolate(const std::array<Anchor, N>& anchors, double u) {
  const double pos = u * static_cast<double>(N - 1);
  const auto k = std::min(static_cast<std::size_t>(pos), N - 2);
  const double w = pos - static_cast<double>(k);
  Rgba c{0, 0, 0, 255};
  unsigned char* ch[3] = {&c.r, &c.g, &c.b};
  for (int i = 0; i < 3; ++i) {
    *ch[i] = static_cast<unsigned char>(std::lround(anchors[k][i] * (1.0 - w) + anchors[k + 1][i] * w));
  }
  return c;
}

Rgba label_color(double value) {
  // Integer hash spread over hue-like RGB; label 0 is dark grey.
  const auto label = static_cast<std::uint64_t>(std::llround(std::max(value, 0.0)));
  if (label == 0) return {40, 40, 40, 255};
  std::uint64_t h = label * 0x9E3779B97F4A7C15ull;
  h ^= h >> 31;
  return {static_cast<unsigned char>(64 + (h & 0xBF)), static_cast<unsigned char>(64 + ((h >> 8) & 0xBF)),
          static_cast<unsigned char>(64 + ((h >> 16) & 0xBF)), 255};
}

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};

}  // namespace

Palette palette_from_name(std::string_view name) {
  if (name == "gray" || name == "grey") return Palette::Gray;
  if (name == "viridis") return Palette::Viridis;
  if (name == "coolwarm") return Palette::Coolwarm;
  if (name == "labels") return Palette::Labels;
  throw ArgumentError("unknown palette \"" + std::string(name) + "\"");
}

Rgba palette_color(Palette p, double unit_value) {
  const double u = std::isfinite(unit_value) ? std::clamp(unit_value, 0.0, 1.0) : 0.0;
  switch (p) {
    case Palette::Gray: {
      const auto v = static_cast<unsigned char>(std::lround(255.0 * u));
      return {v, v, v, 255};
    }
    case Palette::Viridis:
      return interpolate(kViridis, u);
    case Palette::Coolwarm:
      return interpolate(kCoolwarm, u);
    case Palette::Labels:
      return label_color(unit_value);
  }
  return {0, 0, 0, 255};
}

std::vector<unsigned char> heatmap_pixels(const Raster& r, Palette palette,
                                          std::optional<std::pair<double, double>> range) {
  const std::size_t n = r.geom().size();
  double lo = 0.0;
  double hi = 1.0;
  if (range) {
    std::tie(lo, hi) = *range;
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) throw ArgumentError("invalid colour range");
  } else if (palette != Palette::Labels) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      if (!r.is_valid(i)) continue;
      lo = std::min(lo, r[i]);
      hi = std::max(hi, r[i]);
    }
    if (lo > hi) throw ArgumentError("cannot derive a colour range from an all-invalid raster");
  }
  const double span = hi - lo;

  std::vector<unsigned char> px(4 * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!r.is_valid(i)) continue;
    const double u = palette == Palette::Labels ? r[i] : (span > 0.0 ? (r[i] - lo) / span : 0.0);
    const Rgba c = palette_color(palette, u);
    px[4 * i] = c.r;
    px[4 * i + 1] = c.g;
    px[4 * i + 2] = c.b;
    px[4 * i + 3] = c.a;
  }
  return px;
}

void render_heatmap(const Raster& r, const std::filesystem::path& path, Palette palette,
                    std::optional<std::pair<double, double>> range) {
  const auto px = heatmap_pixels(r, palette, range);
  const auto width = static_cast<png_uint_32>(r.geom().n_cols);
  const auto height = static_cast<png_uint_32>(r.geom().n_rows);

  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 row = 0; row < height; ++row) {
    png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(row) * width * 4));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<unsigned char> read_png_rgba(const std::filesystem::path& path, std::size_t& width,
                                         std::size_t& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0)
    throw IoError("cannot read PNG " + path.string());
  image.format = PNG_FORMAT_RGBA;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr) == 0) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string());
  }
  width = image.width;
  height = image.height;
  return buf;
}

void write_line_plot_svg(const std::vector<LineSeries>& series, const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label, const std::string& y_label) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << x_label << "</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n"
      << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << y0
      << "</text>\n"
      << "<text x=\"" << L - 4 << "\" y=\"" << T + 10 << "\" text-anchor=\"end\" font-size=\"10\">" << y1
      << "</text>\n"
      << "<text x=\"" << L << "\" y=\"" << H - B + 14 << "\" font-size=\"10\">" << x0 << "</text>\n"
      << "<text x=\"" << W - R << "\" y=\"" << H - B + 14 << "\" text-anchor=\"end\" font-size=\"10\">" << x1
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    svg << "<polyline fill=\"none\" stroke=\"" << colors[k % 4] << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[k].points) svg << sx(x) << ',' << sy(y) << ' ';
    svg << "\"/>\n<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" fill=\""
        << colors[k % 4] << "\" font-size=\"11\">" << series[k].label << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << svg.str();
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace bdgp
