#include "vtcfed/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vtcfed/errors.hpp"

namespace vtcfed::img {

namespace {

void write_png(const std::string& path, const std::vector<unsigned char>& pixels, int width, int height,
               int channels) {
    if (static_cast<long>(pixels.size()) != static_cast<long>(width) * height * channels)
        throw std::invalid_argument("write_png: pixel buffer size mismatch");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IngestionError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw IngestionError("libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(height));
    for (int y = 0; y < height; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_png_gray(const std::string& path, const std::vector<unsigned char>& pixels, int width, int height) {
    write_png(path, pixels, width, height, 1);
}

void write_png_rgb(const std::string& path, const std::vector<unsigned char>& pixels, int width, int height) {
    write_png(path, pixels, width, height, 3);
}

void write_sample_grid_png(const std::string& path, const Tensor& xs, int cols) {
    if (xs.ndim() != 4) throw std::invalid_argument("write_sample_grid_png: expected (N,C,H,W)");
    const long n = xs.dim(0), c = xs.dim(1), h = xs.dim(2), w = xs.dim(3);
    if (c != 1 && c != 3) throw std::invalid_argument("write_sample_grid_png: channels must be 1 or 3");
    const int rows = static_cast<int>((n + cols - 1) / cols);
    const int pad = 2;
    const int gw = static_cast<int>(cols * (w + pad) + pad), gh = static_cast<int>(rows * (h + pad) + pad);
    std::vector<unsigned char> pixels(static_cast<size_t>(gw) * gh * c, 32);  // dark background
    for (long i = 0; i < n; ++i) {
        const int r = static_cast<int>(i) / cols, q = static_cast<int>(i) % cols;
        const int oy = pad + r * static_cast<int>(h + pad), ox = pad + q * static_cast<int>(w + pad);
        for (long ch = 0; ch < c; ++ch)
            for (long y = 0; y < h; ++y)
                for (long x = 0; x < w; ++x)
                    pixels[(static_cast<size_t>(oy + y) * gw + static_cast<size_t>(ox + x)) * c +
                           static_cast<size_t>(ch)] = to_byte(xs.at(i, ch, y, x));
    }
    write_png(path, pixels, gw, gh, static_cast<int>(c));
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

}  // namespace

void write_line_plot_svg(const std::string& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::vector<Series>& series, double vline_x) {
    const int W = 720, H = 440, ml = 60, mr = 160, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.xs.size(); ++i) {
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ofstream f(path);
    if (!f) throw IngestionError("cannot write plot: " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    // axes
    f << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb << "' stroke='black'/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5.0, yv = ymin + (ymax - ymin) * i / 5.0;
        f << "<text x='" << px(xv) << "' y='" << H - mb + 18 << "' text-anchor='middle' font-size='11'>"
          << fmt(std::round(xv * 100) / 100) << "</text>\n";
        f << "<text x='" << ml - 8 << "' y='" << py(yv) + 4 << "' text-anchor='end' font-size='11'>"
          << fmt(std::round(yv * 100) / 100) << "</text>\n";
        f << "<line x1='" << ml << "' y1='" << py(yv) << "' x2='" << W - mr << "' y2='" << py(yv)
          << "' stroke='#dddddd'/>\n";
    }
    f << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='12'>" << x_label
      << "</text>\n";
    f << "<text x='16' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
      << (mt + H - mb) / 2 << ")'>" << y_label << "</text>\n";
    if (vline_x > 0.0 && vline_x >= xmin && vline_x <= xmax)
        f << "<line x1='" << px(vline_x) << "' y1='" << mt << "' x2='" << px(vline_x) << "' y2='" << H - mb
          << "' stroke='black' stroke-dasharray='6,4'/>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        f << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
        for (size_t i = 0; i < series[s].xs.size(); ++i)
            f << px(series[s].xs[i]) << ',' << py(series[s].ys[i]) << ' ';
        f << "'/>\n";
        f << "<text x='" << W - mr + 10 << "' y='" << mt + 16 * (s + 1) << "' font-size='12' fill='" << color << "'>"
          << series[s].label << "</text>\n";
    }
    f << "</svg>\n";
}

}  // namespace vtcfed::img
