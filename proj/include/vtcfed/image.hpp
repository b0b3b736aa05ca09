#pragma once

#include <string>
#include <vector>

#include "vtcfed/tensor.hpp"

namespace vtcfed::img {

// 8-bit PNG writers (lossless). `pixels` is row-major, top-down.
void write_png_gray(const std::string& path, const std::vector<unsigned char>& pixels, int width, int height);
void write_png_rgb(const std::string& path, const std::vector<unsigned char>& pixels, int width, int height);

// Tiles the first rows of a (N,C,H,W) tensor with values in [0,1] into a
// cols-wide grid image. C must be 1 (gray) or 3 (rgb).
void write_sample_grid_png(const std::string& path, const Tensor& xs, int cols);

// Minimal static line plot as SVG. One polyline per series; an optional
// vertical dashed marker (e.g. the FL / fine-tune boundary).
struct Series {
    std::string label;
    std::vector<double> xs, ys;
};

void write_line_plot_svg(const std::string& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, const std::vector<Series>& series,
                         double vline_x = -1.0);

}  // namespace vtcfed::img
