// SPDX-License-Identifier: Apache-2.0
#include "s3vdc/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>

namespace s3vdc {

namespace {

struct Rgb {
  unsigned char r, g, b;
};

// qualitative palette, cycled past 12 clusters
constexpr Rgb kPalette[] = {
    {31, 119, 180}, {255, 127, 14},  {44, 160, 44},   {214, 39, 40},
    {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
    {188, 189, 34}, {23, 190, 207},  {174, 199, 232}, {255, 187, 120},
};

}  // namespace

void write_scatter_png(const std::string& path, const MatD& points,
                       const std::vector<int>& clusters, int width, int height) {
  require(points.cols() == 2, "write_scatter_png: points must be n x 2");
  require(points.rows() == static_cast<Eigen::Index>(clusters.size()),
          "write_scatter_png: cluster ids must match point count");
  require(width >= 16 && height >= 16, "write_scatter_png: image too small");

  const double xmin = points.col(0).minCoeff(), xmax = points.col(0).maxCoeff();
  const double ymin = points.col(1).minCoeff(), ymax = points.col(1).maxCoeff();
  const double xr = std::max(xmax - xmin, 1e-12), yr = std::max(ymax - ymin, 1e-12);
  const int margin = 8;

  std::vector<unsigned char> img(static_cast<std::size_t>(width) * height * 3, 255);
  auto put = [&](int x, int y, Rgb c) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
    img[o] = c.r;
    img[o + 1] = c.g;
    img[o + 2] = c.b;
  };
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int x = margin + static_cast<int>((points(i, 0) - xmin) / xr * (width - 2 * margin));
    const int y = height - 1 - margin -
                  static_cast<int>((points(i, 1) - ymin) / yr * (height - 2 * margin));
    const Rgb c = kPalette[static_cast<std::size_t>(std::max(clusters[static_cast<std::size_t>(i)], 0)) %
                           (sizeof(kPalette) / sizeof(kPalette[0]))];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) put(x + dx, y + dy, c);
  }

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("libpng failure while writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, img.data() + 3 * static_cast<std::size_t>(y) * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace s3vdc
