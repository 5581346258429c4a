#include "volseg/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <png.h>

#include "volseg/error.hpp"
#include "volseg/io_util.hpp"

namespace volseg {

const char* plane_name(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "?";
}

std::array<std::uint8_t, 3> RgbImage::pixel(std::size_t col, std::size_t row) const {
  const std::size_t i = 3 * (row * width + col);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

std::size_t RgbImage::colored_pixel_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 2 < pixels.size(); i += 3) {
    if (pixels[i] != pixels[i + 1] || pixels[i + 1] != pixels[i + 2]) ++n;
  }
  return n;
}

namespace {

// Maps image (col, row) to volume (x, y, z) for a plane at fixed `slice`.
std::array<std::size_t, 3> to_voxel(Plane p, std::size_t slice, std::size_t col, std::size_t row) {
  switch (p) {
    case Plane::axial: return {col, row, slice};
    case Plane::coronal: return {col, slice, row};
    case Plane::sagittal: return {slice, col, row};
  }
  return {0, 0, 0};
}

std::array<std::size_t, 2> plane_size(Plane p, const Dims& d) {
  switch (p) {
    case Plane::axial: return {d[0], d[1]};
    case Plane::coronal: return {d[0], d[2]};
    case Plane::sagittal: return {d[1], d[2]};
  }
  return {0, 0};
}

RgbImage render_plane(const Volume& v, const Mask& m, Plane p, std::size_t slice) {
  const auto [w, h] = plane_size(p, v.dims);
  RgbImage img{w, h, std::vector<std::uint8_t>(3 * w * h)};
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const auto [x, y, z] = to_voxel(p, slice, c, r);
      lo = std::min(lo, v.at(x, y, z));
      hi = std::max(hi, v.at(x, y, z));
    }
  const float range = hi > lo ? hi - lo : 1.0f;
  auto in_mask = [&](std::ptrdiff_t c, std::ptrdiff_t r) {
    if (c < 0 || r < 0 || c >= static_cast<std::ptrdiff_t>(w) || r >= static_cast<std::ptrdiff_t>(h)) return false;
    const auto [x, y, z] = to_voxel(p, slice, static_cast<std::size_t>(c), static_cast<std::size_t>(r));
    return m.at(x, y, z) != 0;
  };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const auto [x, y, z] = to_voxel(p, slice, c, r);
      const auto gray = static_cast<std::uint8_t>(std::lround(255.0f * (v.at(x, y, z) - lo) / range));
      std::uint8_t* px = &img.pixels[3 * (r * w + c)];
      px[0] = px[1] = px[2] = gray;
      const auto ci = static_cast<std::ptrdiff_t>(c), ri = static_cast<std::ptrdiff_t>(r);
      if (in_mask(ci, ri) &&
          (!in_mask(ci - 1, ri) || !in_mask(ci + 1, ri) || !in_mask(ci, ri - 1) || !in_mask(ci, ri + 1))) {
        px[0] = 255;
        px[1] = 0;
        px[2] = 0;
      }
    }
  return img;
}

}  // namespace

OverlaySet render_overlay(const Volume& volume, const Mask& mask) {
  if (volume.dims != mask.dims) {
    throw ShapeError("overlay: volume " + dims_str(volume.dims) + " and mask " + dims_str(mask.dims) + " differ");
  }
  OverlaySet out;
  std::array<long double, 3> sum{};
  std::size_t n = 0;
  for (std::size_t z = 0; z < mask.dims[2]; ++z)
    for (std::size_t y = 0; y < mask.dims[1]; ++y)
      for (std::size_t x = 0; x < mask.dims[0]; ++x) {
        if (!mask.at(x, y, z)) continue;
        sum[0] += x;
        sum[1] += y;
        sum[2] += z;
        ++n;
      }
  std::array<std::size_t, 3> centroid{};
  out.mask_empty = n == 0;
  for (int a = 0; a < 3; ++a) {
    centroid[a] = n == 0 ? mask.dims[a] / 2
                         : static_cast<std::size_t>(std::lround(static_cast<double>(sum[a] / n)));
  }
  out.slice = {centroid[2], centroid[1], centroid[0]};
  for (auto p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    const auto i = static_cast<std::size_t>(p);
    out.images[i] = render_plane(volume, mask, p, out.slice[i]);
  }
  return out;
}

namespace {

void png_append(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void png_flush_noop(png_structp) {}

}  // namespace

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: cannot create info struct");
  }
  std::string bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encoding failed for " + path.string());
  }
  png_set_write_fn(png, &bytes, png_append, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + 3 * r * image.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_file_atomic(path, bytes);
}

std::vector<std::filesystem::path> export_overlay(const Volume& volume, const Mask& mask,
                                                  const std::filesystem::path& prefix) {
  const OverlaySet set = render_overlay(volume, mask);
  if (set.mask_empty) std::fprintf(stderr, "warning: overlay mask is empty; writing plain mid-slices\n");
  std::vector<std::filesystem::path> written;
  for (auto p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    std::filesystem::path out = prefix;
    out += std::string("_") + plane_name(p) + ".png";
    write_png(set.images[static_cast<std::size_t>(p)], out);
    written.push_back(out);
  }
  return written;
}

}  // namespace volseg
