#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

enum class Plane { axial, coronal, sagittal };

const char* plane_name(Plane p);

// 8-bit RGB, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::array<std::uint8_t, 3> pixel(std::size_t col, std::size_t row) const;
  // Pixels whose channels differ (grayscale pixels have R == G == B).
  std::size_t colored_pixel_count() const;
};

// Plane layouts (column, row):
//   axial    fixed z, (x, y)
//   coronal  fixed y, (x, z)
//   sagittal fixed x, (y, z)
struct OverlaySet {
  std::array<RgbImage, 3> images;       // indexed by Plane
  std::array<std::size_t, 3> slice{};   // fixed coordinate of each plane
  bool mask_empty = false;
};

// Grayscale intensity (min/max of each slice mapped to 0..255) with the
// in-plane mask boundary drawn in red. A boundary voxel is a mask voxel
// with at least one 4-neighbor outside the mask or outside the slice. The
// slices pass through the rounded mask centroid, or the volume center for
// an empty mask.
OverlaySet render_overlay(const Volume& volume, const Mask& mask);

void write_png(const RgbImage& image, const std::filesystem::path& path);

// Writes <prefix>_axial.png, <prefix>_coronal.png, <prefix>_sagittal.png.
std::vector<std::filesystem::path> export_overlay(const Volume& volume, const Mask& mask,
                                                  const std::filesystem::path& prefix);

}  // namespace volseg
