#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace volseg {

using Dims = std::array<std::size_t, 3>;        // X, Y, Z
using Spacing = std::array<double, 3>;          // mm per voxel

std::string dims_str(const Dims& d);

inline std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

// Voxel (x, y, z) lives at x + X * (y + Y * z). As a tensor the same buffer
// is 1 x 1 x Z x Y x X.
struct Volume {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  static Volume zeros(const Dims& dims, const Spacing& spacing = {1.0, 1.0, 1.0});

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

  void validate() const;
};

// Binary label grid, one byte per voxel, values 0 or 1.
struct Mask {
  Dims dims{0, 0, 0};
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  static Mask zeros(const Dims& dims, const Spacing& spacing = {1.0, 1.0, 1.0});

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

  std::size_t count() const;
  void validate() const;
};

struct AxisRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // inclusive
  std::size_t extent() const { return hi - lo + 1; }
  bool operator==(const AxisRange&) const = default;
};

struct BoundingBox {
  std::array<AxisRange, 3> axes;
  bool operator==(const BoundingBox&) const = default;
};

// --- SRV: "SRV1", JSON header line, '\n', little-endian payload ---------

void write_srv(const Volume& v, const std::filesystem::path& path);
void write_srv(const Mask& m, const std::filesystem::path& path);

using SrvImage = std::variant<Volume, Mask>;
SrvImage read_srv(const std::filesystem::path& path);

// Serialized bytes, as written by write_srv.
std::string encode_srv(const Volume& v);
std::string encode_srv(const Mask& m);
SrvImage decode_srv(const std::string& bytes, const std::string& source = "<memory>");

// --- NIfTI-1 (single file, optionally gzip-compressed) -----------------

Volume read_nifti(const std::filesystem::path& path);
Volume decode_nifti(const std::string& bytes, const std::string& source = "<memory>");

// Dispatch on extension: .nii / .nii.gz via NIfTI, anything else as SRV.
Volume read_volume(const std::filesystem::path& path);
// Reads an SRV u8 image, or binarizes a NIfTI image at > 0.
Mask read_mask(const std::filesystem::path& path);

// --- preprocessing --------------------------------------------------------

// Voxelwise OR of the left and right masks.
Mask fuse_masks(const Mask& left, const Mask& right);

// Tightest inclusive per-axis ranges around the set voxels.
BoundingBox bounding_box(const Mask& m);

struct CropResult {
  Volume volume;
  Mask mask;
  BoundingBox window;
};

inline constexpr std::size_t kDefaultCropMargin = 4;

// Extracts a `target`-sized window centered on the mask bounding box and
// clamped to the volume. Requires bbox extent + 2 * margin <= target per axis.
CropResult crop_centered(const Volume& v, const Mask& m, const Dims& target,
                         std::size_t margin = kDefaultCropMargin);

Volume zscore_normalize(const Volume& v);

// fuse_masks -> crop_centered -> zscore_normalize on the cropped volume.
CropResult preprocess_case(const Volume& v, const Mask& left, const Mask& right, const Dims& target,
                           std::size_t margin = kDefaultCropMargin);

// 1 where value >= threshold.
Mask binarize(const Volume& prob, double threshold);

}  // namespace volseg
