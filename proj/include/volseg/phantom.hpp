#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "volseg/volume.hpp"

namespace volseg {

// Two axis-aligned ellipsoids ("left" and "right"), side by side along x,
// in a noisy cube. Defaults train a desk-sized U-Net in minutes.
struct PhantomSpec {
  std::size_t size = 32;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  double foreground_mean = 1.0;
  double background_mean = 0.0;
  double noise_std = 0.1;
  double semi_axis_min = 4.0;  // each of (a, b, c) drawn uniformly in [min, max]
  double semi_axis_max = 7.0;
  std::size_t center_jitter = 2;
  std::size_t min_gap = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

struct PhantomSample {
  Volume volume;
  Mask left;
  Mask right;
};

// Voxel centers (x, y, z) with sum(((p - center) / semi_axes)^2) <= 1.
Mask rasterize_ellipsoid(const Dims& dims, const std::array<double, 3>& center,
                         const std::array<double, 3>& semi_axes);

// Sample `index` of the family; depends only on (spec.seed, index).
PhantomSample generate_phantom(const PhantomSpec& spec, std::size_t index);

std::vector<PhantomSample> generate_phantoms(const PhantomSpec& spec);

// Writes {i}_vol.srv, {i}_maskL.srv, {i}_maskR.srv and manifest.json.
void write_phantom_set(const PhantomSpec& spec, const std::vector<PhantomSample>& samples,
                       const std::filesystem::path& dir);

}  // namespace volseg
