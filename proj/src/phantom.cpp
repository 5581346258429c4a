#include "volseg/phantom.hpp"

#include <cmath>

#include "volseg/error.hpp"
#include "volseg/io_util.hpp"
#include "volseg/rng.hpp"

namespace volseg {

namespace {

// Voxel half-width of an ellipsoid along an axis.
std::int64_t half_width(double semi_axis) { return static_cast<std::int64_t>(std::floor(semi_axis)); }

}  // namespace

void PhantomSpec::validate() const {
  if (count == 0) throw ConfigError("phantom: count must be positive");
  if (!(semi_axis_min >= 2.0)) throw ConfigError("phantom: semi-axes must be at least 2 voxels");
  if (!(semi_axis_max >= semi_axis_min)) throw ConfigError("phantom: semi_axis_max < semi_axis_min");
  if (!(noise_std >= 0.0)) throw ConfigError("phantom: noise_std must be non-negative");
  if (!(2.0 * semi_axis_max + static_cast<double>(min_gap) < static_cast<double>(size))) {
    throw ConfigError("phantom: 2 * semi_axis_max + min_gap must be below size");
  }
  // Both ellipsoids side by side along x at their largest.
  const std::int64_t width = 2 * half_width(semi_axis_max) + 1;
  if (2 * width + static_cast<std::int64_t>(min_gap) > static_cast<std::int64_t>(size)) {
    throw ConfigError("phantom: two ellipsoids of semi-axis " + std::to_string(semi_axis_max) + " with gap " +
                      std::to_string(min_gap) + " do not fit in a cube of " + std::to_string(size));
  }
}

nlohmann::json PhantomSpec::to_json() const {
  return {{"size", size},
          {"count", count},
          {"seed", seed},
          {"foreground_mean", foreground_mean},
          {"background_mean", background_mean},
          {"noise_std", noise_std},
          {"semi_axis_min", semi_axis_min},
          {"semi_axis_max", semi_axis_max},
          {"center_jitter", center_jitter},
          {"min_gap", min_gap}};
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    s.size = j.at("size").get<std::size_t>();
    s.count = j.at("count").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.foreground_mean = j.at("foreground_mean").get<double>();
    s.background_mean = j.at("background_mean").get<double>();
    s.noise_std = j.at("noise_std").get<double>();
    s.semi_axis_min = j.at("semi_axis_min").get<double>();
    s.semi_axis_max = j.at("semi_axis_max").get<double>();
    s.center_jitter = j.at("center_jitter").get<std::size_t>();
    s.min_gap = j.at("min_gap").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

Mask rasterize_ellipsoid(const Dims& dims, const std::array<double, 3>& center,
                         const std::array<double, 3>& semi_axes) {
  Mask m = Mask::zeros(dims);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const double dx = (static_cast<double>(x) - center[0]) / semi_axes[0];
        const double dy = (static_cast<double>(y) - center[1]) / semi_axes[1];
        const double dz = (static_cast<double>(z) - center[2]) / semi_axes[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) m.at(x, y, z) = 1;
      }
  return m;
}

PhantomSample generate_phantom(const PhantomSpec& spec, std::size_t index) {
  spec.validate();
  SplitMix64 rng(derive_seed(spec.seed, index));
  const auto size = static_cast<std::int64_t>(spec.size);
  const auto jitter = static_cast<std::int64_t>(spec.center_jitter);
  const auto gap = static_cast<std::int64_t>(spec.min_gap);

  std::array<std::array<double, 3>, 2> axes{};
  for (auto& a : axes)
    for (auto& v : a) v = rng.uniform(spec.semi_axis_min, spec.semi_axis_max);

  // Nominal layout: the pair centered in x with exactly `gap` empty voxels
  // between them; each center is then jittered within what keeps the pair
  // inside the cube and separated.
  const std::int64_t hl = half_width(axes[0][0]);
  const std::int64_t hr = half_width(axes[1][0]);
  const std::int64_t total = (2 * hl + 1) + gap + (2 * hr + 1);
  const std::int64_t start = (size - total) / 2;
  std::int64_t cl = start + hl;
  std::int64_t cr = start + 2 * hl + 1 + gap + hr;

  const std::int64_t dl = rng.uniform_int(-jitter, jitter);
  cl = std::clamp(cl + dl, hl, cr - hr - gap - hl - 1);
  const std::int64_t dr = rng.uniform_int(-jitter, jitter);
  cr = std::clamp(cr + dr, cl + hl + gap + hr + 1, size - 1 - hr);

  std::array<std::array<double, 3>, 2> centers{};
  centers[0][0] = static_cast<double>(cl);
  centers[1][0] = static_cast<double>(cr);
  // y and z are jittered around the true cube center (size - 1) / 2.
  const double mid = static_cast<double>(size - 1) / 2.0;
  for (int e = 0; e < 2; ++e) {
    for (int axis = 1; axis < 3; ++axis) {
      const double h = static_cast<double>(half_width(axes[e][axis]));
      const double c = mid + static_cast<double>(rng.uniform_int(-jitter, jitter));
      centers[e][axis] = std::clamp(c, h, static_cast<double>(size - 1) - h);
    }
  }

  const Dims dims{spec.size, spec.size, spec.size};
  PhantomSample s;
  s.left = rasterize_ellipsoid(dims, centers[0], axes[0]);
  s.right = rasterize_ellipsoid(dims, centers[1], axes[1]);
  s.volume = Volume::zeros(dims);
  for (std::size_t i = 0; i < s.volume.data.size(); ++i) {
    const bool inside = s.left.data[i] || s.right.data[i];
    const double mean = inside ? spec.foreground_mean : spec.background_mean;
    const double noise = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
    s.volume.data[i] = static_cast<float>(mean + noise);
  }
  return s;
}

std::vector<PhantomSample> generate_phantoms(const PhantomSpec& spec) {
  spec.validate();
  std::vector<PhantomSample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_phantom(spec, i));
  return out;
}

void write_phantom_set(const PhantomSpec& spec, const std::vector<PhantomSample>& samples,
                       const std::filesystem::path& dir) {
  nlohmann::json manifest;
  manifest["spec"] = spec.to_json();
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string id = std::to_string(i);
    write_srv(samples[i].volume, dir / (id + "_vol.srv"));
    write_srv(samples[i].left, dir / (id + "_maskL.srv"));
    write_srv(samples[i].right, dir / (id + "_maskR.srv"));
    files.push_back({{"id", id},
                     {"volume", id + "_vol.srv"},
                     {"mask_left", id + "_maskL.srv"},
                     {"mask_right", id + "_maskR.srv"},
                     {"left_voxels", samples[i].left.count()},
                     {"right_voxels", samples[i].right.count()}});
  }
  manifest["samples"] = std::move(files);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace volseg
