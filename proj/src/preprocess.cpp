#include <cmath>
#include <limits>

#include "volseg/error.hpp"
#include "volseg/volume.hpp"

namespace volseg {

namespace {
constexpr const char* kAxisNames[3] = {"x", "y", "z"};
}

Mask fuse_masks(const Mask& left, const Mask& right) {
  if (left.dims != right.dims) {
    throw ShapeError("fuse_masks: dims differ (" + dims_str(left.dims) + " vs " + dims_str(right.dims) + ")");
  }
  Mask out = Mask::zeros(left.dims, left.spacing);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::min(1, left.data[i] + right.data[i]));
  }
  return out;
}

BoundingBox bounding_box(const Mask& m) {
  BoundingBox box;
  for (auto& a : box.axes) {
    a.lo = std::numeric_limits<std::size_t>::max();
    a.hi = 0;
  }
  bool any = false;
  for (std::size_t z = 0; z < m.dims[2]; ++z)
    for (std::size_t y = 0; y < m.dims[1]; ++y)
      for (std::size_t x = 0; x < m.dims[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        any = true;
        const std::size_t c[3] = {x, y, z};
        for (int i = 0; i < 3; ++i) {
          box.axes[i].lo = std::min(box.axes[i].lo, c[i]);
          box.axes[i].hi = std::max(box.axes[i].hi, c[i]);
        }
      }
  if (!any) throw ShapeError("bounding_box: mask is empty");
  return box;
}

CropResult crop_centered(const Volume& v, const Mask& m, const Dims& target, std::size_t margin) {
  if (v.dims != m.dims) {
    throw ShapeError("crop_centered: volume " + dims_str(v.dims) + " and mask " + dims_str(m.dims) + " differ");
  }
  for (int i = 0; i < 3; ++i) {
    if (target[i] == 0 || target[i] > v.dims[i]) {
      throw ShapeError(std::string("crop_centered: target extent ") + std::to_string(target[i]) + " on axis " +
                       kAxisNames[i] + " does not fit volume extent " + std::to_string(v.dims[i]));
    }
  }
  const BoundingBox box = bounding_box(m);
  CropResult result;
  for (int i = 0; i < 3; ++i) {
    const std::size_t required = box.axes[i].extent() + 2 * margin;
    if (required > target[i]) {
      throw ShapeError(std::string("crop_centered: axis ") + kAxisNames[i] + " needs at least " +
                       std::to_string(required) + " voxels (bbox extent " + std::to_string(box.axes[i].extent()) +
                       " + 2 x margin " + std::to_string(margin) + "), target is " + std::to_string(target[i]));
    }
    // Rounding the center up keeps the margin on both sides for even extents.
    const auto center = static_cast<std::int64_t>((box.axes[i].lo + box.axes[i].hi + 1) / 2);
    std::int64_t start = center - static_cast<std::int64_t>(target[i] / 2);
    start = std::clamp<std::int64_t>(start, 0, static_cast<std::int64_t>(v.dims[i] - target[i]));
    result.window.axes[i] = {static_cast<std::size_t>(start), static_cast<std::size_t>(start) + target[i] - 1};
  }

  result.volume = Volume::zeros(target, v.spacing);
  result.mask = Mask::zeros(target, m.spacing);
  const auto& w = result.window.axes;
  for (std::size_t z = 0; z < target[2]; ++z)
    for (std::size_t y = 0; y < target[1]; ++y) {
      const std::size_t src = v.index(w[0].lo, w[1].lo + y, w[2].lo + z);
      const std::size_t dst = result.volume.index(0, y, z);
      std::copy_n(v.data.begin() + src, target[0], result.volume.data.begin() + dst);
      std::copy_n(m.data.begin() + src, target[0], result.mask.data.begin() + dst);
    }
  return result;
}

Volume zscore_normalize(const Volume& v) {
  Volume out = v;
  if (v.data.empty()) return out;
  long double sum = 0.0L;
  for (float f : v.data) sum += f;
  const long double n = static_cast<long double>(v.data.size());
  const long double mu = sum / n;
  long double sq = 0.0L;
  for (float f : v.data) sq += (f - mu) * (f - mu);
  const long double sd = std::sqrt(sq / n);
  // Constant input: every deviation is zero, so any positive divisor gives zeros.
  const long double denom = sd > 1e-12L ? sd : 1.0L;
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = static_cast<float>((v.data[i] - mu) / denom);
  return out;
}

CropResult preprocess_case(const Volume& v, const Mask& left, const Mask& right, const Dims& target,
                           std::size_t margin) {
  CropResult r = crop_centered(v, fuse_masks(left, right), target, margin);
  r.volume = zscore_normalize(r.volume);
  return r;
}

Mask binarize(const Volume& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("binarize: threshold must lie in (0, 1)");
  Mask out = Mask::zeros(prob.dims, prob.spacing);
  for (std::size_t i = 0; i < prob.data.size(); ++i) {
    out.data[i] = static_cast<double>(prob.data[i]) >= threshold ? 1 : 0;
  }
  return out;
}

}  // namespace volseg
