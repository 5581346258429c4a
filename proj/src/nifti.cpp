#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include <zlib.h>

#include "volseg/error.hpp"
#include "volseg/io_util.hpp"
#include "volseg/volume.hpp"

namespace volseg {

namespace {

constexpr std::size_t kHeaderSize = 348;

enum NiftiType : int { kUint8 = 2, kInt16 = 4, kFloat32 = 16 };

std::string gunzip(const std::string& bytes, const std::string& source) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError(source + ": cannot initialize gzip decoder");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buffer[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buffer);
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError(source + ": corrupt gzip stream");
    }
    out.append(buffer, sizeof(buffer) - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError(source + ": truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

class Reader {
 public:
  Reader(const std::string& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename U>
  U get(std::size_t offset) const {
    std::array<unsigned char, sizeof(U)> raw{};
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(U));
    if (swap_) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<U>(raw);
  }

 private:
  const std::string& bytes_;
  bool swap_;
};

}  // namespace

Volume decode_nifti(const std::string& raw, const std::string& source) {
  const bool gz = raw.size() >= 2 && static_cast<unsigned char>(raw[0]) == 0x1f &&
                  static_cast<unsigned char>(raw[1]) == 0x8b;
  const std::string bytes = gz ? gunzip(raw, source) : raw;
  if (bytes.size() < kHeaderSize) throw FormatError(source + ": file shorter than a NIfTI-1 header");

  bool swap = false;
  if (Reader(bytes, false).get<std::int32_t>(0) != 348) {
    if (Reader(bytes, true).get<std::int32_t>(0) != 348) {
      throw FormatError(source + ": sizeof_hdr is not 348; not a NIfTI-1 file");
    }
    swap = true;
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    throw FormatError(source + ": wrong magic (expected single-file \"n+1\")");
  }
  const Reader r(bytes, swap);
  const int rank = r.get<std::int16_t>(40);
  if (rank < 3 || rank > 7) throw FormatError(source + ": unsupported dimensionality " + std::to_string(rank));
  Dims dims{};
  for (int i = 0; i < 3; ++i) {
    const int d = r.get<std::int16_t>(42 + 2 * i);
    if (d <= 0) throw FormatError(source + ": non-positive extent in dim[" + std::to_string(i + 1) + "]");
    dims[i] = static_cast<std::size_t>(d);
  }
  for (int i = 4; i <= rank; ++i) {
    if (r.get<std::int16_t>(40 + 2 * i) > 1) {
      throw FormatError(source + ": unsupported dimensionality " + std::to_string(rank) +
                        " (only 3-D volumes are read)");
    }
  }
  const int datatype = r.get<std::int16_t>(70);
  std::size_t elem = 0;
  switch (datatype) {
    case kUint8: elem = 1; break;
    case kInt16: elem = 2; break;
    case kFloat32: elem = 4; break;
    default: throw FormatError(source + ": unsupported datatype code " + std::to_string(datatype));
  }
  Spacing spacing{};
  for (int i = 0; i < 3; ++i) {
    const double p = std::fabs(r.get<float>(80 + 4 * i));
    spacing[i] = (p > 0.0 && std::isfinite(p)) ? p : 1.0;
  }
  const float vox_offset = r.get<float>(108);
  if (!(vox_offset >= static_cast<float>(kHeaderSize))) {
    throw FormatError(source + ": vox_offset " + std::to_string(vox_offset) + " points inside the header");
  }
  const float slope = r.get<float>(112);
  const float inter = r.get<float>(116);

  const auto offset = static_cast<std::size_t>(vox_offset);
  const std::size_t n = voxel_count(dims);
  if (bytes.size() < offset || bytes.size() - offset < n * elem) {
    throw FormatError(source + ": payload truncated: expected " + std::to_string(n * elem) + " bytes at offset " +
                      std::to_string(offset));
  }
  Volume v{dims, spacing, std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = offset + i * elem;
    float value = 0.0f;
    switch (datatype) {
      case kUint8: value = static_cast<unsigned char>(bytes[at]); break;
      case kInt16: value = r.get<std::int16_t>(at); break;
      default: value = r.get<float>(at); break;
    }
    if (slope != 0.0f && std::isfinite(slope)) value = value * slope + inter;
    v.data[i] = value;
  }
  return v;
}

Volume read_nifti(const std::filesystem::path& path) { return decode_nifti(read_file(path), path.string()); }

}  // namespace volseg
