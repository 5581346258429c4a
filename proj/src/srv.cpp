#include <bit>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "volseg/error.hpp"
#include "volseg/io_util.hpp"
#include "volseg/volume.hpp"

namespace volseg {

std::string dims_str(const Dims& d) {
  std::ostringstream os;
  os << d[0] << 'x' << d[1] << 'x' << d[2];
  return os.str();
}

Volume Volume::zeros(const Dims& dims, const Spacing& spacing) {
  return Volume{dims, spacing, std::vector<float>(voxel_count(dims), 0.0f)};
}

void Volume::validate() const {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw FormatError("volume dims must be positive");
  if (data.size() != voxel_count(dims)) throw FormatError("volume data length does not match dims " + dims_str(dims));
  for (double s : spacing)
    if (!(s > 0.0)) throw FormatError("volume spacing must be positive");
}

Mask Mask::zeros(const Dims& dims, const Spacing& spacing) {
  return Mask{dims, spacing, std::vector<std::uint8_t>(voxel_count(dims), 0)};
}

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v;
  return n;
}

void Mask::validate() const {
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw FormatError("mask dims must be positive");
  if (data.size() != voxel_count(dims)) throw FormatError("mask data length does not match dims " + dims_str(dims));
  for (auto v : data)
    if (v > 1) throw FormatError("mask values must be 0 or 1");
}

namespace {

constexpr char kSrvMagic[4] = {'S', 'R', 'V', '1'};

std::string header(const Dims& dims, const Spacing& spacing, const char* dtype) {
  nlohmann::json j;
  j["dims"] = dims;
  j["spacing_mm"] = spacing;
  j["dtype"] = dtype;
  return std::string(kSrvMagic, 4) + j.dump() + "\n";
}

}  // namespace

std::string encode_srv(const Volume& v) {
  v.validate();
  std::string out = header(v.dims, v.spacing, "f32");
  out.reserve(out.size() + v.data.size() * 4);
  for (float f : v.data) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  return out;
}

std::string encode_srv(const Mask& m) {
  m.validate();
  std::string out = header(m.dims, m.spacing, "u8");
  out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size());
  return out;
}

void write_srv(const Volume& v, const std::filesystem::path& path) { write_file_atomic(path, encode_srv(v)); }
void write_srv(const Mask& m, const std::filesystem::path& path) { write_file_atomic(path, encode_srv(m)); }

SrvImage decode_srv(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kSrvMagic, 4) != 0) {
    throw FormatError(source + ": not an SRV file (bad magic)");
  }
  const auto newline = bytes.find('\n', 4);
  if (newline == std::string::npos) throw FormatError(source + ": SRV header line is not terminated");
  Dims dims{};
  Spacing spacing{};
  std::string dtype;
  try {
    const auto j = nlohmann::json::parse(bytes.substr(4, newline - 4));
    dims = j.at("dims").get<Dims>();
    spacing = j.at("spacing_mm").get<Spacing>();
    dtype = j.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed SRV header: " + e.what());
  }
  std::size_t elem = 0;
  if (dtype == "f32") {
    elem = 4;
  } else if (dtype == "u8") {
    elem = 1;
  } else {
    throw FormatError(source + ": unsupported SRV dtype '" + dtype + "'");
  }
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw FormatError(source + ": SRV dims must be positive");
  const std::size_t expected = voxel_count(dims) * elem;
  const std::size_t actual = bytes.size() - newline - 1;
  if (actual != expected) {
    throw FormatError(source + ": SRV payload length mismatch: expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(actual));
  }
  const char* payload = bytes.data() + newline + 1;
  if (elem == 4) {
    Volume v{dims, spacing, std::vector<float>(voxel_count(dims))};
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
      }
      v.data[i] = std::bit_cast<float>(bits);
    }
    try {
      v.validate();
    } catch (const FormatError& e) {
      throw FormatError(source + ": " + e.what());
    }
    return v;
  }
  Mask m{dims, spacing, std::vector<std::uint8_t>(payload, payload + voxel_count(dims))};
  try {
    m.validate();
  } catch (const FormatError& e) {
    throw FormatError(source + ": " + e.what());
  }
  return m;
}

SrvImage read_srv(const std::filesystem::path& path) { return decode_srv(read_file(path), path.string()); }

namespace {
bool is_nifti(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz");
}
}  // namespace

Volume read_volume(const std::filesystem::path& path) {
  if (is_nifti(path)) return read_nifti(path);
  auto image = read_srv(path);
  if (auto* v = std::get_if<Volume>(&image)) return std::move(*v);
  // Masks are valid intensity inputs too (e.g. for overlays).
  const auto& m = std::get<Mask>(image);
  Volume v{m.dims, m.spacing, std::vector<float>(m.data.begin(), m.data.end())};
  return v;
}

Mask read_mask(const std::filesystem::path& path) {
  if (is_nifti(path)) {
    const Volume v = read_nifti(path);
    Mask m = Mask::zeros(v.dims, v.spacing);
    for (std::size_t i = 0; i < v.data.size(); ++i) m.data[i] = v.data[i] > 0.0f ? 1 : 0;
    return m;
  }
  auto image = read_srv(path);
  if (auto* m = std::get_if<Mask>(&image)) return std::move(*m);
  throw FormatError(path.string() + ": expected a u8 mask, found an f32 volume");
}

}  // namespace volseg
