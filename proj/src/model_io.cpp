#include <bit>
#include <cstring>

#include "volseg/io_util.hpp"
#include "volseg/unet.hpp"

namespace volseg {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'E', 'G'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

struct Entry {
  std::string path;
  Shape shape;
  std::string kind;
};

std::vector<Entry> layout(const UNet<float>& model) {
  std::vector<Entry> entries;
  for (const auto& [name, t] : model.named_parameters()) entries.push_back({name, t.shape(), "param"});
  for (const auto& [name, buf] : model.named_buffers()) entries.push_back({name, Shape{buf->size()}, "buffer"});
  return entries;
}

}  // namespace

void save_model(const UNet<float>& model, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["config"] = model.config().to_json();
  manifest["dtype"] = "f32le";
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  auto append = [&](const std::string& name, const Shape& shape, const char* kind, std::span<const float> values) {
    tensors.push_back({{"path", name},
                       {"shape", shape},
                       {"kind", kind},
                       {"offset", payload.size()},
                       {"bytes", values.size() * 4}});
    for (float v : values) put_f32(payload, v);
  };
  for (const auto& [name, t] : model.named_parameters()) append(name, t.shape(), "param", t.data());
  for (const auto& [name, buf] : model.named_buffers()) {
    append(name, Shape{buf->size()}, "buffer", std::span<const float>(*buf));
  }
  manifest["tensors"] = std::move(tensors);
  manifest["payload_bytes"] = payload.size();
  const std::string text = manifest.dump(2) + "\n";

  std::string bytes(kMagic, 4);
  put_u32(bytes, kModelFormatVersion);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += payload;
  write_file_atomic(path, bytes);
}

UNet<float> load_model(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a model file (bad magic)");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kModelFormatVersion) {
    throw FormatError(path.string() + ": unsupported model format version " + std::to_string(version) +
                      " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  const std::uint64_t manifest_len = get_le(bytes, 8, 8);
  if (manifest_len > bytes.size() - 16) throw FormatError(path.string() + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": manifest is not valid JSON: " + e.what());
  }

  UNetConfig cfg;
  std::vector<Entry> stored;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  std::uint64_t payload_bytes = 0;
  try {
    cfg = UNetConfig::from_json(manifest.at("config"));
    if (manifest.at("dtype").get<std::string>() != "f32le") throw FormatError(path.string() + ": unsupported dtype");
    payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
    for (const auto& t : manifest.at("tensors")) {
      stored.push_back({t.at("path").get<std::string>(), t.at("shape").get<Shape>(), t.at("kind").get<std::string>()});
      spans.emplace_back(t.at("offset").get<std::uint64_t>(), t.at("bytes").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid config in manifest: " + e.what());
  }

  UNet<float> model(cfg, 0);
  const auto expected = layout(model);
  if (stored.size() != expected.size()) {
    throw FormatError(path.string() + ": manifest lists " + std::to_string(stored.size()) +
                      " tensors, config implies " + std::to_string(expected.size()));
  }
  std::uint64_t cursor = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& s = stored[i];
    const auto& e = expected[i];
    if (s.path != e.path || s.kind != e.kind || s.shape != e.shape) {
      throw FormatError(path.string() + ": manifest entry " + s.path + " " + shape_str(s.shape) +
                        " is inconsistent with config (expected " + e.path + " " + shape_str(e.shape) + ")");
    }
    if (spans[i].first != cursor || spans[i].second != shape_numel(e.shape) * 4) {
      throw FormatError(path.string() + ": manifest byte range for " + s.path + " is inconsistent");
    }
    cursor += spans[i].second;
  }
  if (cursor != payload_bytes) throw FormatError(path.string() + ": manifest payload size is inconsistent");
  const std::uint64_t available = bytes.size() - 16 - manifest_len;
  if (available != payload_bytes) {
    throw FormatError(path.string() + ": payload is " + std::to_string(available) + " bytes, expected " +
                      std::to_string(payload_bytes) + (available < payload_bytes ? " (truncated)" : ""));
  }

  std::size_t pos = 16 + manifest_len;
  auto read_into = [&](std::span<float> dst) {
    for (auto& v : dst) {
      v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos, 4)));
      pos += 4;
    }
  };
  for (auto& [name, t] : model.named_parameters()) read_into(t.data());
  for (auto& [name, buf] : model.named_buffers()) read_into(std::span<float>(*buf));
  return model;
}

}  // namespace volseg
