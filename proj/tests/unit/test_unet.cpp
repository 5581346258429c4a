#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "volseg/gradcheck.hpp"
#include "volseg/io_util.hpp"
#include "volseg/unet.hpp"

using namespace volseg;
namespace fs = std::filesystem;

namespace {

// Independent walk over the layer list: (path, shape) in build order.
std::vector<std::pair<std::string, Shape>> expected_layout(const UNetConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  const auto& s = c.channel_schedule;
  std::size_t prev = c.in_channels;
  for (std::size_t i = 0; i < c.levels; ++i) {
    const std::string p = "enc." + std::to_string(i);
    out.push_back({p + ".conv.weight", {s[i], prev, 3, 3, 3}});
    out.push_back({p + ".conv.bias", {s[i]}});
    out.push_back({p + ".norm.gamma", {s[i]}});
    out.push_back({p + ".norm.beta", {s[i]}});
    prev = s[i];
  }
  for (std::size_t i = c.levels - 1; i-- > 0;) {
    const std::string p = "dec." + std::to_string(i);
    out.push_back({p + ".up.weight", {s[i], s[i + 1], 2, 2, 2}});
    out.push_back({p + ".up.bias", {s[i]}});
    out.push_back({p + ".conv.weight", {s[i], c.skips ? 2 * s[i] : s[i], 3, 3, 3}});
    out.push_back({p + ".conv.bias", {s[i]}});
    out.push_back({p + ".norm.gamma", {s[i]}});
    out.push_back({p + ".norm.beta", {s[i]}});
  }
  out.push_back({"head.weight", {c.out_channels, s[0], 1, 1, 1}});
  out.push_back({"head.bias", {c.out_channels}});
  return out;
}

std::size_t walk_count(const UNetConfig& c) {
  std::size_t n = 0;
  for (const auto& [path, shape] : expected_layout(c)) n += shape_numel(shape);
  return n;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("volseg_unet_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_bytes(const fs::path& p, const std::string& b) {
  std::ofstream(p, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("presets") {
  const auto paper = UNetConfig::preset("paper");
  CHECK(paper.channel_schedule == std::vector<std::size_t>{10, 32, 64, 128, 256, 512});
  CHECK(paper.levels == 6);
  const auto desk = UNetConfig::preset("desk");
  CHECK(desk.channel_schedule == std::vector<std::size_t>{8, 16, 32});
  CHECK(desk.divisor() == 4);
  CHECK_THROWS_AS(UNetConfig::preset("huge"), ConfigError);
}

TEST_CASE("config validation") {
  UNetConfig c;
  c.channel_schedule = {8, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // length != levels
  c.channel_schedule = {8, 8, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // not strictly increasing
  c.channel_schedule = {4, 8, 16};
  c.levels = 3;
  CHECK_NOTHROW(c.validate());
  CHECK(UNetConfig::from_json(c.to_json()) == c);
}

TEST_CASE("build is deterministic per seed") {
  const auto a = build_unet(UNetConfig::preset("desk"), 42);
  const auto b = build_unet(UNetConfig::preset("desk"), 42);
  const auto c = build_unet(UNetConfig::preset("desk"), 43);
  const auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(std::memcmp(pa[i].second.data().data(), pb[i].second.data().data(), pa[i].second.numel() * 4) == 0);
    any_diff = any_diff || std::memcmp(pa[i].second.data().data(), pc[i].second.data().data(),
                                       pa[i].second.numel() * 4) != 0;
  }
  CHECK(any_diff);
}

TEST_CASE("parameter layout follows the shape walk") {
  for (const char* name : {"desk", "paper"}) {
    const auto cfg = UNetConfig::preset(name);
    const auto model = build_unet(cfg, 1);
    const auto layout = expected_layout(cfg);
    const auto params = model.named_parameters();
    REQUIRE(params.size() == layout.size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
      CHECK(params[i].first == layout[i].first);
      CHECK(params[i].second.shape() == layout[i].second);
    }
    CHECK(param_count(cfg) == walk_count(cfg));
    CHECK(model.parameter_count() == param_count(cfg));
  }
  CHECK(param_count(UNetConfig::preset("paper")) > param_count(UNetConfig::preset("desk")));
}

TEST_CASE("paper preset bottleneck and head") {
  const auto model = build_unet(UNetConfig::preset("paper"), 0);
  for (const auto& [name, t] : model.named_parameters()) {
    if (name == "enc.5.conv.weight") CHECK(t.extent(0) == 512);
    if (name == "enc.0.conv.weight") CHECK(t.extent(0) == 10);
    if (name == "head.weight") CHECK(t.shape() == Shape{1, 10, 1, 1, 1});
  }
}

TEST_CASE("param_count by hand for levels=2, schedule [1,1]") {
  UNetConfig c;
  c.levels = 2;
  c.channel_schedule = {1, 1};
  // enc: 2 x (27 + 1 + 2); dec: up 8 + 1, conv 27*2 + 1, norm 2; head 1 + 1
  CHECK(param_count(c) == 2 * 30 + 9 + 55 + 2 + 2);
  c.skips = false;
  CHECK(param_count(c) == 2 * 30 + 9 + 28 + 2 + 2);
}

TEST_CASE("forward preserves shape") {
  const auto model = build_unet(UNetConfig::preset("desk"), 3);
  const auto x = randn<float>({1, 1, 32, 32, 32}, 4, 1.0f);
  const auto y = model.infer(x);
  CHECK(y.shape() == x.shape());
  CHECK_NOTHROW(require_finite<float>(y.data(), "logits"));
  const auto y2 = model.infer(x);
  CHECK(std::equal(y.data().begin(), y.data().end(), y2.data().begin()));

  auto train_model = build_unet(UNetConfig::preset("desk"), 3);
  CHECK(train_model.forward(randn<float>({1, 1, 8, 12, 16}, 5, 1.0f)).shape() == Shape{1, 1, 8, 12, 16});
}

TEST_CASE("forward names the axis that breaks divisibility") {
  const auto model = build_unet(UNetConfig::preset("desk"), 3);
  try {
    model.infer(Tensor<float>(Shape{1, 1, 8, 10, 8}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("H") != std::string::npos);
  }
  CHECK_THROWS_AS(model.infer(Tensor<float>(Shape{1, 2, 8, 8, 8})), ShapeError);
}

TEST_CASE("zero weights give the head bias everywhere") {
  auto model = build_unet(UNetConfig::preset("desk"), 3);
  for (auto& [name, t] : model.named_parameters()) {
    auto d = t.data();
    std::fill(d.begin(), d.end(), 0.0f);
    if (name == "head.bias") d[0] = 0.625f;
  }
  const auto y = model.infer(randn<float>({1, 1, 8, 8, 8}, 1, 1.0f));
  for (float v : y.data()) CHECK(v == 0.625f);
}

TEST_CASE("tiny model passes grad_check") {
  UNetConfig c;
  c.levels = 2;
  c.channel_schedule = {2, 4};
  auto model = std::make_shared<UNet<double>>(c, 9);
  std::vector<Tensor<double>> inputs{randn<double>({1, 1, 4, 4, 4}, 10, 1.0)};
  for (auto& [name, t] : model->named_parameters()) inputs.push_back(t);
  const double err = grad_check([model](const auto& in) { return model->forward(in[0]); }, inputs);
  CHECK(err < 1e-3);
}

TEST_CASE("model file round trip") {
  TempDir tmp;
  auto model = build_unet(UNetConfig::preset("desk"), 5);
  // Non-trivial buffers.
  model.forward(randn<float>({1, 1, 8, 8, 8}, 6, 1.0f));
  const fs::path path = tmp.path / "m.vseg";
  save_model(model, path);
  const auto back = load_model(path);
  CHECK(back.config() == model.config());
  const auto pa = model.named_parameters(), pb = back.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(std::memcmp(pa[i].second.data().data(), pb[i].second.data().data(), pa[i].second.numel() * 4) == 0);
  }
  const auto ba = model.named_buffers();
  const auto bb = back.named_buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);

  // Saving the loaded model reproduces the file.
  save_model(back, tmp.path / "m2.vseg");
  CHECK(read_file(path) == read_file(tmp.path / "m2.vseg"));
}

TEST_CASE("model file corruption is rejected") {
  TempDir tmp;
  const auto model = build_unet(UNetConfig::preset("desk"), 5);
  const fs::path path = tmp.path / "m.vseg";
  save_model(model, path);
  const std::string good = read_file(path);
  REQUIRE(good.substr(0, 4) == "VSEG");

  SUBCASE("magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("version") {
    std::string bad = good;
    bad[4] = 2;
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("truncated payload") {
    write_bytes(path, good.substr(0, good.size() - 10));
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("manifest shape edited") {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(good[8 + i])) << (8 * i);
    auto manifest = nlohmann::json::parse(good.substr(16, len));
    auto& shape = manifest["tensors"][0]["shape"];
    shape[0] = shape[0].get<int>() + 1;
    const std::string text = manifest.dump(2);
    std::string bad = good.substr(0, 8);
    for (int i = 0; i < 8; ++i) bad.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
    bad += text + good.substr(16 + len);
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_model(tmp.path / "nope.vseg"), IoError); }
}
