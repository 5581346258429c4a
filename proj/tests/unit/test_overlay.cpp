#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <filesystem>

#include <png.h>

#include "volseg/error.hpp"
#include "volseg/overlay.hpp"

using namespace volseg;
namespace fs = std::filesystem;

namespace {

bool is_red(const std::array<std::uint8_t, 3>& p) { return p[0] == 255 && p[1] == 0 && p[2] == 0; }

Volume ramp(const Dims& d) {
  Volume v = Volume::zeros(d);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i % 7);
  return v;
}

}  // namespace

TEST_CASE("empty mask renders mid-slices without color") {
  const Dims d{6, 5, 4};
  const auto set = render_overlay(ramp(d), Mask::zeros(d));
  CHECK(set.mask_empty);
  CHECK(set.slice[0] == 2);  // axial: z = Z / 2
  CHECK(set.slice[1] == 2);  // coronal: y = Y / 2
  CHECK(set.slice[2] == 3);  // sagittal: x = X / 2
  for (const auto& img : set.images) CHECK(img.colored_pixel_count() == 0);
  CHECK(set.images[0].width == 6);
  CHECK(set.images[0].height == 5);
  CHECK(set.images[1].width == 6);
  CHECK(set.images[1].height == 4);
  CHECK(set.images[2].width == 5);
  CHECK(set.images[2].height == 4);
}

TEST_CASE("full-plane mask colors only the outer ring") {
  const Dims d{6, 5, 4};
  Mask m = Mask::zeros(d);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 6; ++x) m.at(x, y, 2) = 1;
  const auto set = render_overlay(ramp(d), m);
  const auto& axial = set.images[static_cast<int>(Plane::axial)];
  REQUIRE(set.slice[0] == 2);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      const bool ring = r == 0 || c == 0 || r == 4 || c == 5;
      CHECK(is_red(axial.pixel(c, r)) == ring);
    }
  CHECK(axial.colored_pixel_count() == 2 * 6 + 2 * 3);
}

TEST_CASE("single voxel maps to one pixel per plane") {
  const Dims d{7, 6, 5};
  Mask m = Mask::zeros(d);
  const std::size_t x = 4, y = 1, z = 3;
  m.at(x, y, z) = 1;
  const auto set = render_overlay(ramp(d), m);
  CHECK(set.slice[0] == z);
  CHECK(set.slice[1] == y);
  CHECK(set.slice[2] == x);
  for (const auto& img : set.images) CHECK(img.colored_pixel_count() == 1);
  CHECK(is_red(set.images[0].pixel(x, y)));
  CHECK(is_red(set.images[1].pixel(x, z)));
  CHECK(is_red(set.images[2].pixel(y, z)));
}

TEST_CASE("gray levels span the slice range") {
  const Dims d{4, 4, 1};
  Volume v = Volume::zeros(d);
  for (std::size_t i = 0; i < 16; ++i) v.data[i] = static_cast<float>(i) - 3.0f;
  const auto set = render_overlay(v, Mask::zeros(d));
  CHECK(set.images[0].pixel(0, 0) == std::array<std::uint8_t, 3>{0, 0, 0});
  CHECK(set.images[0].pixel(3, 3) == std::array<std::uint8_t, 3>{255, 255, 255});
}

TEST_CASE("dims mismatch") {
  CHECK_THROWS_AS(render_overlay(Volume::zeros({2, 2, 2}), Mask::zeros({2, 2, 3})), ShapeError);
}

TEST_CASE("export writes three decodable PNGs") {
  const fs::path dir = fs::temp_directory_path() / "volseg_overlay_test";
  fs::remove_all(dir);
  const Dims d{8, 6, 4};
  Mask m = Mask::zeros(d);
  m.at(3, 3, 2) = 1;
  const auto files = export_overlay(ramp(d), m, dir / "case");
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "case_axial.png");
  CHECK(files[1].filename() == "case_coronal.png");
  CHECK(files[2].filename() == "case_sagittal.png");

  const auto set = render_overlay(ramp(d), m);
  for (int i = 0; i < 3; ++i) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    REQUIRE(png_image_begin_read_from_file(&img, files[i].c_str()) != 0);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    REQUIRE(png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) != 0);
    CHECK(img.width == set.images[i].width);
    CHECK(img.height == set.images[i].height);
    CHECK(buf == set.images[i].pixels);
  }
  fs::remove_all(dir);
}
