#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <filesystem>
#include <fstream>

#include "volseg/error.hpp"
#include "volseg/config.hpp"

using namespace volseg;
namespace fs = std::filesystem;

TEST_CASE("defaults validate and round trip") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.network == UNetConfig::preset("desk"));
  CHECK(c.target == Dims{128, 128, 64});
  const auto back = RunConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("fields are applied") {
  const auto c = RunConfig::from_json(nlohmann::json::parse(R"({
    "preset": "paper", "epochs": 3, "loss": "dice", "lr": 0.001, "precision": "f64",
    "target": [32, 32, 32], "margin": 0, "seed": 9, "shuffle": true, "skips": false
  })"));
  CHECK(c.network.channel_schedule.front() == 10);
  CHECK_FALSE(c.network.skips);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.loss == LossKind::soft_dice);
  CHECK(c.train.adam.lr == 0.001);
  CHECK(c.precision == Precision::f64);
  CHECK(c.target == Dims{32, 32, 32});
  CHECK(c.train.shuffle);

  const auto s = RunConfig::from_json(nlohmann::json::parse(R"({"schedule": [4, 8]})"));
  CHECK(s.network.levels == 2);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"epoch": 3})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"epochs": 0})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"loss": "l2"})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"epochs": "ten"})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"schedule": [8, 4]})")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"([1, 2])")), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"precision": "f16"})")), ConfigError);
}

TEST_CASE("load from file") {
  const fs::path p = fs::temp_directory_path() / "volseg_cfg_test.json";
  std::ofstream(p) << R"({"epochs": 2, "threshold": 0.4})";
  const auto c = RunConfig::load(p);
  CHECK(c.train.epochs == 2);
  CHECK(c.train.threshold == 0.4);
  std::ofstream(p) << "epochs = 2";
  CHECK_THROWS_AS(RunConfig::load(p), ConfigError);
  fs::remove(p);
  CHECK_THROWS_AS(RunConfig::load(p), IoError);
}

TEST_CASE("loss names") {
  CHECK(parse_loss_kind("bce_with_logits") == LossKind::bce_with_logits);
  CHECK(parse_loss_kind("bce") == LossKind::bce_with_logits);
  CHECK(parse_loss_kind("soft_dice") == LossKind::soft_dice);
  CHECK(std::string(loss_kind_name(LossKind::soft_dice)) == "soft_dice");
  CHECK_THROWS_AS(parse_loss_kind("mse"), ConfigError);
}
