#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "volseg/training.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class Precision { f32, f64 };

// Everything a pipeline run needs, loadable from a JSON file. Unknown keys
// are rejected so that typos cannot silently fall back to defaults.
struct RunConfig {
  std::string preset = "desk";
  UNetConfig network = UNetConfig::preset("desk");
  TrainConfig train;
  Precision precision = Precision::f32;
  std::uint64_t init_seed = 0;
  Dims target{128, 128, 64};
  std::size_t margin = kDefaultCropMargin;
  std::filesystem::path train_dir;
  std::filesystem::path test_dir;
  std::filesystem::path model_out = "model.vseg";
  std::filesystem::path history_out = "history.jsonl";

  void validate() const;
  nlohmann::ordered_json to_json() const;

  // Applies the keys present in `j` on top of the defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

LossKind parse_loss_kind(const std::string& name);
const char* loss_kind_name(LossKind kind);

}  // namespace volseg
