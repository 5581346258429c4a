#include "volseg/config.hpp"

#include <set>

#include "volseg/error.hpp"
#include "volseg/io_util.hpp"

namespace volseg {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "bce_with_logits" || name == "bce") return LossKind::bce_with_logits;
  if (name == "soft_dice" || name == "dice") return LossKind::soft_dice;
  throw ConfigError("unknown loss '" + name + "' (expected bce_with_logits or soft_dice)");
}

const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::soft_dice ? "soft_dice" : "bce_with_logits";
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  for (auto t : target)
    if (t == 0) throw ConfigError("config: target dims must be positive");
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["preset"] = preset;
  j["schedule"] = network.channel_schedule;
  j["skips"] = network.skips;
  j["alpha"] = network.alpha;
  j["init_seed"] = init_seed;
  j["epochs"] = train.epochs;
  j["batch_size"] = train.batch_size;
  j["loss"] = loss_kind_name(train.loss);
  j["threshold"] = train.threshold;
  j["seed"] = train.seed;
  j["shuffle"] = train.shuffle;
  j["lr"] = train.adam.lr;
  j["beta1"] = train.adam.beta1;
  j["beta2"] = train.adam.beta2;
  j["adam_epsilon"] = train.adam.epsilon;
  j["precision"] = precision == Precision::f64 ? "f64" : "f32";
  j["target"] = target;
  j["margin"] = margin;
  j["train_dir"] = train_dir.string();
  j["test_dir"] = test_dir.string();
  j["model_out"] = model_out.string();
  j["history_out"] = history_out.string();
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  static const std::set<std::string> known = {
      "preset", "schedule", "skips",     "alpha",  "init_seed", "epochs",   "batch_size", "loss",
      "threshold", "seed",  "shuffle",   "lr",     "beta1",     "beta2",    "adam_epsilon", "precision",
      "target", "margin",   "train_dir", "test_dir", "model_out", "history_out"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
  RunConfig cfg;
  try {
    if (j.contains("preset")) {
      cfg.preset = j["preset"].get<std::string>();
      cfg.network = UNetConfig::preset(cfg.preset);
    }
    if (j.contains("schedule")) {
      cfg.network.channel_schedule = j["schedule"].get<std::vector<std::size_t>>();
      cfg.network.levels = cfg.network.channel_schedule.size();
    }
    if (j.contains("skips")) cfg.network.skips = j["skips"].get<bool>();
    if (j.contains("alpha")) cfg.network.alpha = j["alpha"].get<double>();
    if (j.contains("init_seed")) cfg.init_seed = j["init_seed"].get<std::uint64_t>();
    if (j.contains("epochs")) cfg.train.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("batch_size")) cfg.train.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("loss")) cfg.train.loss = parse_loss_kind(j["loss"].get<std::string>());
    if (j.contains("threshold")) cfg.train.threshold = j["threshold"].get<double>();
    if (j.contains("seed")) cfg.train.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("shuffle")) cfg.train.shuffle = j["shuffle"].get<bool>();
    if (j.contains("lr")) cfg.train.adam.lr = j["lr"].get<double>();
    if (j.contains("beta1")) cfg.train.adam.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.train.adam.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_epsilon")) cfg.train.adam.epsilon = j["adam_epsilon"].get<double>();
    if (j.contains("precision")) {
      const auto p = j["precision"].get<std::string>();
      if (p == "f32") {
        cfg.precision = Precision::f32;
      } else if (p == "f64") {
        cfg.precision = Precision::f64;
      } else {
        throw ConfigError("config: precision must be f32 or f64");
      }
    }
    if (j.contains("target")) cfg.target = j["target"].get<Dims>();
    if (j.contains("margin")) cfg.margin = j["margin"].get<std::size_t>();
    if (j.contains("train_dir")) cfg.train_dir = j["train_dir"].get<std::string>();
    if (j.contains("test_dir")) cfg.test_dir = j["test_dir"].get<std::string>();
    if (j.contains("model_out")) cfg.model_out = j["model_out"].get<std::string>();
    if (j.contains("history_out")) cfg.history_out = j["history_out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace volseg
