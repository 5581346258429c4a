// vseg: phantom -> preprocess -> train -> predict -> evaluate, plus gradcheck
// and overlay export.
//
// Exit codes: 0 success, 2 usage or config error, 3 input/format error,
// 4 numeric failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "volseg/config.hpp"
#include "volseg/error.hpp"
#include "volseg/gradcheck.hpp"
#include "volseg/io_util.hpp"
#include "volseg/metrics.hpp"
#include "volseg/overlay.hpp"
#include "volseg/phantom.hpp"
#include "volseg/training.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace fs = std::filesystem;
using namespace volseg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumeric = 4;

class PhaseTimer {
 public:
  explicit PhaseTimer(std::string name) : name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    std::fprintf(stderr, "[time] %s: %.2f s\n", name_.c_str(), dt.count());
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

// Artifacts are staged in memory and only written once a command has
// finished its work, so a failing command leaves nothing behind.
struct Outputs {
  std::vector<std::pair<fs::path, std::string>> files;
  std::vector<std::tuple<Volume, Mask, fs::path>> overlays;

  void add(fs::path p, std::string bytes) { files.emplace_back(std::move(p), std::move(bytes)); }
  void commit() const {
    for (const auto& [path, bytes] : files) write_file_atomic(path, bytes);
    for (const auto& [v, m, prefix] : overlays) {
      export_overlay(v, m, prefix);
      if (m.count() == 0) std::cerr << "warning: empty mask, overlay " << prefix.string() << " has no contour\n";
    }
  }
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Ids of every "<id><suffix>" file in `dir`, in load_dataset order.
std::vector<std::string> ids_with_suffix(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw IoError("directory " + dir.string() + " does not exist");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && ends_with(name, suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  auto numeric = [](const std::string& s) { return s.find_first_not_of("0123456789") == std::string::npos; };
  std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    if (numeric(a) && numeric(b) && a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  if (ids.empty()) throw IoError("no *" + suffix + " files in " + dir.string());
  return ids;
}

std::string stem_id(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".srv"})
    if (ends_with(name, ext)) name.resize(name.size() - std::string(ext).size());
  if (ends_with(name, "_vol")) name.resize(name.size() - 4);
  return name;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  PhantomSpec spec;
  fs::path out;
};

void add_phantom(CLI::App& app, PhantomArgs& a) {
  auto* cmd = app.add_subcommand("phantom", "Generate a synthetic two-ellipsoid data set");
  cmd->add_option("--count", a.spec.count, "Number of samples")->capture_default_str();
  cmd->add_option("--size", a.spec.size, "Cube edge length in voxels")->capture_default_str();
  cmd->add_option("--seed", a.spec.seed, "Family seed")->capture_default_str();
  cmd->add_option("--noise", a.spec.noise_std, "Gaussian noise std")->capture_default_str();
  cmd->add_option("--semi-min", a.spec.semi_axis_min, "Smallest semi-axis")->capture_default_str();
  cmd->add_option("--semi-max", a.spec.semi_axis_max, "Largest semi-axis")->capture_default_str();
  cmd->add_option("--jitter", a.spec.center_jitter, "Center jitter in voxels")->capture_default_str();
  cmd->add_option("--gap", a.spec.min_gap, "Minimum gap between ellipsoids")->capture_default_str();
  cmd->add_option("--out", a.out, "Output directory")->required();
}

int run_phantom(const PhantomArgs& a) {
  a.spec.validate();
  std::vector<PhantomSample> samples;
  {
    PhaseTimer t("generate");
    samples = generate_phantoms(a.spec);
  }
  PhaseTimer t("write");
  write_phantom_set(a.spec, samples, a.out);
  std::cerr << "wrote " << samples.size() << " phantoms to " << a.out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------- preprocess

struct PreprocessArgs {
  fs::path in_dir;
  fs::path volume, left, right;
  std::string id;
  fs::path out;
  std::vector<std::size_t> target{128, 128, 64};
  std::size_t margin = kDefaultCropMargin;
};

void add_preprocess(CLI::App& app, PreprocessArgs& a) {
  auto* cmd = app.add_subcommand("preprocess", "Fuse masks, crop to the target size and normalize");
  auto* dir = cmd->add_option("--in", a.in_dir, "Directory of {id}_vol / {id}_maskL / {id}_maskR .srv files");
  auto* vol = cmd->add_option("--volume", a.volume, "Single volume (.srv, .nii, .nii.gz)");
  cmd->add_option("--left", a.left, "Left mask")->needs(vol);
  cmd->add_option("--right", a.right, "Right mask")->needs(vol);
  cmd->add_option("--id", a.id, "Output id in single-case mode (default: volume file stem)");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--target", a.target, "Target dims X Y Z")->expected(3)->capture_default_str();
  cmd->add_option("--margin", a.margin, "Crop margin around the mask")->capture_default_str();
  dir->excludes(vol);
}

int run_preprocess(PreprocessArgs a) {
  if (a.in_dir.empty() == a.volume.empty()) throw ConfigError("preprocess: give either --in or --volume");
  if (!a.volume.empty() && (a.left.empty() || a.right.empty()))
    throw ConfigError("preprocess: --volume needs --left and --right");
  const Dims target{a.target[0], a.target[1], a.target[2]};

  struct Case {
    std::string id;
    fs::path volume, left, right;
  };
  std::vector<Case> cases;
  if (!a.in_dir.empty()) {
    for (const auto& id : ids_with_suffix(a.in_dir, "_vol.srv"))
      cases.push_back({id, a.in_dir / (id + "_vol.srv"), a.in_dir / (id + "_maskL.srv"), a.in_dir / (id + "_maskR.srv")});
  } else {
    cases.push_back({a.id.empty() ? stem_id(a.volume) : a.id, a.volume, a.left, a.right});
  }

  Outputs out;
  {
    PhaseTimer t("preprocess");
    for (const auto& c : cases) {
      const CropResult r = preprocess_case(read_volume(c.volume), read_mask(c.left), read_mask(c.right), target, a.margin);
      out.add(a.out / (c.id + "_vol.srv"), encode_srv(r.volume));
      out.add(a.out / (c.id + "_mask.srv"), encode_srv(r.mask));
    }
  }
  PhaseTimer t("write");
  out.commit();
  std::cerr << "preprocessed " << cases.size() << " case(s) to " << a.out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  fs::path config;
  std::optional<std::string> preset, loss, precision;
  std::optional<fs::path> train_dir, test_dir, model_out, history_out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr, threshold;
  std::optional<std::uint64_t> seed, init_seed;
  bool no_skips = false;
  bool shuffle = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a U-Net on a preprocessed data set");
  cmd->add_option("--config", a.config, "JSON run config; flags below override it");
  cmd->add_option("--train-dir", a.train_dir, "Training set directory");
  cmd->add_option("--test-dir", a.test_dir, "Test set directory");
  cmd->add_option("--preset", a.preset, "Network preset (desk, paper)");
  cmd->add_option("--epochs", a.epochs, "Epochs");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--loss", a.loss, "bce_with_logits or soft_dice");
  cmd->add_option("--threshold", a.threshold, "Probability threshold for IoU");
  cmd->add_option("--seed", a.seed, "Shuffle seed");
  cmd->add_option("--init-seed", a.init_seed, "Weight initialization seed");
  cmd->add_option("--precision", a.precision, "f32 or f64");
  cmd->add_option("--model-out", a.model_out, "Model file to write");
  cmd->add_option("--history-out", a.history_out, "History JSON lines to write");
  cmd->add_flag("--no-skips", a.no_skips, "Drop encoder-decoder skip connections");
  cmd->add_flag("--shuffle", a.shuffle, "Shuffle the training order each epoch");
}

RunConfig resolve_config(const TrainArgs& a) {
  nlohmann::json j = nlohmann::json::object();
  if (!a.config.empty()) {
    try {
      j = nlohmann::json::parse(read_file(a.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(a.config.string() + ": not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(a.config.string() + ": top level must be a JSON object");
  }
  if (a.preset) {
    j["preset"] = *a.preset;
    j.erase("schedule");
  }
  if (a.train_dir) j["train_dir"] = a.train_dir->string();
  if (a.test_dir) j["test_dir"] = a.test_dir->string();
  if (a.model_out) j["model_out"] = a.model_out->string();
  if (a.history_out) j["history_out"] = a.history_out->string();
  if (a.epochs) j["epochs"] = *a.epochs;
  if (a.lr) j["lr"] = *a.lr;
  if (a.loss) j["loss"] = *a.loss;
  if (a.threshold) j["threshold"] = *a.threshold;
  if (a.seed) j["seed"] = *a.seed;
  if (a.init_seed) j["init_seed"] = *a.init_seed;
  if (a.precision) j["precision"] = *a.precision;
  if (a.no_skips) j["skips"] = false;
  if (a.shuffle) j["shuffle"] = true;
  RunConfig cfg = RunConfig::from_json(j);
  if (cfg.train_dir.empty()) throw ConfigError("train: no training directory (--train-dir or train_dir)");
  return cfg;
}

template <typename T>
History fit(UNet<float>& model, const Dataset& tr, const Dataset& te, const TrainConfig& cfg) {
  auto log = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu loss %.6f train_iou %.4f test_iou %.4f\n", r.epoch, r.loss, r.train_iou,
                 r.test_iou);
  };
  if constexpr (std::is_same_v<T, float>) {
    return train(model, tr, te, cfg, log);
  } else {
    UNet<double> wide = model.cast<double>();
    History h = train(wide, tr, te, cfg, log);
    model = wide.cast<float>();
    return h;
  }
}

int run_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a);
  std::cerr << "effective config:\n" << cfg.to_json().dump(2) << "\n";

  Dataset tr, te;
  {
    PhaseTimer t("load");
    tr = load_dataset(cfg.train_dir, Split::train);
    if (!cfg.test_dir.empty()) te = load_dataset(cfg.test_dir, Split::test);
  }
  UNet<float> model = build_unet(cfg.network, cfg.init_seed);
  std::cerr << "parameters: " << model.parameter_count() << "\n";
  History h;
  {
    PhaseTimer t("train");
    h = cfg.precision == Precision::f64 ? fit<double>(model, tr, te, cfg.train) : fit<float>(model, tr, te, cfg.train);
  }
  PhaseTimer t("write");
  save_model(model, cfg.model_out);
  write_file_atomic(cfg.history_out, h.to_jsonl());
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path model;
  fs::path input;
  fs::path out;
  double threshold = 0.5;
  bool overlay = false;
};

void add_predict(CLI::App& app, PredictArgs& a) {
  auto* cmd = app.add_subcommand("predict", "Write probability and binary masks for one volume or a directory");
  cmd->add_option("--model", a.model, "Model file")->required();
  cmd->add_option("--in", a.input, "Volume file, or directory of {id}_vol.srv")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--threshold", a.threshold, "Probability threshold")->capture_default_str();
  cmd->add_flag("--overlay", a.overlay, "Also write axial/coronal/sagittal PNG overlays");
}

int run_predict(const PredictArgs& a) {
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw ConfigError("predict: --threshold must be in (0, 1)");
  const UNet<float> model = load_model(a.model);
  std::vector<std::pair<std::string, fs::path>> cases;
  if (fs::is_directory(a.input)) {
    for (const auto& id : ids_with_suffix(a.input, "_vol.srv")) cases.emplace_back(id, a.input / (id + "_vol.srv"));
  } else {
    cases.emplace_back(stem_id(a.input), a.input);
  }
  Outputs out;
  {
    PhaseTimer t("predict");
    for (const auto& [id, path] : cases) {
      const Volume v = read_volume(path);
      const Volume prob = predict_probability(model, v);
      const Mask pred = binarize(prob, a.threshold);
      out.add(a.out / (id + "_prob.srv"), encode_srv(prob));
      out.add(a.out / (id + "_pred.srv"), encode_srv(pred));
      if (a.overlay) out.overlays.emplace_back(v, pred, a.out / id);
    }
  }
  PhaseTimer t("write");
  out.commit();
  std::cerr << "predicted " << cases.size() << " volume(s)\n";
  return 0;
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path pred;
  fs::path gt;
  fs::path out;
  bool micro = false;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* cmd = app.add_subcommand("evaluate", "Compare {id}_pred.srv against {id}_mask.srv");
  cmd->add_option("--pred", a.pred, "Directory of predictions")->required();
  cmd->add_option("--gt", a.gt, "Directory of ground-truth masks")->required();
  cmd->add_option("--out", a.out, "Directory for reports.json and aggregate.json")->required();
  cmd->add_flag("--micro", a.micro, "Pool counts over volumes instead of averaging metrics");
}

int run_evaluate(const EvaluateArgs& a) {
  std::vector<MetricsReport> reports;
  {
    PhaseTimer t("evaluate");
    for (const auto& id : ids_with_suffix(a.gt, "_mask.srv")) {
      const fs::path p = a.pred / (id + "_pred.srv");
      if (!fs::exists(p)) throw IoError("no prediction " + p.string() + " for ground truth " + id);
      reports.push_back(report_volume(read_mask(p), read_mask(a.gt / (id + "_mask.srv")), id));
    }
  }
  const AggregateReport agg = aggregate(reports, a.micro ? Averaging::micro : Averaging::macro);
  nlohmann::json per = nlohmann::json::array();
  for (const auto& r : reports) per.push_back(to_json(r));
  Outputs out;
  out.add(a.out / "reports.json", per.dump(2) + "\n");
  out.add(a.out / "aggregate.json", to_json(agg).dump(2) + "\n");
  out.commit();
  std::printf("n=%zu dsc=%.6f sensitivity=%.6f ppv=%.6f iou=%.6f (%s)\n", agg.n, agg.mean.dsc, agg.mean.sensitivity,
              agg.mean.ppv, agg.mean.iou, a.micro ? "micro" : "macro");
  return 0;
}

// -------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 2024;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
  auto* cmd = app.add_subcommand("gradcheck", "Check tape gradients against finite differences");
  cmd->add_option("--seed", a.seed, "Seed for shapes and inputs")->capture_default_str();
}

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<GradCheckResult> results;
  {
    PhaseTimer t("gradcheck");
    results = run_gradcheck_suite(a.seed);
  }
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.worst_error <= kGradCheckTolerance;
    ok = ok && pass;
    std::printf("%-20s cases=%zu worst=%.3e %s\n", r.op.c_str(), r.cases, r.worst_error, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::cerr << "gradcheck: at least one op exceeds " << kGradCheckTolerance << "\n";
    return kExitNumeric;
  }
  return 0;
}

// ---------------------------------------------------------------- overlay

struct OverlayArgs {
  fs::path volume;
  fs::path mask;
  fs::path out;
};

void add_overlay(CLI::App& app, OverlayArgs& a) {
  auto* cmd = app.add_subcommand("overlay", "Write axial/coronal/sagittal PNGs with the mask contour");
  cmd->add_option("--volume", a.volume, "Intensity volume")->required();
  cmd->add_option("--mask", a.mask, "Mask")->required();
  cmd->add_option("--out", a.out, "Output prefix; writes <prefix>_<plane>.png")->required();
}

int run_overlay(const OverlayArgs& a) {
  Outputs out;
  out.overlays.emplace_back(read_volume(a.volume), read_mask(a.mask), a.out);
  const auto& [v, m, prefix] = out.overlays.front();
  if (v.dims != m.dims) throw ShapeError("overlay: volume " + dims_str(v.dims) + " vs mask " + dims_str(m.dims));
  out.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation with a 3D U-Net"};
  app.require_subcommand(1);
  PhantomArgs phantom;
  PreprocessArgs preprocess;
  TrainArgs train_args;
  PredictArgs predict;
  EvaluateArgs evaluate;
  GradcheckArgs gradcheck;
  OverlayArgs overlay;
  add_phantom(app, phantom);
  add_preprocess(app, preprocess);
  add_train(app, train_args);
  add_predict(app, predict);
  add_evaluate(app, evaluate);
  add_gradcheck(app, gradcheck);
  add_overlay(app, overlay);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "phantom") return run_phantom(phantom);
    if (cmd == "preprocess") return run_preprocess(preprocess);
    if (cmd == "train") return run_train(train_args);
    if (cmd == "predict") return run_predict(predict);
    if (cmd == "evaluate") return run_evaluate(evaluate);
    if (cmd == "gradcheck") return run_gradcheck(gradcheck);
    if (cmd == "overlay") return run_overlay(overlay);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitUsage;
}
