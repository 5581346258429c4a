#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "volseg/metrics.hpp"
#include "volseg/nn.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace volseg {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig hp;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One bias-corrected Adam update of `params` from their grad buffers. A
// parameter without a grad buffer is treated as having a zero gradient.
// Non-finite gradients abort the step before anything is modified.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  LossKind loss = LossKind::bce_with_logits;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  bool shuffle = false;
  AdamConfig adam;

  void validate() const;
};

struct Sample {
  std::string id;
  Volume volume;
  Mask mask;
};

enum class Split { train, test };

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::train;

  void validate() const;
};

// Loads every {id}_vol.srv with a matching {id}_mask.srv, ordered by id
// (numerically where ids are integers).
Dataset load_dataset(const std::filesystem::path& dir, Split split);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_iou = 0.0;
  double test_iou = 0.0;  // NaN when the test split is empty
};

struct History {
  std::vector<EpochRecord> epochs;

  // One JSON object per line: epoch, loss, train_iou, test_iou.
  std::string to_jsonl() const;
};

struct SplitEvaluation {
  double mean_iou = 0.0;
  std::vector<MetricsReport> reports;
};

// Logits for one volume, same dims.
using Predictor = std::function<Volume(const Volume&)>;

// forward -> sigmoid -> threshold -> confusion counts -> metrics, per sample.
SplitEvaluation evaluate_predictions(const Predictor& logits_fn, const Dataset& ds, double threshold);

template <typename T>
SplitEvaluation evaluate_split(const UNet<T>& model, const Dataset& ds, double threshold);

template <typename T>
Tensor<T> volume_to_tensor(const Volume& v);
template <typename T>
Tensor<T> mask_to_tensor(const Mask& m);

// Raw logits and sigmoid probabilities for a single volume (infer mode).
template <typename T>
Volume predict_logits(const UNet<T>& model, const Volume& v);
template <typename T>
Volume predict_probability(const UNet<T>& model, const Volume& v);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epochs x samples with batch size 1, Adam updates, per-epoch mean loss and
// IoU on both splits. Mutates `model`; returns the full history.
template <typename T>
History train(UNet<T>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

}  // namespace volseg
