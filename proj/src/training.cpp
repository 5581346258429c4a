#include "volseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "volseg/error.hpp"
#include "volseg/rng.hpp"

namespace volseg {

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_finite<T>(params[k].grad(), "adam_step: gradient of parameter " + std::to_string(k));
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.m[k].assign(params[k].numel(), T(0));
      state.v[k].assign(params[k].numel(), T(0));
    }
  }
  state.step_count += 1;
  const auto& hp = state.hp;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw ShapeError("adam_step: parameter " + std::to_string(k) + " changed size");
    if (g.empty()) {
      // Zero gradient: moments decay, parameters move only through history.
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<T>(hp.beta1 * m[i]);
        v[i] = static_cast<T>(hp.beta2 * v[i]);
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        p[i] = static_cast<T>(p[i] - hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon));
      }
      continue;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(hp.beta1 * m[i] + (1.0 - hp.beta1) * gi);
      v[i] = static_cast<T>(hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi);
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] = static_cast<T>(p[i] - hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon));
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (batch_size != 1) throw ConfigError("train: only batch_size = 1 is supported");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train: threshold must lie in (0, 1)");
  if (!(adam.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
}

void Dataset::validate() const {
  for (const auto& s : samples) {
    if (s.volume.dims != s.mask.dims) {
      throw ShapeError("sample " + s.id + ": volume " + dims_str(s.volume.dims) + " and mask " +
                       dims_str(s.mask.dims) + " differ");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  const std::string suffix = "_vol.srv";
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    if (numeric(a) && numeric(b) && a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  Dataset ds;
  ds.split = split;
  for (const auto& id : ids) {
    const fs::path mask_path = dir / (id + "_mask.srv");
    if (!fs::exists(mask_path)) throw IoError("sample " + id + " has no mask file " + mask_path.string());
    ds.samples.push_back({id, read_volume(dir / (id + suffix)), read_mask(mask_path)});
  }
  ds.validate();
  return ds;
}

std::string History::to_jsonl() const {
  std::string out;
  for (const auto& r : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["train_iou"] = r.train_iou;
    if (std::isnan(r.test_iou)) {
      j["test_iou"] = nullptr;
    } else {
      j["test_iou"] = r.test_iou;
    }
    out += j.dump() + "\n";
  }
  return out;
}

template <typename T>
Tensor<T> volume_to_tensor(const Volume& v) {
  return Tensor<T>(Shape{1, 1, v.dims[2], v.dims[1], v.dims[0]}, std::vector<T>(v.data.begin(), v.data.end()));
}

template <typename T>
Tensor<T> mask_to_tensor(const Mask& m) {
  return Tensor<T>(Shape{1, 1, m.dims[2], m.dims[1], m.dims[0]}, std::vector<T>(m.data.begin(), m.data.end()));
}

template <typename T>
Volume predict_logits(const UNet<T>& model, const Volume& v) {
  const Tensor<T> logits = model.infer(volume_to_tensor<T>(v));
  Volume out = Volume::zeros(v.dims, v.spacing);
  std::copy(logits.data().begin(), logits.data().end(), out.data.begin());
  return out;
}

template <typename T>
Volume predict_probability(const UNet<T>& model, const Volume& v) {
  Volume out = predict_logits(model, v);
  for (auto& f : out.data) f = static_cast<float>(sigmoid_scalar(static_cast<double>(f)));
  return out;
}

SplitEvaluation evaluate_predictions(const Predictor& logits_fn, const Dataset& ds, double threshold) {
  if (ds.samples.empty()) throw ConfigError("evaluate: dataset is empty");
  ds.validate();
  SplitEvaluation out;
  long double iou_sum = 0.0L;
  for (const auto& s : ds.samples) {
    Volume prob = logits_fn(s.volume);
    if (prob.dims != s.mask.dims) {
      throw ShapeError("evaluate: prediction for sample " + s.id + " has dims " + dims_str(prob.dims));
    }
    for (auto& f : prob.data) f = static_cast<float>(sigmoid_scalar(static_cast<double>(f)));
    out.reports.push_back(report_volume(binarize(prob, threshold), s.mask, s.id));
    iou_sum += out.reports.back().metrics.iou;
  }
  out.mean_iou = static_cast<double>(iou_sum / static_cast<long double>(ds.samples.size()));
  return out;
}

template <typename T>
SplitEvaluation evaluate_split(const UNet<T>& model, const Dataset& ds, double threshold) {
  return evaluate_predictions([&model](const Volume& v) { return predict_logits(model, v); }, ds, threshold);
}

template <typename T>
History train(UNet<T>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.samples.empty()) throw ConfigError("train: training set is empty");
  train_set.validate();
  test_set.validate();
  const std::size_t div = model.config().divisor();
  for (const auto* ds : {&train_set, &test_set}) {
    for (const auto& s : ds->samples) {
      for (int a = 0; a < 3; ++a) {
        if (s.volume.dims[a] % div != 0) {
          throw ShapeError("train: sample " + s.id + " has dims " + dims_str(s.volume.dims) +
                           ", every axis must be a multiple of " + std::to_string(div));
        }
      }
    }
  }

  std::vector<Tensor<T>> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  AdamState<T> adam;
  adam.hp = cfg.adam;

  std::vector<std::size_t> order(train_set.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitMix64 rng(cfg.seed);

  std::vector<Tensor<T>> inputs, targets;
  for (const auto& s : train_set.samples) {
    inputs.push_back(volume_to_tensor<T>(s.volume));
    targets.push_back(mask_to_tensor<T>(s.mask));
  }

  History history;
  Tape<T> tape;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
      }
    }
    long double loss_sum = 0.0L;
    for (std::size_t idx : order) {
      model.zero_grad();
      Tensor<T> objective;
      {
        auto recording = tape.record();
        objective = loss(cfg.loss, model.forward(inputs[idx]), targets[idx]);
      }
      const T value = objective.item();
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                           train_set.samples[idx].id);
      }
      tape.backward(objective);
      tape.reset();
      adam_step(std::span<Tensor<T>>(params), adam);
      loss_sum += value;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = static_cast<double>(loss_sum / static_cast<long double>(order.size()));
    rec.train_iou = evaluate_split(model, train_set, cfg.threshold).mean_iou;
    rec.test_iou = test_set.samples.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : evaluate_split(model, test_set, cfg.threshold).mean_iou;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

#define VOLSEG_INSTANTIATE(T)                                                                             \
  template void adam_step<T>(std::span<Tensor<T>>, AdamState<T>&);                                      \
  template Tensor<T> volume_to_tensor<T>(const Volume&);                                                \
  template Tensor<T> mask_to_tensor<T>(const Mask&);                                                    \
  template Volume predict_logits<T>(const UNet<T>&, const Volume&);                                     \
  template Volume predict_probability<T>(const UNet<T>&, const Volume&);                                \
  template SplitEvaluation evaluate_split<T>(const UNet<T>&, const Dataset&, double);                   \
  template History train<T>(UNet<T>&, const Dataset&, const Dataset&, const TrainConfig&, const EpochCallback&);

VOLSEG_INSTANTIATE(float)
VOLSEG_INSTANTIATE(double)
#undef VOLSEG_INSTANTIATE

}  // namespace volseg
