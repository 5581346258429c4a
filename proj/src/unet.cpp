#include "volseg/unet.hpp"

#include <cmath>
#include <type_traits>

#include "volseg/rng.hpp"

namespace volseg {

UNetConfig UNetConfig::preset(std::string_view name) {
  UNetConfig cfg;
  if (name == "paper") {
    cfg.levels = 6;
    cfg.channel_schedule = {10, 32, 64, 128, 256, 512};
  } else if (name == "desk") {
    cfg.levels = 3;
    cfg.channel_schedule = {8, 16, 32};
  } else {
    throw ConfigError("unknown network preset '" + std::string(name) + "' (expected paper or desk)");
  }
  return cfg;
}

namespace {

void validate_structure(const UNetConfig& cfg) {
  if (cfg.levels < 2) throw ConfigError("unet: levels must be at least 2");
  if (cfg.levels > 16) throw ConfigError("unet: levels must be at most 16");
  if (cfg.channel_schedule.size() != cfg.levels) {
    throw ConfigError("unet: channel schedule has " + std::to_string(cfg.channel_schedule.size()) +
                      " entries but levels = " + std::to_string(cfg.levels));
  }
  for (auto c : cfg.channel_schedule)
    if (c == 0) throw ConfigError("unet: channel counts must be positive");
  if (cfg.in_channels == 0 || cfg.out_channels == 0) throw ConfigError("unet: in/out channels must be positive");
  if (!(cfg.alpha >= 0.0 && cfg.alpha < 1.0)) throw ConfigError("unet: alpha must lie in [0, 1)");
}

}  // namespace

void UNetConfig::validate() const {
  validate_structure(*this);
  for (std::size_t i = 1; i < channel_schedule.size(); ++i) {
    if (channel_schedule[i] <= channel_schedule[i - 1]) {
      throw ConfigError("unet: channel schedule must be strictly increasing");
    }
  }
}

nlohmann::json UNetConfig::to_json() const {
  return {{"levels", levels},           {"channel_schedule", channel_schedule},
          {"in_channels", in_channels}, {"out_channels", out_channels},
          {"alpha", alpha},             {"skips", skips}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig cfg;
  try {
    cfg.levels = j.at("levels").get<std::size_t>();
    cfg.channel_schedule = j.at("channel_schedule").get<std::vector<std::size_t>>();
    cfg.in_channels = j.at("in_channels").get<std::size_t>();
    cfg.out_channels = j.at("out_channels").get<std::size_t>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.skips = j.at("skips").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("unet config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::size_t param_count(const UNetConfig& cfg) {
  validate_structure(cfg);
  const auto& s = cfg.channel_schedule;
  std::size_t total = 0;
  for (std::size_t i = 0; i < cfg.levels; ++i) {
    const std::size_t cin = i == 0 ? cfg.in_channels : s[i - 1];
    total += 27 * cin * s[i] + s[i] + 2 * s[i];
  }
  for (std::size_t i = 0; i + 1 < cfg.levels; ++i) {
    total += 8 * s[i + 1] * s[i] + s[i];
    const std::size_t cin = cfg.skips ? 2 * s[i] : s[i];
    total += 27 * cin * s[i] + s[i] + 2 * s[i];
  }
  total += s[0] * cfg.out_channels + cfg.out_channels;
  return total;
}

namespace {

template <typename T>
void he_init(ConvParams<T>& p, std::size_t fan_in, double gain, std::uint64_t seed) {
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  SplitMix64 rng(seed);
  for (auto& w : p.weight.data()) w = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
typename UNet<T>::Block make_block(std::size_t in, std::size_t out) {
  return {ConvParams<T>::make(in, out, {3, 3, 3}), BatchNormParams<T>::make(out)};
}

template <typename U, typename T>
Tensor<U> cast_param(const Tensor<T>& t) {
  return t.template cast<U>().set_requires_grad(t.requires_grad());
}

template <typename U, typename T>
ConvParams<U> cast_conv(const ConvParams<T>& p) {
  ConvParams<U> q;
  q.in_channels = p.in_channels;
  q.out_channels = p.out_channels;
  q.kernel = p.kernel;
  q.stride = p.stride;
  q.padding = p.padding;
  q.weight = cast_param<U>(p.weight);
  q.bias = cast_param<U>(p.bias);
  return q;
}

template <typename U, typename T>
BatchNormParams<U> cast_norm(const BatchNormParams<T>& p) {
  BatchNormParams<U> q;
  q.channels = p.channels;
  q.gamma = cast_param<U>(p.gamma);
  q.beta = cast_param<U>(p.beta);
  q.running_mean.assign(p.running_mean.begin(), p.running_mean.end());
  q.running_var.assign(p.running_var.begin(), p.running_var.end());
  q.epsilon = static_cast<U>(p.epsilon);
  q.momentum = static_cast<U>(p.momentum);
  q.mode = p.mode;
  return q;
}

}  // namespace

template <typename T>
UNet<T>::UNet(UNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& s = cfg_.channel_schedule;
  const double gain = std::sqrt(2.0 / (1.0 + cfg_.alpha * cfg_.alpha));
  std::uint64_t layer = 0;
  for (std::size_t i = 0; i < cfg_.levels; ++i) {
    const std::size_t cin = i == 0 ? cfg_.in_channels : s[i - 1];
    encoder_.push_back(make_block<T>(cin, s[i]));
    he_init(encoder_.back().conv, 27 * cin, gain, derive_seed(seed, layer++));
  }
  for (std::size_t i = 0; i + 1 < cfg_.levels; ++i) {
    UpLevel level{ConvParams<T>::make(s[i + 1], s[i], {2, 2, 2}, 2, Padding::valid),
                  make_block<T>(cfg_.skips ? 2 * s[i] : s[i], s[i])};
    decoder_.push_back(std::move(level));
  }
  // Initialize decoder in execution order (deepest first).
  for (std::size_t k = decoder_.size(); k-- > 0;) {
    auto& level = decoder_[k];
    // Stride-2 kernel-2 upsampling: each output voxel sees in_channels taps.
    he_init(level.up, level.up.in_channels, gain, derive_seed(seed, layer++));
    he_init(level.block.conv, 27 * level.block.conv.in_channels, gain, derive_seed(seed, layer++));
  }
  head_ = ConvParams<T>::make(s[0], cfg_.out_channels, {1, 1, 1});
  he_init(head_, s[0], 1.0, derive_seed(seed, layer++));
}

template <typename T>
void UNet<T>::check_input(const Tensor<T>& x) const {
  if (x.rank() != 5) throw ShapeError("unet: expected NCDHW input, got " + shape_str(x.shape()));
  if (x.extent(1) != cfg_.in_channels) {
    throw ShapeError("unet: input has " + std::to_string(x.extent(1)) + " channels, model expects " +
                     std::to_string(cfg_.in_channels));
  }
  const char* names[] = {"D (depth)", "H (height)", "W (width)"};
  const std::size_t div = cfg_.divisor();
  for (int i = 0; i < 3; ++i) {
    const std::size_t e = x.extent(2 + i);
    if (e == 0 || e % div != 0) {
      throw ShapeError(std::string("unet: axis ") + names[i] + " extent " + std::to_string(e) +
                       " is not a positive multiple of " + std::to_string(div));
    }
  }
}

template <typename T>
template <typename Model>
Tensor<T> UNet<T>::run(Model& model, const Tensor<T>& x) {
  model.check_input(x);
  const T alpha = static_cast<T>(model.cfg_.alpha);
  auto apply_block = [alpha](auto& block, const Tensor<T>& in) {
    Tensor<T> h = conv3d(in, block.conv);
    if constexpr (std::is_const_v<Model>) {
      h = batchnorm3d_infer(h, block.norm);
    } else {
      block.norm.mode = NormMode::train;
      h = batchnorm3d(h, block.norm);
    }
    return leaky_relu(h, alpha);
  };

  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  const std::size_t levels = model.encoder_.size();
  for (std::size_t i = 0; i < levels; ++i) {
    h = apply_block(model.encoder_[i], h);
    if (i + 1 < levels) {
      skips.push_back(h);
      h = maxpool3d(h);
    }
  }
  for (std::size_t k = model.decoder_.size(); k-- > 0;) {
    auto& level = model.decoder_[k];
    h = conv_transpose3d(h, level.up);
    if (model.cfg_.skips) h = concat_channels(skips[k], h);
    h = apply_block(level.block, h);
  }
  return conv3d(h, model.head_);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x) {
  return run(*this, x);
}

template <typename T>
Tensor<T> UNet<T>::infer(const Tensor<T>& x) const {
  return run(*this, x);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> UNet<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto add_block = [&out](const std::string& prefix, const Block& b) {
    out.emplace_back(prefix + ".conv.weight", b.conv.weight);
    out.emplace_back(prefix + ".conv.bias", b.conv.bias);
    out.emplace_back(prefix + ".norm.gamma", b.norm.gamma);
    out.emplace_back(prefix + ".norm.beta", b.norm.beta);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) add_block("enc." + std::to_string(i), encoder_[i]);
  for (std::size_t k = decoder_.size(); k-- > 0;) {
    const std::string prefix = "dec." + std::to_string(k);
    out.emplace_back(prefix + ".up.weight", decoder_[k].up.weight);
    out.emplace_back(prefix + ".up.bias", decoder_[k].up.bias);
    add_block(prefix, decoder_[k].block);
  }
  out.emplace_back("head.weight", head_.weight);
  out.emplace_back("head.bias", head_.bias);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> UNet<T>::named_buffers() {
  std::vector<std::pair<std::string, std::vector<T>*>> out;
  auto add = [&out](const std::string& prefix, BatchNormParams<T>& n) {
    out.emplace_back(prefix + ".norm.running_mean", &n.running_mean);
    out.emplace_back(prefix + ".norm.running_var", &n.running_var);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) add("enc." + std::to_string(i), encoder_[i].norm);
  for (std::size_t k = decoder_.size(); k-- > 0;) add("dec." + std::to_string(k), decoder_[k].block.norm);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const std::vector<T>*>> UNet<T>::named_buffers() const {
  auto mutable_view = const_cast<UNet*>(this)->named_buffers();
  std::vector<std::pair<std::string, const std::vector<T>*>> out;
  for (auto& [name, ptr] : mutable_view) out.emplace_back(std::move(name), ptr);
  return out;
}

template <typename T>
std::size_t UNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
void UNet<T>::zero_grad() const {
  for (const auto& [name, t] : named_parameters()) t.zero_grad();
}

template <typename T>
template <typename U>
UNet<U> UNet<T>::cast() const {
  UNet<U> out;
  out.cfg_ = cfg_;
  for (const auto& b : encoder_) out.encoder_.push_back({cast_conv<U>(b.conv), cast_norm<U>(b.norm)});
  for (const auto& l : decoder_) {
    out.decoder_.push_back({cast_conv<U>(l.up), {cast_conv<U>(l.block.conv), cast_norm<U>(l.block.norm)}});
  }
  out.head_ = cast_conv<U>(head_);
  return out;
}

UNet<float> build_unet(const UNetConfig& cfg, std::uint64_t seed) { return UNet<float>(cfg, seed); }

template class UNet<float>;
template class UNet<double>;
template UNet<double> UNet<float>::cast<double>() const;
template UNet<float> UNet<double>::cast<float>() const;
template UNet<float> UNet<float>::cast<float>() const;
template UNet<double> UNet<double>::cast<double>() const;

}  // namespace volseg
