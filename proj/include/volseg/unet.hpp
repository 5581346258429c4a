#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "volseg/nn.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

struct UNetConfig {
  std::size_t levels = 3;
  std::vector<std::size_t> channel_schedule{8, 16, 32};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  double alpha = 0.3;
  bool skips = true;

  // "paper": [10, 32, 64, 128, 256, 512]; "desk": [8, 16, 32].
  static UNetConfig preset(std::string_view name);

  void validate() const;

  // Spatial extents must be multiples of this.
  std::size_t divisor() const { return std::size_t{1} << (levels - 1); }

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);

  bool operator==(const UNetConfig&) const = default;
};

// Trainable parameter count (conv/transposed-conv weights and biases plus
// batch-norm gamma and beta). Running statistics are buffers, not counted.
std::size_t param_count(const UNetConfig& cfg);

// Encoder level i: conv3x3x3(same) -> batchnorm -> leaky_relu, followed by a
// 2x2x2 max pool on every level except the bottleneck. Decoder level i:
// conv_transpose(2,2,2) -> concat encoder skip -> conv3x3x3 -> batchnorm ->
// leaky_relu. Head: (1,1,1) convolution emitting logits.
template <typename T>
class UNet {
 public:
  struct Block {
    ConvParams<T> conv;
    BatchNormParams<T> norm;
  };
  struct UpLevel {
    ConvParams<T> up;
    Block block;
  };

  UNet() = default;

  // He-initialized (leaky-relu gain, fan-in scaling) from `seed`; biases 0,
  // gamma 1, beta 0.
  UNet(UNetConfig cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }

  // Train mode: batch statistics, running statistics updated.
  Tensor<T> forward(const Tensor<T>& x);
  // Infer mode: running statistics; the model is not modified.
  Tensor<T> infer(const Tensor<T>& x) const;

  // Trainable tensors in a fixed order with their layer paths.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  // Batch-norm running statistics, same order as their layers.
  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers();
  std::vector<std::pair<std::string, const std::vector<T>*>> named_buffers() const;

  std::size_t parameter_count() const;

  void zero_grad() const;

  template <typename U>
  UNet<U> cast() const;

 private:
  template <typename U>
  friend class UNet;

  void check_input(const Tensor<T>& x) const;

  // Model is UNet (train mode) or const UNet (infer mode).
  template <typename Model>
  static Tensor<T> run(Model& model, const Tensor<T>& x);

  UNetConfig cfg_;
  std::vector<Block> encoder_;
  std::vector<UpLevel> decoder_;  // decoder_[i] returns to encoder level i
  ConvParams<T> head_;
};

UNet<float> build_unet(const UNetConfig& cfg, std::uint64_t seed);

inline constexpr std::uint32_t kModelFormatVersion = 1;

// "VSEG", u32 version, u64 manifest length, JSON manifest (config, layer
// paths, shapes, byte offsets), then little-endian f32 payload.
void save_model(const UNet<float>& model, const std::filesystem::path& path);
UNet<float> load_model(const std::filesystem::path& path);

}  // namespace volseg
