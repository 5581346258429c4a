#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

enum class Padding { same, valid };

using Kernel3 = std::array<std::size_t, 3>;

// Weights are [out, in, kd, kh, kw], bias is [out]. The same layout is used
// for transposed convolutions.
template <typename T>
struct ConvParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Kernel3 kernel{3, 3, 3};
  std::size_t stride = 1;
  Padding padding = Padding::same;
  Tensor<T> weight;
  Tensor<T> bias;

  // Zero weights and bias, both marked as requiring gradients.
  static ConvParams make(std::size_t in, std::size_t out, Kernel3 kernel, std::size_t stride = 1,
                         Padding padding = Padding::same);

  void validate() const;
};

enum class NormMode { train, infer };

template <typename T>
struct BatchNormParams {
  std::size_t channels = 0;
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  // running = momentum * running + (1 - momentum) * batch
  T momentum = T(0.9);
  NormMode mode = NormMode::train;

  // gamma = 1, beta = 0 (requiring gradients); running stats 0 / 1.
  static BatchNormParams make(std::size_t channels);
};

// Cross-correlation (no kernel flip) plus bias over an NCDHW tensor.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvParams<T>& p);

// Kernel (2,2,2), stride 2: doubles every spatial extent. Adjoint of the
// matching stride-2 convolution.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvParams<T>& p);

// 2x2x2 max pooling. The gradient goes to the first (lowest linear index)
// maximum of each block.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x);

// Per-channel normalization over (N, D, H, W). In train mode the batch
// statistics are used and the running statistics updated; in infer mode the
// running statistics are used and `p` is not modified.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, BatchNormParams<T>& p);

template <typename T>
Tensor<T> batchnorm3d_infer(const Tensor<T>& x, const BatchNormParams<T>& p);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(0.3));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Stable scalar logistic function.
template <typename T>
T sigmoid_scalar(T x);

// Concatenates along axis 1; `a` fills the leading channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

enum class LossKind { bce_with_logits, soft_dice };

// Mean over voxels of max(z,0) - z*t + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target);

// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s), p = sigmoid(logits).
template <typename T>
Tensor<T> soft_dice(const Tensor<T>& logits, const Tensor<T>& target, T smooth = T(1));

template <typename T>
Tensor<T> loss(LossKind kind, const Tensor<T>& logits, const Tensor<T>& target);

}  // namespace volseg
