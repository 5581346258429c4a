#include <cmath>
#include <string>

#include "volseg/nn.hpp"

namespace volseg {

namespace {

template <typename T>
void require_5d(const Tensor<T>& x, const char* op) {
  if (x.rank() != 5) throw ShapeError(std::string(op) + ": expected NCDHW tensor, got " + shape_str(x.shape()));
}

template <typename T>
void require_binary_target(const Tensor<T>& logits, const Tensor<T>& target, const char* op) {
  if (logits.shape() != target.shape()) {
    throw ShapeError(std::string(op) + ": logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  if (logits.numel() == 0) throw ShapeError(std::string(op) + ": empty input");
  for (T t : target.data()) {
    if (t != T(0) && t != T(1)) throw ConfigError(std::string(op) + ": target values must be 0 or 1");
  }
}

}  // namespace

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x) {
  require_5d(x, "maxpool3d");
  const char* names[] = {"D", "H", "W"};
  for (int i = 0; i < 3; ++i) {
    if (x.extent(2 + i) % 2 != 0) {
      throw ShapeError(std::string("maxpool3d: axis ") + names[i] + " has odd extent " +
                       std::to_string(x.extent(2 + i)));
    }
  }
  const std::size_t planes = x.extent(0) * x.extent(1);
  const std::size_t d = x.extent(2), h = x.extent(3), w = x.extent(4);
  const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{x.extent(0), x.extent(1), od, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  auto xd = x.data();
  auto o = out.data();
  std::size_t k = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * d * h * w;
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xi = 0; xi < ow; ++xi, ++k) {
          // Visit the block in increasing linear index; strict > keeps the first maximum.
          std::size_t best = base + ((2 * z) * h + 2 * y) * w + 2 * xi;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t idx = base + ((2 * z + a) * h + 2 * y + b) * w + 2 * xi + c;
                if (xd[idx] > xd[best]) best = idx;
              }
          argmax[k] = best;
          o[k] = xd[best];
        }
  }
  detail::record<T>("maxpool3d", {&x}, out, [x, out, argmax = std::move(argmax)]() {
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
  return out;
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::size_t channels) {
  BatchNormParams p;
  p.channels = channels;
  p.gamma = Tensor<T>::full(Shape{channels}, T(1), true);
  p.beta = Tensor<T>(Shape{channels}, true);
  p.running_mean.assign(channels, T(0));
  p.running_var.assign(channels, T(1));
  return p;
}

namespace {

template <typename T>
void check_norm(const Tensor<T>& x, const BatchNormParams<T>& p) {
  require_5d(x, "batchnorm3d");
  if (x.extent(1) != p.channels) {
    throw ShapeError("batchnorm3d: input has " + std::to_string(x.extent(1)) +
                     " channels, layer expects " + std::to_string(p.channels));
  }
  if (p.gamma.numel() != p.channels || p.beta.numel() != p.channels ||
      p.running_mean.size() != p.channels || p.running_var.size() != p.channels) {
    throw ShapeError("batchnorm3d: parameter lengths do not match channel count");
  }
}

// Normalizes with the given per-channel mean and inverse std and records the
// backward pass. `batch_stats` selects the full batch-statistics gradient.
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    std::vector<T> mean, std::vector<T> inv_std, bool batch_stats) {
  const std::size_t batch = x.extent(0), channels = x.extent(1);
  const std::size_t plane = x.extent(2) * x.extent(3) * x.extent(4);
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto o = out.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      const T m = mean[c], s = inv_std[c], ga = gd[c], be = bd[c];
      for (std::size_t i = 0; i < plane; ++i) o[base + i] = ga * ((xd[base + i] - m) * s) + be;
    }

  detail::record<T>("batchnorm3d", {&x, &gamma, &beta}, out,
                    [x, gamma, beta, out, mean = std::move(mean), inv_std = std::move(inv_std),
                     batch_stats]() {
    const std::size_t batch = x.extent(0), channels = x.extent(1);
    const std::size_t plane = x.extent(2) * x.extent(3) * x.extent(4);
    const auto count = static_cast<long double>(batch * plane);
    auto g = out.grad();
    auto xd = x.data();
    auto gd = gamma.data();
    T* ggamma = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
    T* gbeta = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
    T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
    for (std::size_t c = 0; c < channels; ++c) {
      const T m = mean[c], s = inv_std[c];
      long double sum_g = 0.0L, sum_g_xhat = 0.0L;
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T xhat = (xd[base + i] - m) * s;
          sum_g += g[base + i];
          sum_g_xhat += static_cast<long double>(g[base + i]) * xhat;
        }
      }
      if (gbeta) gbeta[c] += static_cast<T>(sum_g);
      if (ggamma) ggamma[c] += static_cast<T>(sum_g_xhat);
      if (!gx) continue;
      const T ga = gd[c];
      if (batch_stats) {
        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        const T mean_g = static_cast<T>(sum_g / count);
        const T mean_gx = static_cast<T>(sum_g_xhat / count);
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t base = (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T xhat = (xd[base + i] - m) * s;
            gx[base + i] += ga * s * (g[base + i] - mean_g - xhat * mean_gx);
          }
        }
      } else {
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t base = (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[base + i] += ga * s * g[base + i];
        }
      }
    }
  });
  return out;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm3d_infer(const Tensor<T>& x, const BatchNormParams<T>& p) {
  check_norm(x, p);
  std::vector<T> inv_std(p.channels);
  for (std::size_t c = 0; c < p.channels; ++c) {
    inv_std[c] = T(1) / std::sqrt(p.running_var[c] + p.epsilon);
  }
  return normalize(x, p.gamma, p.beta, p.running_mean, std::move(inv_std), false);
}

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, BatchNormParams<T>& p) {
  if (p.mode == NormMode::infer) return batchnorm3d_infer(x, p);
  check_norm(x, p);
  const std::size_t batch = x.extent(0), channels = x.extent(1);
  const std::size_t plane = x.extent(2) * x.extent(3) * x.extent(4);
  const auto count = static_cast<long double>(batch * plane);
  auto xd = x.data();
  std::vector<T> mean(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    long double acc = 0.0L;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += xd[base + i];
    }
    const long double mu = acc / count;
    long double sq = 0.0L;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const long double dlt = xd[base + i] - mu;
        sq += dlt * dlt;
      }
    }
    const long double var = sq / count;
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(1.0L / std::sqrt(var + static_cast<long double>(p.epsilon)));
    p.running_mean[c] = p.momentum * p.running_mean[c] + (T(1) - p.momentum) * static_cast<T>(mu);
    p.running_var[c] = p.momentum * p.running_var[c] + (T(1) - p.momentum) * static_cast<T>(var);
  }
  return normalize(x, p.gamma, p.beta, std::move(mean), std::move(inv_std), true);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  if (!(alpha >= T(0) && alpha < T(1))) throw ConfigError("leaky_relu: alpha must lie in [0, 1)");
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > T(0) ? xd[i] : alpha * xd[i];
  detail::record<T>("leaky_relu", {&x}, out, [x, out, alpha]() {
    auto g = out.grad();
    auto xd = x.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xd[i] > T(0) ? g[i] : alpha * g[i];
  });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xd = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_scalar(xd[i]);
  detail::record<T>("sigmoid", {&x}, out, [x, out]() {
    auto g = out.grad();
    auto y = out.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_5d(a, "concat_channels");
  require_5d(b, "concat_channels");
  if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2) || a.extent(3) != b.extent(3) ||
      a.extent(4) != b.extent(4)) {
    throw ShapeError("concat_channels: N/D/H/W mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = a.extent(0), ca = a.extent(1), cb = b.extent(1);
  const std::size_t plane = a.extent(2) * a.extent(3) * a.extent(4);
  Tensor<T> out(Shape{batch, ca + cb, a.extent(2), a.extent(3), a.extent(4)});
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(ad.begin() + n * ca * plane, ca * plane, o.begin() + n * (ca + cb) * plane);
    std::copy_n(bd.begin() + n * cb * plane, cb * plane, o.begin() + (n * (ca + cb) + ca) * plane);
  }
  detail::record<T>("concat_channels", {&a, &b}, out, [a, b, out, batch, ca, cb, plane]() {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < ca * plane; ++i) ga[n * ca * plane + i] += g[n * (ca + cb) * plane + i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < cb * plane; ++i)
          gb[n * cb * plane + i] += g[(n * (ca + cb) + ca) * plane + i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
  require_binary_target(logits, target, "bce_with_logits");
  auto z = logits.data();
  auto t = target.data();
  long double acc = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const long double zi = z[i];
    acc += std::max(zi, 0.0L) - zi * t[i] + std::log1p(std::exp(-std::fabs(zi)));
  }
  const std::size_t n = z.size();
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<long double>(n)));
  detail::record<T>("bce_with_logits", {&logits}, out, [logits, target, out, n]() {
    const T g = out.grad()[0] / static_cast<T>(n);
    auto z = logits.data();
    auto t = target.data();
    auto gz = logits.grad_buffer();
    for (std::size_t i = 0; i < z.size(); ++i) gz[i] += g * (sigmoid_scalar(z[i]) - t[i]);
  });
  return out;
}

template <typename T>
Tensor<T> soft_dice(const Tensor<T>& logits, const Tensor<T>& target, T smooth) {
  require_binary_target(logits, target, "soft_dice");
  auto z = logits.data();
  auto t = target.data();
  std::vector<T> p(z.size());
  long double inter = 0.0L, sum_p = 0.0L, sum_t = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = sigmoid_scalar(z[i]);
    inter += static_cast<long double>(p[i]) * t[i];
    sum_p += p[i];
    sum_t += t[i];
  }
  const long double numer = 2.0L * inter + smooth;
  const long double denom = sum_p + sum_t + smooth;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(1.0L - numer / denom));
  detail::record<T>("soft_dice", {&logits}, out, [logits, target, out, p = std::move(p), numer, denom]() {
    const long double g = out.grad()[0];
    auto t = target.data();
    auto gz = logits.grad_buffer();
    const long double d2 = denom * denom;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const long double dp = -(2.0L * t[i] * denom - numer) / d2;
      gz[i] += static_cast<T>(g * dp * p[i] * (1.0L - p[i]));
    }
  });
  return out;
}

template <typename T>
Tensor<T> loss(LossKind kind, const Tensor<T>& logits, const Tensor<T>& target) {
  return kind == LossKind::soft_dice ? soft_dice(logits, target) : bce_with_logits(logits, target);
}

#define VOLSEG_INSTANTIATE(T)                                                          \
  template struct BatchNormParams<T>;                                                  \
  template T sigmoid_scalar<T>(T);                                                     \
  template Tensor<T> maxpool3d<T>(const Tensor<T>&);                                   \
  template Tensor<T> batchnorm3d<T>(const Tensor<T>&, BatchNormParams<T>&);            \
  template Tensor<T> batchnorm3d_infer<T>(const Tensor<T>&, const BatchNormParams<T>&); \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                               \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                     \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> bce_with_logits<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> soft_dice<T>(const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> loss<T>(LossKind, const Tensor<T>&, const Tensor<T>&);

VOLSEG_INSTANTIATE(float)
VOLSEG_INSTANTIATE(double)
#undef VOLSEG_INSTANTIATE

}  // namespace volseg
