#include <cmath>

#include "volseg/gradcheck.hpp"
#include "volseg/nn.hpp"
#include "volseg/rng.hpp"
#include "volseg/unet.hpp"

namespace volseg {

namespace {

using T = double;

struct Cases {
  SplitMix64 rng;

  Tensor<T> random(const Shape& shape, double scale = 1.0) { return randn<T>(shape, rng.next(), scale); }

  // Values bounded away from zero, for ops with a kink there.
  Tensor<T> away_from_zero(const Shape& shape) {
    Tensor<T> t(shape);
    for (auto& v : t.data()) {
      const double mag = 0.05 + std::abs(rng.normal());
      v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
  }

  // Distinct values at least 0.01 apart, so no pooling block has a near tie.
  Tensor<T> distinct(const Shape& shape) {
    Tensor<T> t(shape);
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.01 * static_cast<double>(i);
    for (std::size_t i = d.size(); i > 1; --i) {
      std::swap(d[i - 1], d[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }
    return t;
  }

  Tensor<T> binary(const Shape& shape) {
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return t;
  }
};

struct ConvCase {
  Shape input;
  std::size_t out_channels;
  Kernel3 kernel;
  std::size_t stride;
  Padding padding;
};

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Cases gen{SplitMix64(seed)};
  std::vector<GradCheckResult> results;
  auto run = [&results](const std::string& name, const std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>>& cases) {
    GradCheckResult r{name, 0.0, 0};
    for (const auto& [fn, inputs] : cases) {
      r.worst_error = std::max(r.worst_error, grad_check(fn, inputs));
      ++r.cases;
    }
    results.push_back(r);
  };

  const std::vector<Shape> shapes = {{3}, {2, 3}, {1, 2, 3, 2, 2}, {4, 1, 2}, {1, 1, 2, 2, 2}};
  {
    std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>> add_cases, mul_cases, scale_cases, sum_cases,
        mean_cases, lrelu_cases, sig_cases;
    for (const auto& s : shapes) {
      add_cases.push_back({[](const auto& in) { return add(in[0], in[1]); }, {gen.random(s), gen.random(s)}});
      mul_cases.push_back({[](const auto& in) { return mul(in[0], in[1]); }, {gen.random(s), gen.random(s)}});
      scale_cases.push_back({[](const auto& in) { return scale(in[0], 2.0); }, {gen.random(s)}});
      sum_cases.push_back({[](const auto& in) { return sum(in[0]); }, {gen.random(s)}});
      mean_cases.push_back({[](const auto& in) { return mean(in[0]); }, {gen.random(s)}});
      lrelu_cases.push_back({[](const auto& in) { return leaky_relu(in[0], 0.3); }, {gen.away_from_zero(s)}});
      sig_cases.push_back({[](const auto& in) { return sigmoid(in[0]); }, {gen.random(s, 2.0)}});
    }
    run("add", add_cases);
    run("mul", mul_cases);
    run("scale", scale_cases);
    run("sum", sum_cases);
    run("mean", mean_cases);
    run("leaky_relu", lrelu_cases);
    run("sigmoid", sig_cases);
  }

  {
    const std::vector<ConvCase> conv_cases = {
        {{1, 1, 4, 4, 4}, 1, {3, 3, 3}, 1, Padding::same},
        {{1, 2, 3, 4, 5}, 3, {3, 3, 3}, 1, Padding::same},
        {{2, 1, 4, 3, 3}, 2, {1, 1, 1}, 1, Padding::same},
        {{1, 2, 5, 5, 5}, 2, {3, 3, 3}, 1, Padding::valid},
        {{1, 1, 5, 6, 4}, 2, {3, 3, 3}, 2, Padding::same},
    };
    std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>> cases;
    for (const auto& c : conv_cases) {
      const std::size_t in_c = c.input[1];
      const Shape wshape{c.out_channels, in_c, c.kernel[0], c.kernel[1], c.kernel[2]};
      GradCheckFn fn = [c, in_c](const std::vector<Tensor<T>>& in) {
        ConvParams<T> p;
        p.in_channels = in_c;
        p.out_channels = c.out_channels;
        p.kernel = c.kernel;
        p.stride = c.stride;
        p.padding = c.padding;
        p.weight = in[1];
        p.bias = in[2];
        return conv3d(in[0], p);
      };
      cases.push_back({fn, {gen.random(c.input), gen.random(wshape, 0.5), gen.random({c.out_channels})}});
    }
    run("conv3d", cases);
  }

  {
    const std::vector<std::pair<Shape, std::size_t>> up_cases = {
        {{1, 1, 1, 1, 1}, 1}, {{1, 1, 2, 2, 2}, 1}, {{1, 2, 2, 1, 3}, 3}, {{2, 3, 1, 2, 2}, 2}, {{1, 4, 2, 2, 1}, 2}};
    std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>> cases;
    for (const auto& [shape, out_c] : up_cases) {
      const std::size_t in_c = shape[1];
      GradCheckFn fn = [in_c, out_c](const std::vector<Tensor<T>>& in) {
        ConvParams<T> p;
        p.in_channels = in_c;
        p.out_channels = out_c;
        p.kernel = {2, 2, 2};
        p.stride = 2;
        p.padding = Padding::valid;
        p.weight = in[1];
        p.bias = in[2];
        return conv_transpose3d(in[0], p);
      };
      cases.push_back({fn, {gen.random(shape), gen.random({out_c, in_c, 2, 2, 2}), gen.random({out_c})}});
    }
    run("conv_transpose3d", cases);
  }

  const std::vector<Shape> volumes = {
      {1, 1, 2, 2, 2}, {1, 2, 4, 4, 4}, {2, 1, 2, 4, 2}, {1, 3, 2, 2, 4}, {1, 1, 4, 2, 6}};
  {
    std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>> pool, norm, cat, bce, dice;
    for (const auto& s : volumes) {
      pool.push_back({[](const auto& in) { return maxpool3d(in[0]); }, {gen.distinct(s)}});

      const std::size_t c = s[1];
      norm.push_back({[c](const std::vector<Tensor<T>>& in) {
                        auto p = BatchNormParams<T>::make(c);
                        p.gamma = in[1];
                        p.beta = in[2];
                        return batchnorm3d(in[0], p);
                      },
                      {gen.random(s), gen.random({c}), gen.random({c})}});

      Shape other = s;
      other[1] = s[1] + 1;
      cat.push_back({[](const auto& in) { return concat_channels(in[0], in[1]); }, {gen.random(s), gen.random(other)}});

      const Tensor<T> target = gen.binary(s);
      bce.push_back({[target](const auto& in) { return bce_with_logits(in[0], target); }, {gen.random(s, 2.0)}});
      dice.push_back({[target](const auto& in) { return soft_dice(in[0], target); }, {gen.random(s, 2.0)}});
    }
    run("maxpool3d", pool);
    run("batchnorm3d", norm);
    run("concat_channels", cat);
    run("bce_with_logits", bce);
    run("soft_dice", dice);
  }

  {
    UNetConfig cfg;
    cfg.levels = 2;
    cfg.channel_schedule = {2, 4};
    std::vector<std::pair<GradCheckFn, std::vector<Tensor<T>>>> cases;
    for (int k = 0; k < 5; ++k) {
      auto model = std::make_shared<UNet<T>>(cfg, gen.rng.next());
      std::vector<Tensor<T>> inputs{gen.random({1, 1, 4, 4, 4})};
      for (auto& [name, t] : model->named_parameters()) inputs.push_back(t);
      GradCheckFn fn = [model](const std::vector<Tensor<T>>& in) { return model->forward(in[0]); };
      cases.push_back({fn, inputs});
    }
    run("unet(levels=2)", cases);
  }
  return results;
}

}  // namespace volseg
