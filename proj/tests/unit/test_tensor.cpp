#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <cmath>
#include <set>

#include "volseg/gradcheck.hpp"
#include "volseg/nn.hpp"
#include "volseg/rng.hpp"
#include "volseg/tensor.hpp"

using namespace volseg;

namespace {

Tensor<double> make(const Shape& s, std::vector<double> v, bool rg = false) {
  return Tensor<double>(s, std::move(v), rg);
}

}  // namespace

TEST_CASE("randn with zero scale is all zeros") {
  auto t = randn<float>({4}, 7, 0.0f);
  for (float v : t.data()) CHECK(v == 0.0f);
}

TEST_CASE("randn is deterministic per seed") {
  const std::uint64_t seed = 0xC0FFEE;
  auto a = randn<float>({2, 3}, seed, 1.0f);
  auto b = randn<float>({2, 3}, seed, 1.0f);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  auto c = randn<float>({2, 3}, seed + 1, 1.0f);
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("randn large-sample moments") {
  auto t = randn<double>({10000}, 1, 1.0);
  double sum = 0, sq = 0;
  for (double v : t.data()) sum += v;
  const double mean = sum / 10000.0;
  for (double v : t.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / 9999.0);
  CHECK(mean > -0.05);
  CHECK(mean < 0.05);
  CHECK(sd > 0.95);
  CHECK(sd < 1.05);
}

TEST_CASE("randn rejects zero extents") {
  CHECK_THROWS_AS(randn<float>({2, 0}, 1, 1.0f), ShapeError);
}

TEST_CASE("tensor construction checks data length") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("elementwise identities") {
  auto x = randn<double>({3, 4}, 11, 1.0);
  auto z = Tensor<double>(x.shape());
  auto o = Tensor<double>::full(x.shape(), 1.0);
  auto s = add(x, z);
  auto p = mul(x, o);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(s.data()[i] == x.data()[i]);
    CHECK(p.data()[i] == x.data()[i]);
  }
  auto sc = scale(make({3}, {1, 2, 3}), 2.0);
  CHECK(sc.data()[0] == 2.0);
  CHECK(sc.data()[1] == 4.0);
  CHECK(sc.data()[2] == 6.0);
  CHECK_THROWS_AS(add(x, Tensor<double>(Shape{4, 3})), ShapeError);
  CHECK_THROWS_AS(mul(x, Tensor<double>(Shape{12})), ShapeError);
}

TEST_CASE("reductions") {
  CHECK(sum(Tensor<float>::full({2, 2, 2}, 1.0f)).item() == 8.0f);
  CHECK(mean(Tensor<double>::full({5, 3}, 2.5)).item() == doctest::Approx(2.5).epsilon(1e-15));
  auto tenth = Tensor<double>::full({10}, 0.1);
  CHECK(std::abs(sum(tenth).item() - 1.0) < 1e-9);
  CHECK_THROWS_AS(sum(Tensor<float>(Shape{0})), ShapeError);
}

TEST_CASE("backward of sum yields exact ones") {
  auto x = randn<float>({2, 3, 4}, 5, 1.0f).set_requires_grad(true);
  Tape<float> tape;
  Tensor<float> loss;
  {
    auto rec = tape.record();
    loss = sum(x);
  }
  tape.backward(loss);
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward through scale is linear") {
  auto x = randn<double>({6}, 9, 1.0).set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = sum(scale(x, 3.0));
  }
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 3.0);
}

TEST_CASE("backward of sum(x*x) matches hand chain rule and finite differences") {
  auto x = make({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));

  // Central differences of f(x) = x0^2 + x1^2.
  auto f = [](double a, double b) { return a * a + b * b; };
  const double h = 1e-6;
  CHECK((f(1 + h, 2) - f(1 - h, 2)) / (2 * h) == doctest::Approx(x.grad()[0]).epsilon(1e-8));
  CHECK((f(1, 2 + h) - f(1, 2 - h)) / (2 * h) == doctest::Approx(x.grad()[1]).epsilon(1e-8));
}

TEST_CASE("gradients accumulate over repeated uses") {
  auto x = randn<float>({3, 3}, 2, 1.0f).set_requires_grad(true);
  Tape<float> tape;
  Tensor<float> loss;
  {
    auto rec = tape.record();
    loss = add(sum(x), sum(x));
  }
  tape.backward(loss);
  for (float g : x.grad()) CHECK(g == 2.0f);
}

TEST_CASE("tape misuse is reported") {
  auto x = randn<float>({3}, 2, 1.0f).set_requires_grad(true);
  Tape<float> tape;
  Tensor<float> vec, loss;
  {
    auto rec = tape.record();
    vec = scale(x, 2.0f);
    loss = sum(vec);
  }
  CHECK_THROWS_AS(tape.backward(vec), NumericError);  // non-scalar
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), NumericError);  // twice without reset
  tape.reset();
  CHECK_THROWS_AS(tape.backward(loss), NumericError);  // not on the (reset) tape
}

TEST_CASE("no recording without an active tape") {
  auto x = randn<float>({3}, 2, 1.0f).set_requires_grad(true);
  auto y = scale(x, 2.0f);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("tape nodes are topologically ordered") {
  auto x = randn<double>({1, 1, 2, 2, 2}, 3, 1.0).set_requires_grad(true);
  auto w = randn<double>({1, 1, 2, 2, 2}, 4, 1.0).set_requires_grad(true);
  Tape<double> tape;
  {
    auto rec = tape.record();
    auto h = sigmoid(mul(x, w));
    auto l = add(sum(h), mean(leaky_relu(add(h, x), 0.3)));
    (void)l;
  }
  std::set<std::uint64_t> produced{x.id(), w.id()};
  for (const auto& node : tape.nodes()) {
    for (auto in : node.inputs) CHECK(produced.count(in) == 1);
    CHECK(produced.insert(node.output).second);
  }
}

TEST_CASE("grad_check on a linear op is exact to rounding") {
  auto x = randn<double>({2, 3, 2}, 17, 1.0);
  const double err = grad_check([](const auto& in) { return scale(in[0], 2.0); }, {x});
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check sigmoid on [-3, 3]") {
  SplitMix64 rng(99);
  Tensor<double> x(Shape{40});
  for (auto& v : x.data()) v = rng.uniform(-3.0, 3.0);
  CHECK(grad_check([](const auto& in) { return sigmoid(in[0]); }, {x}, 1e-5) < 1e-6);
}

TEST_CASE("grad_check conv3d over all input and kernel elements") {
  auto x = randn<double>({1, 1, 4, 4, 4}, 1, 1.0);
  auto w = randn<double>({1, 1, 3, 3, 3}, 2, 0.5);
  auto b = randn<double>({1}, 3, 1.0);
  const double err = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        ConvParams<double> p;
        p.in_channels = 1;
        p.out_channels = 1;
        p.weight = in[1];
        p.bias = in[2];
        return conv3d(in[0], p);
      },
      {x, w, b});
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check validates epsilon and restores inputs") {
  auto x = randn<double>({4}, 5, 1.0);
  const std::vector<double> before(x.data().begin(), x.data().end());
  CHECK_THROWS_AS(grad_check([](const auto& in) { return sigmoid(in[0]); }, {x}, 1e-2), ConfigError);
  CHECK_THROWS_AS(grad_check([](const auto& in) { return sigmoid(in[0]); }, {x}, 1e-8), ConfigError);
  grad_check([](const auto& in) { return sigmoid(in[0]); }, {x});
  CHECK(std::equal(before.begin(), before.end(), x.data().begin()));
}

TEST_CASE("grad_check reports non-finite values") {
  auto x = make({2}, {1.0, 2.0});
  auto blowup = [](const std::vector<Tensor<double>>& in) {
    Tensor<double> out(in[0].shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::log(in[0].data()[i] - 1.0);
    return out;
  };
  CHECK_THROWS_AS(grad_check(blowup, {x}), NumericError);
}

TEST_CASE("elementwise ops pass grad_check on five random shapes") {
  const std::vector<Shape> shapes = {{1}, {3, 2}, {2, 2, 2}, {5}, {1, 2, 1, 3, 2}};
  std::uint64_t seed = 100;
  for (const auto& s : shapes) {
    auto a = randn<double>(s, seed++, 1.0);
    auto b = randn<double>(s, seed++, 1.0);
    CHECK(grad_check([](const auto& in) { return mul(in[0], in[1]); }, {a, b}) < 1e-4);
    CHECK(grad_check([](const auto& in) { return add(in[0], in[1]); }, {a, b}) < 1e-4);
    CHECK(grad_check([](const auto& in) { return mean(in[0]); }, {a}) < 1e-4);
  }
}

TEST_CASE("ops on finite inputs stay finite") {
  auto x = randn<float>({1, 2, 4, 4, 4}, 8, 30.0f);
  auto y = sigmoid(leaky_relu(add(x, scale(x, 1e3f)), 0.3f));
  CHECK_NOTHROW(require_finite<float>(y.data(), "chain"));
}
