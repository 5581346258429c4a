#include "volseg/gradcheck.hpp"

#include <cmath>
#include <string>

namespace volseg {

namespace {

double projected(const Tensor<double>& out, const Tensor<double>& projection) {
  long double acc = 0.0L;
  auto o = out.data();
  auto r = projection.data();
  for (std::size_t i = 0; i < o.size(); ++i) acc += static_cast<long double>(o[i]) * r[i];
  return static_cast<double>(acc);
}

}  // namespace

double grad_check(const GradCheckFn& op, std::vector<Tensor<double>> inputs, double epsilon,
                  std::uint64_t projection_seed) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw ConfigError("grad_check: epsilon must lie in [1e-6, 1e-3], got " +
                      std::to_string(epsilon));
  }
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.clear_grad();
  }

  Tape<double> tape;
  Tensor<double> projection;
  {
    auto recording = tape.record();
    Tensor<double> out = op(inputs);
    require_finite<double>(out.data(), "grad_check forward");
    projection = randn<double>(out.shape(), projection_seed, 1.0);
    Tensor<double> loss = sum(mul(out, projection));
    tape.backward(loss);
  }

  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    auto g = in.grad_buffer();
    analytic.emplace_back(g.begin(), g.end());
    require_finite<double>(g, "grad_check analytic gradient");
  }
  tape.reset();

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double plus = projected(op(inputs), projection);
      values[i] = saved - epsilon;
      const double minus = projected(op(inputs), projection);
      values[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite value while perturbing input " +
                           std::to_string(k) + " element " + std::to_string(i));
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  for (auto& in : inputs) in.clear_grad();
  return worst;
}

}  // namespace volseg
