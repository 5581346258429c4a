#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares tape gradients of `op` against central differences, over every
// element of every input. The op output is reduced to a scalar by a fixed
// random projection so that all output elements contribute.
//
// Returns max |analytic - numeric| / max(1, |analytic|). Inputs are restored
// to their original values on return.
double grad_check(const GradCheckFn& op, std::vector<Tensor<double>> inputs,
                  double epsilon = 1e-5, std::uint64_t projection_seed = 0x9a7c5eedULL);

struct GradCheckResult {
  std::string op;
  double worst_error = 0.0;
  std::size_t cases = 0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Every differentiable op (and a two-level U-Net) on at least five random
// shapes each, at 64-bit precision.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 2024);

}  // namespace volseg
