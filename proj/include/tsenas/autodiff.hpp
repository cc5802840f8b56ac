#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tsenas/ops.hpp"
#include "tsenas/tape.hpp"
#include "tsenas/tensor.hpp"

namespace tsenas::ad {

// Builds a scalar loss on the given tape from a flat parameter vector leaf.
using LossBuilder = std::function<Var<double>(Tape<double>&, Var<double>)>;

// Maps a flat parameter vector to the gradient of some loss.
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

// One forward plus one backward of `loss` at `params`.
ValueAndGrad value_and_grad(const LossBuilder& loss, std::span<const double> params);

GradientFn gradient_of(LossBuilder loss);

// Default finite-difference step: 1e-4 * (1 + max |theta_i|).
double default_hvp_epsilon(std::span<const double> params);

// Central-difference Hessian-vector product
//   (grad(theta + eps v) - grad(theta - eps v)) / (2 eps).
// The difference is taken along v / |v| and rescaled, which is the same
// quantity with better conditioned steps. A zero direction yields zeros.
std::vector<double> hvp(const GradientFn& gradient, std::span<const double> params,
                        std::span<const double> direction,
                        std::optional<double> epsilon = std::nullopt);

}  // namespace tsenas::ad
