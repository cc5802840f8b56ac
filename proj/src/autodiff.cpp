#include "tsenas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tsenas::ad {

ValueAndGrad value_and_grad(const LossBuilder& loss, std::span<const double> params) {
  Tape<double> tape;
  Var<double> theta = tape.parameter(
      "theta", Tensor(Shape{params.size()}, std::vector<double>(params.begin(), params.end())));
  Var<double> out = loss(tape, theta);
  const double value = out.value().item();
  GradMap grads = tape.backward(out);
  const auto g = grads.at("theta").values();
  return {value, std::vector<double>(g.begin(), g.end())};
}

GradientFn gradient_of(LossBuilder loss) {
  return [loss = std::move(loss)](std::span<const double> params) {
    return value_and_grad(loss, params).grad;
  };
}

double default_hvp_epsilon(std::span<const double> params) {
  double m = 0.0;
  for (double x : params) m = std::max(m, std::abs(x));
  return 1e-4 * (1.0 + m);
}

std::vector<double> hvp(const GradientFn& gradient, std::span<const double> params,
                        std::span<const double> direction, std::optional<double> epsilon) {
  if (direction.empty()) throw ShapeError("hvp: zero-length direction");
  if (direction.size() != params.size()) {
    throw ShapeError("hvp: direction has " + std::to_string(direction.size()) +
                     " entries, parameters have " + std::to_string(params.size()));
  }
  const double eps = epsilon.value_or(default_hvp_epsilon(params));
  if (!(eps > 0.0)) throw Error("hvp: epsilon must be positive");

  double norm = 0.0;
  for (double v : direction) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<double> result(params.size(), 0.0);
  if (norm == 0.0) return result;

  std::vector<double> plus(params.begin(), params.end());
  std::vector<double> minus(params.begin(), params.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double step = eps * direction[i] / norm;
    plus[i] += step;
    minus[i] -= step;
  }
  const std::vector<double> gp = gradient(plus);
  const std::vector<double> gm = gradient(minus);
  if (gp.size() != params.size() || gm.size() != params.size()) {
    throw ShapeError("hvp: gradient closure returned the wrong dimension");
  }
  for (std::size_t i = 0; i < result.size(); ++i) {
    result[i] = (gp[i] - gm[i]) / (2.0 * eps) * norm;
    if (!std::isfinite(result[i])) throw NumericError("hvp: non-finite result");
  }
  return result;
}

}  // namespace tsenas::ad
