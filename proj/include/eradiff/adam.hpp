#pragma once

#include "eradiff/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace eradiff {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter tensor.
template <typename Scalar>
struct AdamState {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  AdamParams params;
  std::int64_t step = 0;
  std::vector<Array> m;
  std::vector<Array> v;

  AdamState() = default;
  AdamState(const std::vector<Tensor<Scalar>>& tensors, AdamParams p) : params(p) {
    for (const auto& t : tensors) {
      m.push_back(Array::Zero(t.size()));
      v.push_back(Array::Zero(t.size()));
    }
  }
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// A parameter without a grad is treated as having a zero gradient. Throws
/// before touching anything if any gradient is non-finite.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter count does not match optimizer state");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.m[i].size())
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    if (params[i].has_grad() && !params[i].grad().isFinite().all())
      throw std::domain_error("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  ++state.step;
  const auto& p = state.params;
  const Scalar b1 = static_cast<Scalar>(p.beta1), b2 = static_cast<Scalar>(p.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(p.beta1, static_cast<double>(state.step)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(p.beta2, static_cast<double>(state.step)));
  const Scalar lr = static_cast<Scalar>(p.lr), eps = static_cast<Scalar>(p.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (params[i].has_grad()) {
      const auto& g = params[i].grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    } else {
      m *= b1;
      v *= b2;
    }
    params[i].mutable_values() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

}  // namespace eradiff
