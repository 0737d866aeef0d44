#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hitdvae/tensor.hpp"

namespace hitdvae {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

struct AdamState {
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(double lr) : learning_rate(lr) {}
};

/// One bias-corrected Adam update over `params`, then zeroes their gradients.
/// Throws if any parameter is missing a gradient.
void adam_step(ParamList& params, AdamState& state);

void zero_grads(ParamList& params);

double grad_global_norm(const ParamList& params);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParamList& params, double max_norm);

std::size_t parameter_count(const ParamList& params);

}  // namespace hitdvae
