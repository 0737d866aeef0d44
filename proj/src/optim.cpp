#include "hitdvae/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hitdvae {

void adam_step(ParamList& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: parameter '" + p.name + "' has no gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto values = params[k].tensor.mutable_values();
    const auto g = params[k].tensor.grad();
    if (m.size() != values.size()) throw std::invalid_argument("adam_step: moment shape mismatch for " + params[k].name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    params[k].tensor.zero_grad();
  }
}

void zero_grads(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double grad_global_norm(const ParamList& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParamList& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params) p.tensor.scale_grad(f);
  }
  return norm;
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace hitdvae
