#pragma once

#include <cstddef>
#include <functional>

#include "hitdvae/optim.hpp"
#include "hitdvae/tensor.hpp"

namespace hitdvae {

struct GradCheckReport {
  /// max over coordinates of |analytic - central difference| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates = 0;
  bool finite = true;
  /// First coordinate whose analytic or numeric derivative was not finite.
  std::size_t nonfinite_coordinate = 0;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

/// Compares the reverse-mode gradient of scalar `f` at `point` with central
/// differences of half-width `step`.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step);

/// Same comparison over every coordinate of every parameter in `params`.
/// `f` must rebuild its graph from the current parameter values on each call.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, ParamList& params, double step);

}  // namespace hitdvae
