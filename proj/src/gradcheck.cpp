#include "hitdvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hitdvae {

namespace {

void record(GradCheckReport& report, std::size_t coordinate, double analytic, double numeric) {
  ++report.coordinates;
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    if (report.finite) report.nonfinite_coordinate = coordinate;
    report.finite = false;
    return;
  }
  const double err = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
  if (err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_coordinate = coordinate;
  }
}

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  Tensor x = Tensor::from(point.shape(), {point.values().begin(), point.values().end()}, true);
  ParamList params{{"x", x}};
  return grad_check_params([&] { return f(x); }, params, step);
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, ParamList& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  zero_grads(params);
  backward(f());
  GradCheckReport report;
  std::size_t coordinate = 0;
  for (auto& p : params) {
    auto values = p.tensor.mutable_values();
    const std::vector<double> analytic = p.tensor.has_grad()
                                             ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                             : std::vector<double>(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i, ++coordinate) {
      const double original = values[i];
      values[i] = original + step;
      const double up = evaluate(f);
      values[i] = original - step;
      const double down = evaluate(f);
      values[i] = original;
      record(report, coordinate, analytic[i], (up - down) / (2.0 * step));
    }
  }
  zero_grads(params);
  return report;
}

}  // namespace hitdvae
