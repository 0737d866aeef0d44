#include "hitdvae/pose.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hitdvae {

PoseSequence::PoseSequence(std::size_t frames_, std::size_t joints_, std::size_t observed_)
    : PoseSequence(frames_, joints_, std::vector<double>(frames_ * joints_ * 3, 0.0), observed_) {}

PoseSequence::PoseSequence(std::size_t frames_, std::size_t joints_, std::vector<double> coords_, std::size_t observed_)
    : frames(frames_), joints(joints_), observed(observed_), coords(std::move(coords_)) {
  if (coords.size() != frames * joints * 3) {
    throw ShapeError("pose sequence: " + std::to_string(coords.size()) + " values for " + std::to_string(frames) +
                     " frames x " + std::to_string(joints) + " joints x 3");
  }
  if (observed > frames) throw std::invalid_argument("pose sequence: observed prefix longer than the sequence");
}

std::span<const double> PoseSequence::frame(std::size_t t) const {
  return std::span<const double>(coords).subspan(t * frame_width(), frame_width());
}

std::span<double> PoseSequence::frame(std::size_t t) {
  return std::span<double>(coords).subspan(t * frame_width(), frame_width());
}

PoseSequence PoseSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frames) throw std::out_of_range("pose sequence: bad frame range");
  const std::size_t w = frame_width();
  std::vector<double> v(coords.begin() + static_cast<std::ptrdiff_t>(begin * w),
                        coords.begin() + static_cast<std::ptrdiff_t>(end * w));
  const std::size_t obs = observed > begin ? std::min(observed, end) - begin : 0;
  return PoseSequence(end - begin, joints, std::move(v), obs);
}

Tensor PoseSequence::tensor() const { return Tensor::from({frames, joints, 3}, coords); }

Tensor PoseSequence::flat_tensor() const { return Tensor::from({frames, frame_width()}, coords); }

void PoseSequence::validate() const {
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j)
      for (std::size_t a = 0; a < 3; ++a)
        if (!std::isfinite(at(t, j, a))) {
          throw NumericError("pose sequence: non-finite coordinate at frame " + std::to_string(t) + ", joint " +
                             std::to_string(j));
        }
    if (joints > 0 && (at(t, 0, 0) != 0.0 || at(t, 0, 1) != 0.0 || at(t, 0, 2) != 0.0)) {
      throw std::invalid_argument("pose sequence: root joint not at the origin in frame " + std::to_string(t));
    }
  }
}

DiagGaussian DiagGaussian::row(std::size_t r) const { return {hitdvae::row(mean, r), hitdvae::row(logvar, r)}; }

Tensor reparameterize(const DiagGaussian& g, const Tensor& noise) {
  if (noise.shape() != g.mean.shape()) {
    throw ShapeError("reparameterize: noise " + shape_str(noise.shape()) + " vs mean " + shape_str(g.mean.shape()));
  }
  return add(g.mean, mul(exp(scale(g.logvar, 0.5)), noise));
}

Tensor gaussian_log_density(const Tensor& x, const DiagGaussian& g) {
  const double c = -0.5 * std::log(2.0 * std::numbers::pi) * static_cast<double>(g.width());
  const Tensor sq = div(square(sub(x, g.mean)), exp(g.logvar));
  return add_scalar(scale(sum(add(sq, g.logvar), 1, true), -0.5), c);
}

}  // namespace hitdvae
