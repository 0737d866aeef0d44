#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hitdvae/tensor.hpp"

namespace hitdvae {

/// T x J x 3 root-centered joint coordinates (meters), with an observed prefix of O frames.
struct PoseSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t observed = 0;
  std::vector<double> coords;

  PoseSequence() = default;
  PoseSequence(std::size_t frames, std::size_t joints, std::size_t observed = 0);
  PoseSequence(std::size_t frames, std::size_t joints, std::vector<double> coords, std::size_t observed = 0);

  std::size_t frame_width() const { return joints * 3; }
  std::size_t generated() const { return frames - observed; }
  std::span<const double> frame(std::size_t t) const;
  std::span<double> frame(std::size_t t);
  double& at(std::size_t t, std::size_t j, std::size_t axis) { return coords[(t * joints + j) * 3 + axis]; }
  double at(std::size_t t, std::size_t j, std::size_t axis) const { return coords[(t * joints + j) * 3 + axis]; }

  /// Frames [begin, end) as a new sequence; the observed count is clipped to the range.
  PoseSequence slice(std::size_t begin, std::size_t end) const;
  /// T x J x 3 constant tensor.
  Tensor tensor() const;
  /// T x (J*3) constant tensor.
  Tensor flat_tensor() const;

  /// Throws on non-finite coordinates or a non-zero root joint.
  void validate() const;
  bool operator==(const PoseSequence&) const = default;
};

/// Mean and log-variance rows of a batch of diagonal Gaussians (N x D each).
struct DiagGaussian {
  Tensor mean;
  Tensor logvar;

  std::size_t width() const { return mean.dim(1); }
  std::size_t rows() const { return mean.dim(0); }
  /// Row r as a 1 x D Gaussian.
  DiagGaussian row(std::size_t r) const;
};

/// mean + exp(0.5 * logvar) * noise; noise is a constant of matching shape.
Tensor reparameterize(const DiagGaussian& g, const Tensor& noise);

/// Per-row log N(x; mean, diag(exp(logvar))), N x 1.
Tensor gaussian_log_density(const Tensor& x, const DiagGaussian& g);

}  // namespace hitdvae
