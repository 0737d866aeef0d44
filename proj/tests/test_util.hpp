#pragma once

#include "hitdvae/json_util.hpp"
#include "hitdvae/model.hpp"
#include "hitdvae/random.hpp"
#include "hitdvae/tensor.hpp"

namespace testutil {

using namespace hitdvae;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Random root-centered sequence.
inline PoseSequence random_pose(std::size_t frames, std::size_t joints, Rng& rng, std::size_t observed = 0,
                                double spread = 0.5) {
  PoseSequence p(frames, joints, observed);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 1; j < joints; ++j)
      for (std::size_t a = 0; a < 3; ++a) p.at(t, j, a) = rng.uniform(-spread, spread);
  return p;
}

/// The tiny configuration used for finite-difference checks.
inline ModelConfig micro_config() { return ModelConfig::micro(); }

inline Tensor copy_of(const Tensor& t) { return Tensor::from(t.shape(), {t.values().begin(), t.values().end()}); }

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace testutil
