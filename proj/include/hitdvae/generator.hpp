#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hitdvae/model.hpp"
#include "hitdvae/pose.hpp"

namespace hitdvae {

enum class NoiseSite : std::uint64_t { W = 0, PosteriorZ = 1, PriorZ = 2 };

/// Standard-normal noise addressed by (sample, site, frame), so a draw never depends on
/// how many other draws happened before it.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual std::vector<double> draw(std::size_t sample, NoiseSite site, std::size_t frame, std::size_t width) const = 0;
};

class SeededNoise : public NoiseSource {
 public:
  explicit SeededNoise(std::uint64_t seed) : seed_(seed) {}
  std::vector<double> draw(std::size_t sample, NoiseSite site, std::size_t frame, std::size_t width) const override;

 private:
  std::uint64_t seed_;
};

class ZeroNoise : public NoiseSource {
 public:
  std::vector<double> draw(std::size_t, NoiseSite, std::size_t, std::size_t width) const override {
    return std::vector<double>(width, 0.0);
  }
};

struct GenerateOptions {
  std::size_t horizon = 1;          // G
  std::size_t samples = 1;          // K
  bool posterior_mean = false;      // seed the z history with posterior means instead of samples
  std::size_t context_cap = 0;      // 0 = attend over the whole growing sequence
};

/// K rollouts of O + G frames. The first O frames of every output are the observation,
/// bit for bit. w comes from the last w_window observed frames. Throws NumericError when a
/// generated pose is not finite.
std::vector<PoseSequence> generate(const HitDvae& model, const PoseSequence& observed, const GenerateOptions& options,
                                   const NoiseSource& noise);
std::vector<PoseSequence> generate(const HitDvae& model, const PoseSequence& observed, const GenerateOptions& options,
                                   std::uint64_t seed);
/// Deterministic rollout taking the mean at every stochastic node.
PoseSequence generate_mean(const HitDvae& model, const PoseSequence& observed, std::size_t horizon,
                           std::size_t context_cap = 0);

}  // namespace hitdvae
