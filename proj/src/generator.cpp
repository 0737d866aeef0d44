#include "hitdvae/generator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hitdvae/parallel.hpp"
#include "hitdvae/random.hpp"

namespace hitdvae {

std::vector<double> SeededNoise::draw(std::size_t sample, NoiseSite site, std::size_t frame, std::size_t width) const {
  Rng rng(derive_seed(derive_seed(seed_, sample), static_cast<std::uint64_t>(site), frame));
  return rng.normal_vector(width);
}

namespace {

Tensor sample_from(const DiagGaussian& g, std::vector<double> eps) {
  return reparameterize(g, Tensor::from(g.mean.shape(), std::move(eps)));
}

PoseSequence rollout(const HitDvae& model, const PoseSequence& observed, const GenerateOptions& options,
                     const NoiseSource& noise, std::size_t k) {
  const ModelConfig& cfg = model.config();
  const std::size_t O = observed.frames, G = options.horizon, fw = observed.frame_width();
  const Tensor obs = observed.tensor();
  const DiagGaussian qw = model.infer_w(slice(obs, 0, O - cfg.w_window, O));
  const Tensor w = sample_from(qw, noise.draw(k, NoiseSite::W, 0, cfg.d_w));
  const DiagGaussian qz = model.infer_z(obs, w);
  const Tensor z_obs = options.posterior_mean ? qz.mean : sample_from(qz, noise.draw(k, NoiseSite::PosteriorZ, 0, O * cfg.d_z));

  PoseSequence out(O + G, observed.joints, observed.observed);
  out.observed = O;
  std::copy(observed.coords.begin(), observed.coords.end(), out.coords.begin());
  auto state = model.start_decoder(w, options.context_cap);
  for (std::size_t t = 0; t < O; ++t) model.push_frame(state, row(reshape(obs, {O, fw}), t), row(z_obs, t));
  for (std::size_t t = O; t < O + G; ++t) {
    const Tensor z = sample_from(model.next_prior(state), noise.draw(k, NoiseSite::PriorZ, t, cfg.d_z));
    const Tensor x = model.next_emission(state, z);
    for (std::size_t i = 0; i < fw; ++i) {
      if (!std::isfinite(x[i])) {
        throw NumericError("generation: sample " + std::to_string(k) + " produced a non-finite pose at frame " +
                           std::to_string(t) + "; rollout aborted");
      }
    }
    std::copy(x.values().begin(), x.values().end(), out.coords.begin() + static_cast<std::ptrdiff_t>(t * fw));
    if (t + 1 < O + G) model.push_frame(state, x, z);
  }
  return out;
}

}  // namespace

std::vector<PoseSequence> generate(const HitDvae& model, const PoseSequence& observed, const GenerateOptions& options,
                                   const NoiseSource& noise) {
  const ModelConfig& cfg = model.config();
  const std::size_t O = observed.frames;
  if (observed.joints != cfg.joints) throw ShapeError("generation: observation joints do not match the model");
  if (O < 2 || O < cfg.w_window) {
    throw std::invalid_argument("generation: " + std::to_string(O) + " observed frames, need at least " +
                                std::to_string(std::max<std::size_t>(2, cfg.w_window)));
  }
  if (options.horizon == 0) throw std::invalid_argument("generation: horizon must be positive");
  if (options.samples == 0) throw std::invalid_argument("generation: sample count must be positive");
  observed.validate();
  NoGradGuard guard;
  std::vector<PoseSequence> out(options.samples);
  std::vector<std::string> errors(options.samples);
  parallel_for(options.samples, [&](std::size_t k) {
    NoGradGuard inner;
    try {
      out[k] = rollout(model, observed, options, noise, k);
    } catch (const NumericError& e) {
      errors[k] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw NumericError(e);
  return out;
}

std::vector<PoseSequence> generate(const HitDvae& model, const PoseSequence& observed, const GenerateOptions& options,
                                   std::uint64_t seed) {
  return generate(model, observed, options, SeededNoise(seed));
}

PoseSequence generate_mean(const HitDvae& model, const PoseSequence& observed, std::size_t horizon,
                           std::size_t context_cap) {
  GenerateOptions o;
  o.horizon = horizon;
  o.samples = 1;
  o.context_cap = context_cap;
  return generate(model, observed, o, ZeroNoise())[0];
}

}  // namespace hitdvae
