#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hitdvae/generator.hpp"
#include "hitdvae/metrics.hpp"
#include "hitdvae/motion.hpp"

namespace hitdvae {

struct EvalOptions {
  std::size_t observed = 10;
  std::size_t horizon = 30;
  std::size_t samples = 50;
  bool mean_mode = false;
  double mm_radius = 0.1;
  std::size_t mm_max = 10;
  AdeNorm norm = AdeNorm::PerFrame;
};

/// Observed frames [0, O) of clip, with observed = O.
PoseSequence observed_prefix(const Corpus& corpus, std::size_t clip, std::size_t observed);

/// K generated sequences (observed prefix included) for every listed clip. Clip i uses seed derive_seed(seed, i).
std::vector<std::vector<PoseSequence>> generate_for_clips(const HitDvae& model, const Corpus& corpus,
                                                          const std::vector<std::size_t>& clips,
                                                          const EvalOptions& options, std::uint64_t seed);

/// Evaluation cases from full generated sequences. Pseudo ground truths come from windows of
/// `pool` clips (the clip itself included) whose last observed pose is near the clip's.
std::vector<EvalCase> make_cases(const Corpus& corpus, const std::vector<std::size_t>& clips,
                                 const std::vector<std::vector<PoseSequence>>& generations,
                                 const std::vector<std::size_t>& pool, const EvalOptions& options);

/// Future segments [O, O+G) of the listed clips, labelled by class.
LabeledSequences future_segments(const Corpus& corpus, const std::vector<std::size_t>& clips, std::size_t observed,
                                 std::size_t horizon);

/// Same cases with every generated sample replaced by frame-shuffled ground truth.
std::vector<EvalCase> shuffled_baseline(const std::vector<EvalCase>& cases, std::uint64_t seed);

}  // namespace hitdvae
