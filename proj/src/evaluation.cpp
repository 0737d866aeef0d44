#include "hitdvae/evaluation.hpp"

#include <stdexcept>
#include <string>

#include "hitdvae/parallel.hpp"
#include "hitdvae/trainer.hpp"

namespace hitdvae {

namespace {

void check_clip_length(const Corpus& corpus, std::size_t clip, std::size_t frames) {
  if (clip >= corpus.clips.size()) throw std::invalid_argument("evaluation: clip " + std::to_string(clip) + " out of range");
  if (corpus.clips[clip].poses.frames < frames)
    throw std::invalid_argument("evaluation: clip " + std::to_string(clip) + " has " +
                                std::to_string(corpus.clips[clip].poses.frames) + " frames, need " + std::to_string(frames));
}

}  // namespace

PoseSequence observed_prefix(const Corpus& corpus, std::size_t clip, std::size_t observed) {
  check_clip_length(corpus, clip, observed);
  PoseSequence p = corpus.clips[clip].poses.slice(0, observed);
  p.observed = observed;
  return p;
}

std::vector<std::vector<PoseSequence>> generate_for_clips(const HitDvae& model, const Corpus& corpus,
                                                          const std::vector<std::size_t>& clips,
                                                          const EvalOptions& options, std::uint64_t seed) {
  GenerateOptions g;
  g.horizon = options.horizon;
  g.samples = options.mean_mode ? 1 : options.samples;
  std::vector<std::vector<PoseSequence>> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const PoseSequence obs = observed_prefix(corpus, clips[i], options.observed);
    if (options.mean_mode)
      out.push_back(generate(model, obs, g, ZeroNoise()));
    else
      out.push_back(generate(model, obs, g, derive_seed(seed, i)));
  }
  return out;
}

std::vector<EvalCase> make_cases(const Corpus& corpus, const std::vector<std::size_t>& clips,
                                 const std::vector<std::vector<PoseSequence>>& generations,
                                 const std::vector<std::size_t>& pool, const EvalOptions& options) {
  if (clips.size() != generations.size())
    throw std::invalid_argument("evaluation: " + std::to_string(generations.size()) + " generation sets for " +
                                std::to_string(clips.size()) + " clips");
  const std::size_t O = options.observed, T = O + options.horizon;
  for (std::size_t c : pool) check_clip_length(corpus, c, T);
  std::vector<WindowRef> candidates;
  for (std::size_t c : pool) candidates.push_back({c, 0});

  std::vector<EvalCase> cases(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    check_clip_length(corpus, clips[i], T);
    const PoseSequence& seq = corpus.clips[clips[i]].poses;
    EvalCase& c = cases[i];
    c.label = corpus.clips[clips[i]].label;
    c.gt = future_of(seq.slice(0, T), O);
    for (const auto& g : generations[i]) {
      if (g.frames != T || g.joints != seq.joints)
        throw ShapeError("evaluation: generation for clip " + std::to_string(clips[i]) + " is " +
                         std::to_string(g.frames) + " frames, expected " + std::to_string(T));
      c.samples.push_back(future_of(g, O));
    }
    for (const auto& ref : select_pseudo_gt(corpus, candidates, seq.frame(O - 1), O, std::nullopt, options.mm_radius,
                                            options.mm_max))
      c.pseudo.push_back(future_of(corpus.clips[ref.clip].poses.slice(ref.start, ref.start + T), O));
  }
  return cases;
}

LabeledSequences future_segments(const Corpus& corpus, const std::vector<std::size_t>& clips, std::size_t observed,
                                 std::size_t horizon) {
  LabeledSequences d;
  for (std::size_t c : clips) {
    check_clip_length(corpus, c, observed + horizon);
    d.sequences.push_back(future_of(corpus.clips[c].poses.slice(0, observed + horizon), observed));
    d.labels.push_back(corpus.clips[c].label);
  }
  return d;
}

std::vector<EvalCase> shuffled_baseline(const std::vector<EvalCase>& cases, std::uint64_t seed) {
  std::vector<EvalCase> out = cases;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t k = 0; k < out[i].samples.size(); ++k) {
      Rng rng(derive_seed(seed, i, k));
      out[i].samples[k] = shuffled_frames(out[i].gt, rng);
    }
  return out;
}

}  // namespace hitdvae
