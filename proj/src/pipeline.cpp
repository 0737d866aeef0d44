#include "hitdvae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hitdvae/hash.hpp"
#include "hitdvae/json_util.hpp"

#ifndef HITDVAE_BUILD_ID
#define HITDVAE_BUILD_ID "unknown"
#endif

namespace hitdvae {

std::string build_id() { return HITDVAE_BUILD_ID; }

FlowArtifact run_flow_pretraining(const RunConfig& config, const Corpus& corpus, std::uint64_t seed) {
  const Tensor rows = flow_training_rows(corpus, corpus.train);
  Rng rng(derive_seed(seed, 0xF1));
  FlowArtifact a{CouplingFlow(rows.dim(1), config.flow.layers, config.flow.hidden, rng), {}};
  a.result = pretrain_flow(a.flow, rows, config.flow, seed);
  return a;
}

void save_flow(const FlowArtifact& flow, Checkpoint& ck) {
  flow.flow.save_to(ck, "flow.");
  nlohmann::ordered_json m;
  m["dim"] = flow.flow.dim();
  m["layers"] = flow.flow.layer_count();
  m["hidden"] = flow.flow.hidden();
  // NaN is not JSON
  m["calibration"] = std::isfinite(flow.result.calibration) ? nlohmann::ordered_json(flow.result.calibration) : nullptr;
  m["diverged"] = flow.result.diverged;
  ck.meta()["flow"] = m;
}

FlowArtifact load_flow(const Checkpoint& ck) {
  if (!ck.meta().contains("flow")) throw ConfigError("checkpoint: no flow metadata");
  const auto& m = ck.meta()["flow"];
  Rng rng(0);
  FlowArtifact a{CouplingFlow(m.at("dim").get<std::size_t>(), m.at("layers").get<std::size_t>(),
                              m.at("hidden").get<std::size_t>(), rng),
                 {}};
  a.flow.load_from(ck, "flow.");
  a.result.calibration = m.at("calibration").is_null() ? std::nan("") : m.at("calibration").get<double>();
  a.result.diverged = m.at("diverged").get<bool>();
  return a;
}

std::pair<std::vector<double>, std::vector<double>> pose_statistics(const Corpus& corpus) {
  if (corpus.train.empty()) throw std::invalid_argument("pose statistics: corpus has no training clips");
  const std::size_t W = corpus.clips[corpus.train[0]].poses.frame_width();
  std::vector<double> mean(W, 0.0), sd(W, 0.0);
  std::size_t n = 0;
  for (std::size_t c : corpus.train) {
    const PoseSequence& p = corpus.clips[c].poses;
    if (p.frame_width() != W) throw ShapeError("pose statistics: clip " + std::to_string(c) + " has a different joint count");
    for (std::size_t t = 0; t < p.frames; ++t, ++n) {
      const auto f = p.frame(t);
      for (std::size_t i = 0; i < W; ++i) mean[i] += f[i];
    }
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t c : corpus.train) {
    const PoseSequence& p = corpus.clips[c].poses;
    for (std::size_t t = 0; t < p.frames; ++t) {
      const auto f = p.frame(t);
      for (std::size_t i = 0; i < W; ++i) sd[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
    }
  }
  for (double& s : sd) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-3);
  return {mean, sd};
}

HitDvae new_model(const RunConfig& config, const Corpus& corpus, std::uint64_t seed) {
  HitDvae model(config.model, seed);
  if (config.model.normalize_poses) {
    const auto [shift, scale] = pose_statistics(corpus);
    model.set_pose_normalization(shift, scale);
  }
  return model;
}

void run_training(Trainer& trainer, const EpochCallback& on_epoch) {
  while (trainer.epoch() < trainer.schedule().epochs) {
    const auto steps = trainer.run_epoch();
    if (on_epoch) on_epoch(trainer, steps);
  }
}

Checkpoint training_checkpoint(const Trainer& trainer, const FlowArtifact& flow, const RunConfig& config) {
  Checkpoint ck;
  trainer.save_to(ck);
  save_flow(flow, ck);
  ck.meta()["config"] = config.to_json();
  return ck;
}

void check_checkpoint_config(const Checkpoint& ck, const RunConfig& config) {
  if (!ck.meta().contains("model_config")) throw ConfigError("checkpoint: no model config stored");
  const ModelConfig stored = ModelConfig::from_json(ck.meta()["model_config"], "checkpoint.model_config");
  if (!(stored == config.model)) {
    const auto a = nlohmann::json(stored.to_json()), b = nlohmann::json(config.model.to_json());
    for (const auto& item : a.items())
      if (b.at(item.key()) != item.value())
        throw ConfigError("checkpoint/config mismatch: model." + item.key() + " is " + item.value().dump() +
                          " in the checkpoint but " + b.at(item.key()).dump() + " in the config");
  }
}

ClassifierTrainResult train_corpus_classifier(const Corpus& corpus, const RunConfig& config, std::uint64_t seed) {
  const auto& e = config.evaluation;
  return train_classifier(corpus.class_names(), future_segments(corpus, corpus.train, e.observed, e.horizon),
                          future_segments(corpus, corpus.test, e.observed, e.horizon), config.classifier, seed);
}

Evaluation evaluate_generations(const Corpus& corpus, const std::vector<std::size_t>& clips,
                                const std::vector<std::vector<PoseSequence>>& generations, const EvalOptions& options,
                                const ActionClassifier* classifier, std::uint64_t seed) {
  Evaluation ev;
  ev.cases = make_cases(corpus, clips, generations, clips, options);
  ev.report = evaluate_cases(ev.cases, classifier, options.norm);
  ev.shuffled_baseline = evaluate_cases(shuffled_baseline(ev.cases, seed), classifier, options.norm);
  return ev;
}

double corpus_apd(const Corpus& corpus, const std::vector<std::size_t>& clips, const EvalOptions& options) {
  const std::size_t K = std::max<std::size_t>(options.samples, 2);
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::vector<PoseSequence> futures;
    for (std::size_t j = 1; j <= clips.size() && futures.size() < K; ++j) {
      const std::size_t c = clips[(i + j) % clips.size()];
      if (corpus.clips[c].label != corpus.clips[clips[i]].label) continue;
      futures.push_back(future_segments(corpus, {c}, options.observed, options.horizon).sequences[0]);
    }
    if (futures.size() < 2) continue;
    total += apd(futures);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("corpus APD: no class has two clips");
  return total / n;
}

void save_generations(const GenerationSet& set, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (set.clips.size() != set.samples.size() || set.clips.size() != set.labels.size())
    throw std::invalid_argument("generations: clip, label and sample counts differ");
  fs::create_directories(dir / "samples");
  nlohmann::ordered_json m;
  m["format"] = "hitdvae-generations";
  m["version"] = 1;
  m["skeleton"] = set.skeleton;
  m["fps"] = set.fps;
  m["seed"] = set.seed;
  m["options"] = eval_options_to_json(set.options);
  nlohmann::ordered_json items = nlohmann::ordered_json::array();
  char name[64];
  for (std::size_t i = 0; i < set.clips.size(); ++i) {
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < set.samples[i].size(); ++k) {
      std::snprintf(name, sizeof name, "samples/clip_%04zu_s%03zu.clip", set.clips[i], k);
      MotionClip clip{set.skeleton, set.labels[i], set.fps, "generated", set.samples[i][k]};
      save_clip(dir / name, clip);
      files.push_back(name);
    }
    items.push_back({{"clip", set.clips[i]}, {"label", set.labels[i]}, {"samples", files}});
  }
  m["items"] = items;
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

GenerationSet load_generations(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("generations: cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("generations manifest: " + std::string(e.what()));
  }
  StrictObject s(j, "generations");
  GenerationSet set;
  if (s.get<std::string>("format") != "hitdvae-generations") throw FormatError("generations: wrong format tag");
  if (const int v = s.get<int>("version"); v != 1) throw FormatError("generations: unsupported version " + std::to_string(v));
  set.skeleton = s.get<std::string>("skeleton");
  set.fps = s.get_number("fps");
  set.seed = s.get<std::uint64_t>("seed");
  set.options = eval_options_from_json(s.raw("options"), "generations.options");
  for (const auto& item : s.raw("items")) {
    StrictObject it(item, "generations.items");
    set.clips.push_back(it.get<std::size_t>("clip"));
    set.labels.push_back(it.get<std::string>("label"));
    std::vector<PoseSequence> samples;
    for (const auto& f : it.raw("samples")) samples.push_back(load_clip(dir / f.get<std::string>()).poses);
    set.samples.push_back(std::move(samples));
    it.finish();
  }
  s.finish();
  return set;
}

std::string hash_input(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return sha256_file(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), path));
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f.generic_string() + " " + sha256_file(path / f) + "\n";
  return sha256_hex(listing);
}

nlohmann::ordered_json run_manifest(const std::string& command, const nlohmann::ordered_json& config, std::uint64_t seed,
                                    const std::vector<std::filesystem::path>& inputs) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["build"] = build_id();
  m["seed"] = seed;
  m["config"] = config;
  nlohmann::ordered_json in = nlohmann::ordered_json::object();
  for (const auto& p : inputs) in[p.generic_string()] = hash_input(p);
  m["inputs"] = in;
  return m;
}

}  // namespace hitdvae
