#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hitdvae/evaluation.hpp"
#include "hitdvae/losses.hpp"
#include "hitdvae/metrics.hpp"
#include "hitdvae/model.hpp"
#include "hitdvae/motion.hpp"
#include "hitdvae/skeleton.hpp"
#include "hitdvae/trainer.hpp"

namespace hitdvae {

/// The whole run configuration. Every section and key is required and unknown keys are errors.
struct RunConfig {
  CorpusSpec corpus;
  Skeleton skeleton = Skeleton::synthetic9();
  ModelConfig model;
  TrainSchedule schedule;
  LossWeights weights;
  FlowConfig flow;
  ClassifierConfig classifier;
  EvalOptions evaluation;

  /// Checks each section and the cross-section constraints.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  /// Scaled-down run on the synthetic corpus: 4 classes x 100 clips, T=40, O=10, d_z=8, d_w=16, K=10.
  static RunConfig smoke();
};

nlohmann::ordered_json eval_options_to_json(const EvalOptions& o);
EvalOptions eval_options_from_json(const nlohmann::json& j, const std::string& path = "evaluation");

}  // namespace hitdvae
