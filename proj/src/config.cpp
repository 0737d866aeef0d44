#include "hitdvae/config.hpp"

#include <fstream>

#include "hitdvae/json_util.hpp"

namespace hitdvae {

nlohmann::ordered_json eval_options_to_json(const EvalOptions& o) {
  return {{"observed", o.observed},   {"horizon", o.horizon}, {"samples", o.samples},
          {"mode", o.mean_mode ? "mean" : "sample"}, {"mm_radius", o.mm_radius}, {"mm_max", o.mm_max},
          {"ade_norm", ade_norm_name(o.norm)}};
}

EvalOptions eval_options_from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject s(j, path);
  EvalOptions o;
  o.observed = s.get_count("observed");
  o.horizon = s.get_count("horizon");
  o.samples = s.get_count("samples");
  const auto mode = s.get<std::string>("mode");
  if (mode != "sample" && mode != "mean") throw ConfigError(path + ".mode: expected \"sample\" or \"mean\"");
  o.mean_mode = mode == "mean";
  o.mm_radius = s.get_number("mm_radius");
  if (!(o.mm_radius > 0)) throw ConfigError(path + ".mm_radius: must be positive");
  o.mm_max = s.get_count("mm_max");
  const auto norm = s.get<std::string>("ade_norm");
  if (norm == ade_norm_name(AdeNorm::PerFrame))
    o.norm = AdeNorm::PerFrame;
  else if (norm == ade_norm_name(AdeNorm::Flattened))
    o.norm = AdeNorm::Flattened;
  else
    throw ConfigError(path + ".ade_norm: unknown normalisation '" + norm + "'");
  s.finish();
  return o;
}

void RunConfig::validate() const {
  corpus.validate();
  skeleton.validate();
  model.validate();
  schedule.validate();
  weights.validate();
  flow.validate();
  classifier.validate();
  if (model.joints != skeleton.joints())
    throw ConfigError("model.joints: " + std::to_string(model.joints) + " but the skeleton has " +
                      std::to_string(skeleton.joints()) + " joints");
  if (schedule.frames > corpus.frames)
    throw ConfigError("schedule.frames: " + std::to_string(schedule.frames) + " exceeds corpus.frames " +
                      std::to_string(corpus.frames));
  if (model.w_window > schedule.observed)
    throw ConfigError("model.w_window: " + std::to_string(model.w_window) + " exceeds schedule.observed " +
                      std::to_string(schedule.observed));
  if (model.w_window > evaluation.observed || evaluation.observed < 2)
    throw ConfigError("evaluation.observed: must be at least 2 and at least model.w_window");
  if (evaluation.observed + evaluation.horizon > corpus.frames)
    throw ConfigError("evaluation: observed + horizon exceeds corpus.frames");
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["corpus"] = corpus.to_json();
  j["skeleton"] = skeleton.to_json();
  j["model"] = model.to_json();
  j["schedule"] = schedule.to_json();
  j["weights"] = weights.to_json();
  j["flow"] = flow.to_json();
  j["classifier"] = classifier.to_json();
  j["evaluation"] = eval_options_to_json(evaluation);
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  StrictObject s(j, "config");
  RunConfig c;
  c.corpus = CorpusSpec::from_json(s.raw("corpus"), "corpus");
  c.skeleton = Skeleton::from_json(s.raw("skeleton"), "skeleton");
  c.model = ModelConfig::from_json(s.raw("model"), "model");
  c.schedule = TrainSchedule::from_json(s.raw("schedule"), "schedule");
  c.weights = LossWeights::from_json(s.raw("weights"), "weights");
  c.flow = FlowConfig::from_json(s.raw("flow"), "flow");
  c.classifier = ClassifierConfig::from_json(s.raw("classifier"), "classifier");
  c.evaluation = eval_options_from_json(s.raw("evaluation"), "evaluation");
  s.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

RunConfig RunConfig::smoke() {
  RunConfig c;
  c.corpus.clips_per_class = 100;
  c.corpus.frames = 40;
  c.corpus.observed = 10;
  c.corpus.seed = 1;

  c.model.d_z = 8;
  c.model.d_w = 16;
  c.model.encoder_width = 32;
  c.model.encoder_heads = 4;
  c.model.encoder_ff = 64;
  c.model.xdecoder_width = 64;
  c.model.xdecoder_heads = 4;
  c.model.xdecoder_ff = 128;
  c.model.sgcn_hidden = 4;
  c.model.tgcn_blocks = 2;
  c.model.tgcn_hidden = 16;
  c.model.w_window = 10;
  c.model.emission_residual = true;

  c.schedule.epochs = 100;
  c.schedule.samples_per_epoch = 32;
  c.schedule.batch_size = 8;
  c.schedule.kl_anneal_epochs = 4;
  c.schedule.ss_ramp_epochs = 16;
  c.schedule.samples = 10;
  c.schedule.frames = 40;
  c.schedule.observed = 10;
  c.schedule.checkpoint_every = 25;

  c.flow.layers = 4;
  c.flow.hidden = 32;
  c.flow.steps = 300;
  c.flow.batch_size = 128;

  c.classifier.hidden = 32;
  c.classifier.epochs = 15;
  c.classifier.learning_rate = 5e-3;

  c.evaluation.observed = 10;
  c.evaluation.horizon = 30;
  c.evaluation.samples = 10;
  return c;
}

}  // namespace hitdvae
