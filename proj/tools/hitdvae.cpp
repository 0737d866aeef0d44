// hitdvae command-line tool: synth, pretrain-flow, train, generate, eval, gradcheck, render.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hitdvae/json_util.hpp"
#include "hitdvae/parallel.hpp"
#include "hitdvae/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hitdvae;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string corpus;
  std::string flow;
  std::string generations;
  std::string classifier;
  std::string clip;
  std::optional<std::size_t> obs_frames, horizon, samples;
  std::string mode;
  std::string encoding = "base64";
  std::size_t max_clips = 0;
};

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

RunConfig load_config(const Options& o) {
  require(o.config, "--config");
  return RunConfig::load(o.config);
}

std::uint64_t seed_of(const Options& o, std::uint64_t fallback) { return o.seed.value_or(fallback); }

fs::path out_dir(const Options& o) {
  require(o.out, "--out");
  fs::create_directories(o.out);
  return o.out;
}

EvalOptions eval_options(const Options& o, const RunConfig& c) {
  EvalOptions e = c.evaluation;
  if (o.obs_frames) e.observed = *o.obs_frames;
  if (o.horizon) e.horizon = *o.horizon;
  if (o.samples) e.samples = *o.samples;
  if (!o.mode.empty()) e.mean_mode = o.mode == "mean";
  if (e.observed < c.model.w_window)
    throw ConfigError("--obs-frames: " + std::to_string(e.observed) + " is below model.w_window " +
                      std::to_string(c.model.w_window));
  if (e.horizon == 0 || e.samples == 0) throw ConfigError("--horizon and --samples must be positive");
  return e;
}

Corpus load_corpus_checked(const Options& o, const RunConfig& c) {
  require(o.corpus, "--corpus");
  Corpus corpus = load_corpus(o.corpus);
  if (!(corpus.skeleton == c.skeleton)) throw ConfigError("corpus skeleton differs from config.skeleton");
  return corpus;
}

std::vector<std::size_t> eval_clips(const Options& o, const Corpus& corpus) {
  std::vector<std::size_t> clips = corpus.test;
  if (o.max_clips && clips.size() > o.max_clips) clips.resize(o.max_clips);
  return clips;
}

HitDvae load_model(const Options& o, const RunConfig& c, Checkpoint& ck) {
  require(o.checkpoint, "--checkpoint");
  ck = Checkpoint::load(o.checkpoint);
  check_checkpoint_config(ck, c);
  HitDvae model(c.model, 0);
  model.load_from(ck);
  return model;
}

int cmd_synth(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) c = RunConfig::load(o.config);
  if (o.seed) c.corpus.seed = *o.seed;
  const fs::path out = out_dir(o);
  const Corpus corpus = synth_corpus(c.corpus, c.skeleton);
  save_corpus(corpus, out, o.encoding == "csv" ? ClipEncoding::Csv : ClipEncoding::Base64);
  nlohmann::ordered_json cfg{{"corpus", c.corpus.to_json()}, {"skeleton", c.skeleton.to_json()}};
  std::vector<fs::path> inputs;
  if (!o.config.empty()) inputs.push_back(o.config);
  write_json(out / "run_manifest.json", run_manifest("synth", cfg, c.corpus.seed, inputs));
  std::cout << nlohmann::ordered_json{{"clips", corpus.clips.size()}, {"train", corpus.train.size()},
                                      {"test", corpus.test.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_pretrain_flow(const Options& o) {
  const RunConfig c = load_config(o);
  const std::uint64_t seed = seed_of(o, 1);
  const Corpus corpus = load_corpus_checked(o, c);
  const fs::path out = out_dir(o);
  const FlowArtifact flow = run_flow_pretraining(c, corpus, seed);
  Checkpoint ck;
  save_flow(flow, ck);
  ck.save(out / "flow.ckpt");
  std::string log = "step,mean_log_prob\n";
  for (std::size_t i = 0; i < flow.result.mean_log_prob.size(); ++i)
    log += std::to_string(i) + "," + std::to_string(flow.result.mean_log_prob[i]) + "\n";
  write_text(out / "flow_log.csv", log);
  write_json(out / "run_manifest.json", run_manifest("pretrain-flow", c.to_json(), seed, {o.config, o.corpus}));
  nlohmann::ordered_json r{{"final_mean_log_prob", flow.result.mean_log_prob.empty() ? 0.0 : flow.result.mean_log_prob.back()},
                           {"diverged", flow.result.diverged}};
  r["calibration"] = std::isfinite(flow.result.calibration) ? nlohmann::ordered_json(flow.result.calibration) : nullptr;
  if (flow.result.diverged) r["incident"] = flow.result.incident;
  std::cout << r.dump() << "\n";
  return flow.result.diverged ? 4 : 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = load_config(o);
  const std::uint64_t seed = seed_of(o, 1);
  const Corpus corpus = load_corpus_checked(o, c);
  const fs::path out = out_dir(o);
  std::vector<fs::path> inputs{o.config, o.corpus};

  FlowArtifact flow;
  if (!o.flow.empty()) {
    flow = load_flow(Checkpoint::load(o.flow));
    inputs.push_back(o.flow);
  } else {
    flow = run_flow_pretraining(c, corpus, derive_seed(seed, 0xF10));
  }
  if (!std::isfinite(flow.result.calibration)) throw NumericError("flow prior diverged during pretraining");

  HitDvae model = new_model(c, corpus, derive_seed(seed, 7));
  Trainer trainer(model, {&flow.flow, flow.result.calibration}, corpus, c.schedule, c.weights, seed);
  if (!o.checkpoint.empty()) {
    const Checkpoint ck = Checkpoint::load(o.checkpoint);
    check_checkpoint_config(ck, c);
    trainer.load_from(ck);
    inputs.push_back(o.checkpoint);
  }
  write_json(out / "run_manifest.json", run_manifest("train", c.to_json(), seed, inputs));

  const bool resuming = !o.checkpoint.empty() && fs::exists(out / "loss.csv");
  std::ofstream csv(out / "loss.csv", resuming ? std::ios::app : std::ios::trunc);
  if (!resuming) csv << loss_csv_header() << "\n";
  std::size_t aborted = 0;
  run_training(trainer, [&](const Trainer& t, const std::vector<StepResult>& steps) {
    double total = 0;
    for (const auto& s : steps) {
      csv << loss_csv_row(s) << "\n";
      total += s.loss.total;
      if (s.aborted) {
        ++aborted;
        std::cerr << nlohmann::ordered_json{{"incident", s.incident}}.dump() << "\n";
      }
    }
    csv.flush();
    std::cerr << nlohmann::ordered_json{{"epoch", t.epoch() - 1}, {"loss", total / steps.size()}}.dump() << "\n";
    if (c.schedule.checkpoint_every && t.epoch() % c.schedule.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", t.epoch());
      training_checkpoint(t, flow, c).save(out / name);
    }
  });
  training_checkpoint(trainer, flow, c).save(out / "final.ckpt");
  std::cout << nlohmann::ordered_json{{"epochs", trainer.epoch()}, {"steps", trainer.global_step()}, {"aborted_steps", aborted}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_generate(const Options& o) {
  const RunConfig c = load_config(o);
  const std::uint64_t seed = seed_of(o, 1);
  const Corpus corpus = load_corpus_checked(o, c);
  Checkpoint ck;
  const HitDvae model = load_model(o, c, ck);
  const fs::path out = out_dir(o);
  GenerationSet set;
  set.options = eval_options(o, c);
  set.seed = seed;
  set.skeleton = corpus.skeleton.name;
  set.fps = corpus.spec.fps;
  set.clips = eval_clips(o, corpus);
  for (std::size_t clip : set.clips) set.labels.push_back(corpus.clips[clip].label);
  set.samples = generate_for_clips(model, corpus, set.clips, set.options, seed);
  save_generations(set, out);
  nlohmann::ordered_json cfg = c.to_json();
  cfg["evaluation"] = eval_options_to_json(set.options);
  write_json(out / "run_manifest.json", run_manifest("generate", cfg, seed, {o.config, o.corpus, o.checkpoint}));
  std::cout << nlohmann::ordered_json{{"clips", set.clips.size()}, {"samples", set.options.mean_mode ? 1 : set.options.samples}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = load_config(o);
  const std::uint64_t seed = seed_of(o, 1);
  const Corpus corpus = load_corpus_checked(o, c);
  const fs::path out = out_dir(o);
  std::vector<fs::path> inputs{o.config, o.corpus};
  if (o.checkpoint.empty() == o.generations.empty()) throw UsageError("eval needs exactly one of --checkpoint or --generations");

  GenerationSet set;
  if (!o.generations.empty()) {
    set = load_generations(o.generations);
    inputs.push_back(o.generations);
    if (o.obs_frames || o.horizon || o.samples || !o.mode.empty())
      throw UsageError("--obs-frames/--horizon/--samples/--mode come from the generations manifest");
  } else {
    Checkpoint ck;
    const HitDvae model = load_model(o, c, ck);
    inputs.push_back(o.checkpoint);
    set.options = eval_options(o, c);
    set.clips = eval_clips(o, corpus);
    set.samples = generate_for_clips(model, corpus, set.clips, set.options, seed);
  }

  ActionClassifier classifier;
  nlohmann::ordered_json cls_info;
  if (!o.classifier.empty()) {
    classifier.load_from(Checkpoint::load(o.classifier));
    inputs.push_back(o.classifier);
    cls_info["source"] = o.classifier;
  } else {
    const auto r = train_corpus_classifier(corpus, c, derive_seed(seed, 0xC1A5));
    classifier = r.classifier;
    Checkpoint ck;
    classifier.save_to(ck);
    ck.save(out / "classifier.ckpt");
    cls_info = {{"train_accuracy", r.train_accuracy}, {"heldout_accuracy", r.heldout_accuracy}, {"warnings", r.warnings}};
  }

  const Evaluation ev = evaluate_generations(corpus, set.clips, set.samples, set.options, &classifier, derive_seed(seed, 0xBA5E));
  nlohmann::ordered_json report = ev.report.to_json();
  report["invariants_hold"] = ev.report.invariants_hold();
  report["shuffled_frames_baseline"] = ev.shuffled_baseline.to_json();
  report["classifier"] = cls_info;
  write_json(out / "report.json", report);
  write_text(out / "report.csv", MetricReport::csv_header() + "\n" + ev.report.csv_row() + "\n");
  nlohmann::ordered_json cfg = c.to_json();
  cfg["evaluation"] = eval_options_to_json(set.options);
  write_json(out / "run_manifest.json", run_manifest("eval", cfg, seed, inputs));
  std::cout << MetricReport::csv_header() << "\n" << ev.report.csv_row() << "\n";
  return ev.report.invariants_hold() ? 0 : 4;
}

int cmd_gradcheck(const Options& o) {
  const GradCheckReport r = total_loss_grad_check(seed_of(o, 1));
  const bool pass = r.finite && r.max_rel_error < 1e-4;
  std::cout << nlohmann::ordered_json{{"max_rel_error", r.max_rel_error},
                                      {"coordinates", r.coordinates},
                                      {"tolerance", 1e-4},
                                      {"pass", pass}}
                   .dump()
            << "\n";
  return pass ? 0 : 4;
}

int cmd_render(const Options& o) {
  require(o.out, "--out");
  std::vector<PoseSequence> samples;
  Skeleton skeleton = Skeleton::synthetic9();
  if (!o.config.empty()) skeleton = RunConfig::load(o.config).skeleton;
  if (!o.clip.empty()) {
    samples.push_back(load_clip(o.clip).poses);
  } else if (!o.generations.empty()) {
    const GenerationSet set = load_generations(o.generations);
    if (set.samples.empty()) throw FormatError("generations: no items");
    samples = set.samples.front();
  } else {
    throw UsageError("render needs --clip or --generations");
  }
  RenderOptions r;
  const std::size_t frames = samples.front().frames;
  for (std::size_t t = 0; t < frames; t += std::max<std::size_t>(1, frames / 8)) r.frames.push_back(t);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  write_text(o.out, render_svg(samples, skeleton, r));
  return 0;
}

int error_exit(const char* type, const std::string& message, int code) {
  std::cerr << nlohmann::ordered_json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic human motion prediction: synth, train, generate, evaluate"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "run configuration JSON");
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--out", o.out, "output path");
  };
  auto corpus = [&](CLI::App* s) { s->add_option("--corpus", o.corpus, "corpus directory"); };
  auto gen_flags = [&](CLI::App* s) {
    s->add_option("--obs-frames", o.obs_frames, "observed frames O");
    s->add_option("--horizon", o.horizon, "generated frames G");
    s->add_option("--samples", o.samples, "samples per sequence K");
    s->add_option("--mode", o.mode, "sample or mean")->check(CLI::IsMember({"sample", "mean"}));
    s->add_option("--max-clips", o.max_clips, "only the first N test clips");
  };

  auto* synth = app.add_subcommand("synth", "write the synthetic corpus");
  common(synth);
  synth->add_option("--encoding", o.encoding, "clip body encoding")->check(CLI::IsMember({"base64", "csv"}));

  auto* flow = app.add_subcommand("pretrain-flow", "train the pose-prior flow");
  common(flow);
  corpus(flow);

  auto* train = app.add_subcommand("train", "train the model");
  common(train);
  corpus(train);
  train->add_option("--flow", o.flow, "pretrained flow checkpoint");
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");

  auto* generate = app.add_subcommand("generate", "sample futures for the test clips");
  common(generate);
  corpus(generate);
  generate->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  gen_flags(generate);

  auto* eval = app.add_subcommand("eval", "metric report for a checkpoint or a generations directory");
  common(eval);
  corpus(eval);
  eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  eval->add_option("--generations", o.generations, "generations directory");
  eval->add_option("--classifier", o.classifier, "classifier checkpoint");
  gen_flags(eval);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the total loss");
  gradcheck->add_option("--seed", o.seed, "random seed");

  auto* render = app.add_subcommand("render", "SVG stick figures");
  common(render);
  render->add_option("--clip", o.clip, "clip file");
  render->add_option("--generations", o.generations, "generations directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("usage", e.what(), 2);
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*flow) return cmd_pretrain_flow(o);
    if (*train) return cmd_train(o);
    if (*generate) return cmd_generate(o);
    if (*eval) return cmd_eval(o);
    if (*gradcheck) return cmd_gradcheck(o);
    if (*render) return cmd_render(o);
  } catch (const UsageError& e) {
    return error_exit("usage", e.what(), 2);
  } catch (const ConfigError& e) {
    return error_exit("config", e.what(), 2);
  } catch (const FormatError& e) {
    return error_exit("format", e.what(), 3);
  } catch (const ShapeError& e) {
    return error_exit("shape", e.what(), 3);
  } catch (const NumericError& e) {
    return error_exit("numeric", e.what(), 4);
  } catch (const std::exception& e) {
    return error_exit("runtime", e.what(), 1);
  }
  return 1;
}
