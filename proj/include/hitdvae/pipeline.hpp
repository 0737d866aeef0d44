#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/config.hpp"

namespace hitdvae {

/// git-describe style identifier baked in at configure time.
std::string build_id();

struct FlowArtifact {
  CouplingFlow flow;
  FlowTrainResult result;
};

/// Trains the pose prior on the non-root coordinates of the corpus training clips.
FlowArtifact run_flow_pretraining(const RunConfig& config, const Corpus& corpus, std::uint64_t seed);
/// Flow parameters under "flow." with meta "flow" {dim, layers, hidden, calibration}.
void save_flow(const FlowArtifact& flow, Checkpoint& ck);
FlowArtifact load_flow(const Checkpoint& ck);

/// Per-coordinate mean and standard deviation over every frame of the training clips, std floored at 1 mm.
std::pair<std::vector<double>, std::vector<double>> pose_statistics(const Corpus& corpus);
/// Fresh model; sets the pose normalization from the corpus when model.normalize_poses is on.
HitDvae new_model(const RunConfig& config, const Corpus& corpus, std::uint64_t seed);

using EpochCallback = std::function<void(const Trainer&, const std::vector<StepResult>&)>;

/// Runs the remaining epochs of `trainer`. The callback sees each finished epoch.
void run_training(Trainer& trainer, const EpochCallback& on_epoch);

/// Training checkpoint: trainer state plus the flow and the full config.
Checkpoint training_checkpoint(const Trainer& trainer, const FlowArtifact& flow, const RunConfig& config);
/// Rejects a checkpoint whose stored model config differs from `config`, naming both.
void check_checkpoint_config(const Checkpoint& ck, const RunConfig& config);

/// Classifier on the future segments of the training clips, held out on the test clips.
ClassifierTrainResult train_corpus_classifier(const Corpus& corpus, const RunConfig& config, std::uint64_t seed);

struct Evaluation {
  MetricReport report;
  MetricReport shuffled_baseline;  // generated samples replaced by frame-shuffled ground truth
  std::vector<EvalCase> cases;
};

/// Metrics of `generations` (one set per clip of `clips`) against the corpus.
Evaluation evaluate_generations(const Corpus& corpus, const std::vector<std::size_t>& clips,
                                const std::vector<std::vector<PoseSequence>>& generations, const EvalOptions& options,
                                const ActionClassifier* classifier, std::uint64_t seed);

/// Mean APD of real futures: for every test clip, the APD of K futures of other clips of the same class.
double corpus_apd(const Corpus& corpus, const std::vector<std::size_t>& clips, const EvalOptions& options);

/// Generated sequences for a list of corpus clips, as written by `generate`.
struct GenerationSet {
  std::vector<std::size_t> clips;
  std::vector<std::string> labels;
  std::vector<std::vector<PoseSequence>> samples;  // per clip, K full sequences
  EvalOptions options;
  std::uint64_t seed = 0;
  std::string skeleton;
  double fps = 25.0;
};

/// manifest.json plus one clip file per sample.
void save_generations(const GenerationSet& set, const std::filesystem::path& dir);
GenerationSet load_generations(const std::filesystem::path& dir);

/// Run manifest: command, config echo, seed, build id and SHA-256 of every input.
nlohmann::ordered_json run_manifest(const std::string& command, const nlohmann::ordered_json& config, std::uint64_t seed,
                                    const std::vector<std::filesystem::path>& inputs);

/// SHA-256 of a file, or of every file under a directory (sorted relative paths).
std::string hash_input(const std::filesystem::path& path);

}  // namespace hitdvae
