#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/gradcheck.hpp"
#include "hitdvae/losses.hpp"
#include "hitdvae/model.hpp"
#include "hitdvae/motion.hpp"
#include "hitdvae/optim.hpp"
#include "hitdvae/random.hpp"

namespace hitdvae {

struct TrainSchedule {
  std::size_t epochs = 500;
  std::size_t samples_per_epoch = 1000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t kl_anneal_epochs = 20;
  std::size_t ss_ramp_epochs = 80;  // starts when annealing ends
  std::size_t samples = 50;         // K
  std::size_t frames = 40;          // T of a training window
  std::size_t observed = 10;        // O, never replaced by generated frames
  double clip_norm = 5.0;
  std::size_t checkpoint_every = 50;
  bool resample_w_per_sample = false;
  double mm_radius = 0.1;  // pseudo-GT radius, in mean limb lengths
  std::size_t mm_max = 10;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j, const std::string& path = "schedule");
};

/// clamp((epoch - kl_anneal_epochs) / ss_ramp_epochs, 0, 1)
double ss_probability(std::size_t epoch, const TrainSchedule& s);
/// min(epoch / kl_anneal_epochs, 1)
double kl_anneal(std::size_t epoch, const TrainSchedule& s);

enum class FrameSource : std::uint8_t { GroundTruth, Generated };

/// Per-frame decoder input provenance: frames below `protect` are ground truth, later frames
/// are generated with probability p, independently. One draw per frame in every case.
std::vector<FrameSource> scheduled_mask(std::size_t frames, std::size_t protect, double p, Rng& rng);
/// T x J x 3 decoder input taking frame t from `generated` where mask[t] says so.
Tensor scheduled_input(const Tensor& gt, const Tensor& generated, const std::vector<FrameSource>& mask);

/// A training or evaluation window: frames [start, start + length) of one clip.
struct WindowRef {
  std::size_t clip = 0;
  std::size_t start = 0;
  bool operator==(const WindowRef&) const = default;
};

/// Every window of `frames` frames (stride 1) over the listed clips.
std::vector<WindowRef> enumerate_windows(const Corpus& corpus, const std::vector<std::size_t>& clips, std::size_t frames);

/// Candidates whose pose at frame observed-1 lies within radius * mean limb length of `pose`,
/// nearest first (ties by candidate order), at most `max`. Windows of `exclude_clip` are skipped.
/// Falls back to the single nearest candidate when none is within the radius.
std::vector<WindowRef> select_pseudo_gt(const Corpus& corpus, const std::vector<WindowRef>& candidates,
                                        std::span<const double> pose, std::size_t observed,
                                        std::optional<std::size_t> exclude_clip, double radius, std::size_t max);
/// M x ((T-O)*J*3) future frames of the selected windows.
Tensor future_rows(const Corpus& corpus, const std::vector<WindowRef>& refs, std::size_t frames, std::size_t observed);

struct FlowPrior {
  const CouplingFlow* flow = nullptr;
  double calibration = 0.0;
};

struct ExampleResult {
  Tensor total;
  LossBreakdown breakdown;
  std::vector<FrameSource> mask;
  std::vector<Tensor> decoder_inputs;  // one per sample, or one shared
};

/// Inference pass, scheduled-sampled decoder pass and total loss for one window.
/// `poses` is T x J x 3, `pseudo` M x ((T-O)*J*3). All noise comes from `seed`.
ExampleResult train_example(const HitDvae& model, const Tensor& poses, const Tensor& pseudo, const Skeleton& skeleton,
                            const FlowPrior& prior, const LossWeights& weights, const TrainSchedule& schedule,
                            double p, double anneal, std::uint64_t seed);

struct StepResult {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double ss_probability = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  std::size_t generated_inputs = 0;  // decoder input frames taken from the model
  bool aborted = false;
  std::string incident;
};

class Trainer {
 public:
  Trainer(HitDvae& model, FlowPrior prior, const Corpus& corpus, TrainSchedule schedule, LossWeights weights,
          std::uint64_t seed);

  std::size_t steps_per_epoch() const;
  std::size_t epoch() const { return epoch_; }
  std::uint64_t global_step() const { return step_; }
  const AdamState& adam() const { return adam_; }
  const std::vector<std::string>& incidents() const { return incidents_; }
  const TrainSchedule& schedule() const { return schedule_; }

  /// One optimizer step on a batch drawn with replacement from the training windows.
  StepResult step();
  /// Runs the remaining steps of the current epoch.
  std::vector<StepResult> run_epoch();

  /// Model, optimizer moments and counters.
  void save_to(Checkpoint& ck) const;
  void load_from(const Checkpoint& ck);

 private:
  HitDvae& model_;
  FlowPrior prior_;
  const Corpus& corpus_;
  TrainSchedule schedule_;
  LossWeights weights_;
  std::uint64_t seed_;
  std::vector<WindowRef> windows_;
  AdamState adam_;
  std::size_t epoch_ = 0;
  std::size_t step_in_epoch_ = 0;
  std::uint64_t step_ = 0;
  std::vector<std::string> incidents_;
};

/// CSV header and row for a StepResult: epoch, step, p, anneal, total, raw terms, weighted terms, grad norm, aborted.
std::string loss_csv_header();
std::string loss_csv_row(const StepResult& r);

struct FlowConfig {
  std::size_t layers = 6;
  std::size_t hidden = 64;
  std::size_t steps = 2000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  bool standardize = true;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static FlowConfig from_json(const nlohmann::json& j, const std::string& path = "flow");
};

struct FlowTrainResult {
  std::vector<double> mean_log_prob;  // per step, on the minibatch
  double calibration = 0.0;           // median of -log p over the data; NaN after divergence
  bool diverged = false;
  std::string incident;
};

/// Maximum-likelihood training of `flow` on N x D rows. On a non-finite loss the last stable
/// parameters are restored and training stops.
FlowTrainResult pretrain_flow(CouplingFlow& flow, const Tensor& data, const FlowConfig& config, std::uint64_t seed);

/// Non-root coordinates of every frame of the listed clips, N x ((J-1)*3).
Tensor flow_training_rows(const Corpus& corpus, const std::vector<std::size_t>& clips);

/// Central-difference check of the total training loss over every model parameter on the
/// micro configuration: T=4, J=3, d_z=2, d_w=2, K=2, pure teacher forcing.
GradCheckReport total_loss_grad_check(std::uint64_t seed, double step = 1e-5);

}  // namespace hitdvae
