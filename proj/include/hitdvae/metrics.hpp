#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hitdvae/nn.hpp"
#include "hitdvae/pose.hpp"
#include "hitdvae/random.hpp"

namespace hitdvae {

class Checkpoint;

// ---- explicit metrics. All sequences here are futures: G frames each. ----

/// Mean over ordered pairs of the L2 distance between whole flattened futures. K >= 2.
double apd(const std::vector<PoseSequence>& samples);

enum class Selection { Best, Medium };
enum class AdeNorm { PerFrame, Flattened };
const char* ade_norm_name(AdeNorm n);

struct AdeFde {
  double ade = 0.0;
  double fde = 0.0;
};

/// Per-sample ADE: mean over frames of the per-frame L2 norm (PerFrame), or the L2 norm of the
/// whole flattened difference divided by G (Flattened).
double sample_ade(const PoseSequence& sample, const PoseSequence& gt, AdeNorm norm = AdeNorm::PerFrame);
/// L2 distance of the last frames.
double sample_fde(const PoseSequence& sample, const PoseSequence& gt);
/// Index of the sample at rank ceil(K/2) by whole-future L2 distance to gt, ties by index.
std::size_t medium_index(const std::vector<PoseSequence>& samples, const PoseSequence& gt);

/// Best: ADE and FDE minimised independently over samples. Medium: both from medium_index.
AdeFde ade_fde(const std::vector<PoseSequence>& samples, const PoseSequence& gt, Selection mode,
               AdeNorm norm = AdeNorm::PerFrame);
/// Mean over pseudo ground truths of ade_fde against each.
AdeFde mm_ade_fde(const std::vector<PoseSequence>& samples, const std::vector<PoseSequence>& pseudo, Selection mode,
                  AdeNorm norm = AdeNorm::PerFrame);

/// Frames [observed, frames) as a new sequence with observed = 0.
PoseSequence future_of(const PoseSequence& seq, std::size_t observed);
/// Same frames in a random temporal order.
PoseSequence shuffled_frames(const PoseSequence& seq, Rng& rng);

// ---- FID ----

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Mean and unbiased covariance of N x D feature rows, N >= 2.
FeatureStats feature_stats(const Eigen::MatrixXd& features);
/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2). Covariances are symmetrized;
/// an eigenvalue below -1e-8 is rejected.
double fid(const FeatureStats& a, const FeatureStats& b);

// ---- action classifier ----

struct ClassifierConfig {
  std::size_t hidden = 128;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  bool velocity_inputs = true;  // feed [x_t; x_t - x_{t-1}] instead of x_t

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j, const std::string& path = "classifier");
};

struct LabeledSequences {
  std::vector<PoseSequence> sequences;
  std::vector<std::string> labels;
};

/// Two stacked GRU layers and a linear class head. Features are the last layer's final hidden state.
class ActionClassifier {
 public:
  ActionClassifier() = default;
  ActionClassifier(std::vector<std::string> classes, std::size_t input_width, std::size_t hidden, std::uint64_t seed,
                   bool velocity_inputs = false);

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t class_index(const std::string& label) const;
  std::size_t hidden() const { return hidden_; }
  bool velocity_inputs() const { return velocity_; }

  /// B x F x D input, returns (final hidden B x H, logits B x C).
  std::pair<Tensor, Tensor> forward(const Tensor& batch) const;
  Eigen::MatrixXd features(const std::vector<PoseSequence>& seqs) const;
  /// Softmax rows, one per sequence.
  Eigen::MatrixXd probabilities(const std::vector<PoseSequence>& seqs) const;
  std::vector<std::size_t> predict(const std::vector<PoseSequence>& seqs) const;

  ParamList parameters() const;
  void save_to(Checkpoint& ck, const std::string& prefix = "classifier.") const;
  void load_from(const Checkpoint& ck, const std::string& prefix = "classifier.");

 private:
  template <typename F>
  void for_batches(const std::vector<PoseSequence>& seqs, F&& f) const;

  std::vector<std::string> classes_;
  std::size_t input_width_ = 0;
  std::size_t hidden_ = 0;
  bool velocity_ = false;
  GruCell layer1_, layer2_;
  Linear head_;
};

struct ClassifierTrainResult {
  ActionClassifier classifier;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
};

/// Cross-entropy training with Adam. Needs >= 2 classes with >= 20 training sequences each.
ClassifierTrainResult train_classifier(const std::vector<std::string>& classes, const LabeledSequences& train,
                                       const LabeledSequences& heldout, const ClassifierConfig& config,
                                       std::uint64_t seed);
/// Fraction of sequences classified as their label. Unknown labels are rejected.
double recognition_accuracy(const ActionClassifier& classifier, const LabeledSequences& data);

// ---- reports ----

struct MetricReport {
  double acc = 0.0;
  double fid = 0.0;
  double apd = 0.0;
  double ade_b = 0.0, fde_b = 0.0, mmade_b = 0.0, mmfde_b = 0.0;
  double ade_m = 0.0, fde_m = 0.0, mmade_m = 0.0, mmfde_m = 0.0;
  std::size_t sequences = 0;
  std::size_t samples = 0;  // K
  double mean_pseudo_gt = 0.0;  // mean M
  AdeNorm ade_norm = AdeNorm::PerFrame;
  bool has_classifier = false;

  /// best <= medium for all four pairs and every distance non-negative.
  bool invariants_hold() const;
  nlohmann::ordered_json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// One conditioning sequence of an evaluation: its ground-truth future, K generated futures
/// and the pseudo-ground-truth futures.
struct EvalCase {
  std::string label;
  PoseSequence gt;
  std::vector<PoseSequence> samples;
  std::vector<PoseSequence> pseudo;
};

/// Averages the per-case metrics; Acc and FID need a classifier (real features come from the
/// ground-truth futures).
MetricReport evaluate_cases(const std::vector<EvalCase>& cases, const ActionClassifier* classifier,
                            AdeNorm norm = AdeNorm::PerFrame);

}  // namespace hitdvae
