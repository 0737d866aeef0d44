#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hitdvae/nn.hpp"
#include "hitdvae/pose.hpp"

namespace hitdvae {

class Checkpoint;

struct ModelConfig {
  std::size_t joints = 9;
  std::size_t d_z = 16;
  std::size_t d_w = 32;
  std::size_t encoder_width = 64;
  std::size_t encoder_heads = 4;
  std::size_t encoder_ff = 256;
  std::size_t xdecoder_width = 256;
  std::size_t xdecoder_heads = 4;
  std::size_t xdecoder_ff = 1024;
  std::size_t sgcn_blocks = 1;
  std::size_t sgcn_hidden = 8;
  std::size_t tgcn_blocks = 4;
  std::size_t tgcn_hidden = 64;
  std::size_t w_window = 15;
  bool positional_encoding = true;
  bool normalize_poses = true;  // per-coordinate standardization from the training clips
  bool emission_residual = false;  // emission mean = x_{t-1} + head output
  double logvar_clamp = 10.0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Every field is required; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j, const std::string& path = "model");
  bool operator==(const ModelConfig&) const = default;

  /// Three joints, two-wide latents: the finite-difference configuration.
  static ModelConfig micro();
};

/// Linear map applied to the concatenation [a; w], stored as two blocks so a
/// single w row broadcasts over every row of a.
struct JointProjection {
  Linear a_part;
  Tensor w_part;

  JointProjection() = default;
  JointProjection(std::size_t a_width, std::size_t w_width, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& a, const Tensor& w) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

class HitDvae {
 public:
  enum class FeatureNet { Encoder, Decoder };

  HitDvae() = default;
  HitDvae(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t feature_width() const { return config_.joints * config_.sgcn_hidden; }
  ParamList parameters() const;

  /// Per-frame spatial-GCN features of T x J x 3 poses, T x F.
  Tensor pose_features(const Tensor& poses, FeatureNet net) const;

  /// q(w | window); the window must hold exactly w_window frames.
  DiagGaussian infer_w(const Tensor& window) const;
  /// q(z_t | x_1:T, w) for every frame, T rows. No causal mask.
  DiagGaussian infer_z(const Tensor& poses, const Tensor& w) const;

  /// p(z_t | x_{t-1}, z_{<t}, w) at 0-based frame t >= 1. prev_features is f_D(x_{t-1}) (1 x F),
  /// z_history holds z_0..z_{t-1}.
  DiagGaussian prior_z(std::size_t t, const Tensor& prev_features, const Tensor& z_history, const Tensor& w) const;
  /// Emission mean of frame t >= 1 given z_t (1 x d_z) and f_D(x_0..x_{t-1}), 1 x (J*3) with a zero root.
  /// prev_pose is x_{t-1}; only the residual emission reads it, and it must be given then.
  Tensor emit_x(std::size_t t, const Tensor& z_t, const Tensor& w, const Tensor& history_features,
                const Tensor& prev_pose = {}) const;

  struct DecoderOutput {
    Tensor emission;     // K*(T-1) x J*3, sample-major, frames 1..T-1
    DiagGaussian prior;  // K*(T-1) x d_z
  };
  /// Parallel teacher-forced decoder pass. `inputs` holds one T x J x 3 decoder input per
  /// sample, or a single one shared by all samples; `z` holds K latent paths of T x d_z.
  DecoderOutput decode(const std::vector<Tensor>& inputs, const std::vector<Tensor>& z, const Tensor& w) const;

  /// sum_{t>=1} [log N(x_t; mu_x, I) + log p(z_t | .)] + log N(w; 0, I).
  Tensor joint_log_density(const PoseSequence& x, const Tensor& z, const Tensor& w) const;

  /// Cached decoder context for frame-by-frame rollout.
  struct DecoderState {
    Tensor w;
    Tensor prior_keys, prior_values;
    Tensor emit_keys, emit_values;
    Tensor last_features;
    Tensor last_pose;  // 1 x J*3
    std::size_t length = 0;
    std::size_t context_cap = 0;  // 0 = unbounded
  };
  DecoderState start_decoder(const Tensor& w, std::size_t context_cap = 0) const;
  /// Appends frame `length`: its pose (1 x J*3 or J x 3) and its latent (1 x d_z).
  void push_frame(DecoderState& state, const Tensor& pose, const Tensor& z) const;
  /// Prior of z at frame state.length; needs at least one pushed frame.
  DiagGaussian next_prior(const DecoderState& state) const;
  /// Emission mean at frame state.length for latent z.
  Tensor next_emission(const DecoderState& state, const Tensor& z) const;

  void save_to(Checkpoint& ck, const std::string& prefix = "model.") const;
  void load_from(const Checkpoint& ck, const std::string& prefix = "model.");

  /// Zeroes the emission head: every emitted pose becomes the shift pose (zero by default),
  /// or x_{t-1} with the residual emission.
  void zero_emission_head();

  /// Poses enter the GCNs as (x - shift) / scale and the emission head output is mapped back
  /// with shift + scale * out. Both are J*3 wide; the root entries are forced to 0 and 1.
  /// Default is the identity. Stored in checkpoints.
  void set_pose_normalization(std::span<const double> shift, std::span<const double> scale);
  std::span<const double> pose_shift() const { return shift_.values(); }
  std::span<const double> pose_scale() const { return scale_.values(); }

 private:
  friend struct ModelInspector;  // white-box access for oracle tests

  DiagGaussian split_gaussian(const Tensor& head_out, std::size_t width) const;
  Tensor with_positions(const Tensor& rows, const std::vector<std::size_t>& positions) const;
  Tensor prior_queries(const Tensor& prev_features, const Tensor& w, const std::vector<std::size_t>& positions) const;
  Tensor prior_key_inputs(const Tensor& z, const std::vector<std::size_t>& positions) const;
  Tensor emit_queries(const Tensor& z, const Tensor& w, const std::vector<std::size_t>& positions) const;
  Tensor emit_key_inputs(const Tensor& features, const std::vector<std::size_t>& positions) const;
  DiagGaussian prior_head(const Tensor& block_out) const;
  /// prev: x_{t-1} rows matching block_out, read by the residual emission only.
  Tensor emission_head(const Tensor& block_out, const Tensor& prev) const;

  ModelConfig config_;
  Tensor shift_, scale_;  // 1 x J*3
  bool normalized_ = false;
  std::vector<GcnBlock> encoder_gcn_, decoder_gcn_;
  std::vector<GcnBlock> temporal_gcn_;
  Linear w_head_;
  JointProjection z_enc_in_;
  TransformerBlock z_enc_;
  Linear z_enc_head_;
  JointProjection prior_query_in_;
  Linear prior_key_in_;
  TransformerBlock prior_dec_;
  Linear prior_head_;
  JointProjection emit_query_in_;
  Linear emit_key_in_;
  TransformerBlock emit_dec_;
  Linear emit_head_;
  Tensor root_mask_;
};

}  // namespace hitdvae
