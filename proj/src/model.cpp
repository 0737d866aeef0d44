#include "hitdvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/json_util.hpp"

namespace hitdvae {

namespace {

std::vector<std::size_t> iota_positions(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> p(end - begin);
  std::iota(p.begin(), p.end(), begin);
  return p;
}

std::vector<std::size_t> tiled(const std::vector<std::size_t>& p, std::size_t times) {
  std::vector<std::size_t> out;
  out.reserve(p.size() * times);
  for (std::size_t k = 0; k < times; ++k) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// K stacked groups; query (k, qpos) sees key (k, kpos) iff kpos < qpos.
AttentionMask grouped_causal(std::size_t groups, const std::vector<std::size_t>& qpos,
                             const std::vector<std::size_t>& kpos) {
  const std::size_t nq = qpos.size(), nk = kpos.size();
  AttentionMask m(groups * nq, groups * nk, false);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t k = 0; k < nk && kpos[k] < qpos[q]; ++k) m.set(g * nq + q, g * nk + k, true);
  return m;
}

Tensor append_rows(const Tensor& cache, const Tensor& rows) {
  return cache.defined() ? concat({cache, rows}, 0) : rows;
}

Tensor as_frame_stack(const Tensor& pose, std::size_t joints) {
  if (pose.numel() % (joints * 3) != 0) {
    throw ShapeError("pose " + shape_str(pose.shape()) + " is not a whole number of " + std::to_string(joints) +
                     "-joint frames");
  }
  return reshape(pose, {pose.numel() / (joints * 3), joints, 3});
}

}  // namespace

// ---- ModelConfig ----

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.joints = 3;
  c.d_z = 2;
  c.d_w = 2;
  c.encoder_width = 4;
  c.encoder_heads = 2;
  c.encoder_ff = 8;
  c.xdecoder_width = 4;
  c.xdecoder_heads = 2;
  c.xdecoder_ff = 8;
  c.sgcn_blocks = 1;
  c.sgcn_hidden = 2;
  c.tgcn_blocks = 1;
  c.tgcn_hidden = 3;
  c.w_window = 4;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + ": must be positive");
  };
  positive(joints, "joints");
  positive(d_z, "d_z");
  positive(d_w, "d_w");
  positive(encoder_width, "encoder_width");
  positive(encoder_heads, "encoder_heads");
  positive(encoder_ff, "encoder_ff");
  positive(xdecoder_width, "xdecoder_width");
  positive(xdecoder_heads, "xdecoder_heads");
  positive(xdecoder_ff, "xdecoder_ff");
  positive(sgcn_blocks, "sgcn_blocks");
  positive(sgcn_hidden, "sgcn_hidden");
  positive(tgcn_blocks, "tgcn_blocks");
  positive(tgcn_hidden, "tgcn_hidden");
  positive(w_window, "w_window");
  if (encoder_width % encoder_heads != 0) throw ConfigError("model.encoder_width: not divisible by encoder_heads");
  if (xdecoder_width % xdecoder_heads != 0) throw ConfigError("model.xdecoder_width: not divisible by xdecoder_heads");
  if (!(logvar_clamp > 0.0)) throw ConfigError("model.logvar_clamp: must be positive");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["joints"] = joints;
  j["d_z"] = d_z;
  j["d_w"] = d_w;
  j["encoder_width"] = encoder_width;
  j["encoder_heads"] = encoder_heads;
  j["encoder_ff"] = encoder_ff;
  j["xdecoder_width"] = xdecoder_width;
  j["xdecoder_heads"] = xdecoder_heads;
  j["xdecoder_ff"] = xdecoder_ff;
  j["sgcn_blocks"] = sgcn_blocks;
  j["sgcn_hidden"] = sgcn_hidden;
  j["tgcn_blocks"] = tgcn_blocks;
  j["tgcn_hidden"] = tgcn_hidden;
  j["w_window"] = w_window;
  j["positional_encoding"] = positional_encoding;
  j["normalize_poses"] = normalize_poses;
  j["emission_residual"] = emission_residual;
  j["logvar_clamp"] = logvar_clamp;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  ModelConfig c;
  c.joints = o.get_count("joints");
  c.d_z = o.get_count("d_z");
  c.d_w = o.get_count("d_w");
  c.encoder_width = o.get_count("encoder_width");
  c.encoder_heads = o.get_count("encoder_heads");
  c.encoder_ff = o.get_count("encoder_ff");
  c.xdecoder_width = o.get_count("xdecoder_width");
  c.xdecoder_heads = o.get_count("xdecoder_heads");
  c.xdecoder_ff = o.get_count("xdecoder_ff");
  c.sgcn_blocks = o.get_count("sgcn_blocks");
  c.sgcn_hidden = o.get_count("sgcn_hidden");
  c.tgcn_blocks = o.get_count("tgcn_blocks");
  c.tgcn_hidden = o.get_count("tgcn_hidden");
  c.w_window = o.get_count("w_window");
  c.positional_encoding = o.get<bool>("positional_encoding");
  c.normalize_poses = o.get<bool>("normalize_poses");
  c.emission_residual = o.get<bool>("emission_residual");
  c.logvar_clamp = o.get_number("logvar_clamp");
  o.finish();
  c.validate();
  return c;
}

// ---- JointProjection ----

JointProjection::JointProjection(std::size_t a_width, std::size_t w_width, std::size_t out, Rng& rng) {
  // Same init as one Linear over the concatenated width.
  const double s = 1.0 / std::sqrt(static_cast<double>(a_width + w_width));
  a_part = Linear(a_width, out, rng, s * std::sqrt(static_cast<double>(a_width)));
  std::vector<double> v(w_width * out);
  for (double& x : v) x = rng.uniform(-s, s);
  w_part = Tensor::from({w_width, out}, std::move(v), true);
}

Tensor JointProjection::forward(const Tensor& a, const Tensor& w) const {
  return add(a_part.forward(a), matmul(w, w_part));
}

void JointProjection::collect(ParamList& out, const std::string& prefix) const {
  a_part.collect(out, prefix + ".a");
  out.push_back({prefix + ".w", w_part});
}

// ---- HitDvae ----

HitDvae::HitDvae(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t J = config_.joints, F = feature_width();
  for (std::size_t b = 0; b < config_.sgcn_blocks; ++b) {
    encoder_gcn_.emplace_back(J, b == 0 ? 3 : config_.sgcn_hidden, config_.sgcn_hidden, rng);
  }
  for (std::size_t b = 0; b < config_.sgcn_blocks; ++b) {
    decoder_gcn_.emplace_back(J, b == 0 ? 3 : config_.sgcn_hidden, config_.sgcn_hidden, rng);
  }
  for (std::size_t b = 0; b < config_.tgcn_blocks; ++b) {
    temporal_gcn_.emplace_back(config_.w_window, b == 0 ? F : config_.tgcn_hidden, config_.tgcn_hidden, rng);
  }
  w_head_ = Linear(config_.w_window * config_.tgcn_hidden, 2 * config_.d_w, rng);

  const std::size_t ew = config_.encoder_width, xw = config_.xdecoder_width;
  z_enc_in_ = JointProjection(F, config_.d_w, ew, rng);
  z_enc_ = TransformerBlock(ew, config_.encoder_heads, config_.encoder_ff, rng);
  z_enc_head_ = Linear(ew, 2 * config_.d_z, rng);

  prior_query_in_ = JointProjection(F, config_.d_w, ew, rng);
  prior_key_in_ = Linear(config_.d_z, ew, rng);
  prior_dec_ = TransformerBlock(ew, config_.encoder_heads, config_.encoder_ff, rng);
  prior_head_ = Linear(ew, 2 * config_.d_z, rng);

  emit_query_in_ = JointProjection(config_.d_z, config_.d_w, xw, rng);
  emit_key_in_ = Linear(F, xw, rng);
  emit_dec_ = TransformerBlock(xw, config_.xdecoder_heads, config_.xdecoder_ff, rng);
  emit_head_ = Linear(xw, 3 * J, rng);

  std::vector<double> mask(3 * J, 1.0);
  mask[0] = mask[1] = mask[2] = 0.0;
  root_mask_ = Tensor::from({1, 3 * J}, std::move(mask));
  shift_ = Tensor::from({1, 3 * J}, std::vector<double>(3 * J, 0.0));
  scale_ = Tensor::from({1, 3 * J}, std::vector<double>(3 * J, 1.0));
}

void HitDvae::set_pose_normalization(std::span<const double> shift, std::span<const double> scale) {
  const std::size_t W = 3 * config_.joints;
  if (shift.size() != W || scale.size() != W) {
    throw ShapeError("pose normalization: expected " + std::to_string(W) + " values, got " +
                     std::to_string(shift.size()) + " and " + std::to_string(scale.size()));
  }
  std::vector<double> sh(shift.begin(), shift.end()), sc(scale.begin(), scale.end());
  for (std::size_t i = 0; i < W; ++i) {
    if (!std::isfinite(sh[i]) || !std::isfinite(sc[i]) || sc[i] <= 0) {
      throw NumericError("pose normalization: bad entry " + std::to_string(i));
    }
  }
  sh[0] = sh[1] = sh[2] = 0.0;
  sc[0] = sc[1] = sc[2] = 1.0;
  normalized_ = std::any_of(sh.begin(), sh.end(), [](double v) { return v != 0.0; }) ||
                std::any_of(sc.begin(), sc.end(), [](double v) { return v != 1.0; });
  shift_ = Tensor::from({1, W}, std::move(sh));
  scale_ = Tensor::from({1, W}, std::move(sc));
}

ParamList HitDvae::parameters() const {
  ParamList p;
  for (std::size_t b = 0; b < encoder_gcn_.size(); ++b) encoder_gcn_[b].collect(p, "f_enc." + std::to_string(b));
  for (std::size_t b = 0; b < decoder_gcn_.size(); ++b) decoder_gcn_[b].collect(p, "f_dec." + std::to_string(b));
  for (std::size_t b = 0; b < temporal_gcn_.size(); ++b) temporal_gcn_[b].collect(p, "w_tgcn." + std::to_string(b));
  w_head_.collect(p, "w_head");
  z_enc_in_.collect(p, "z_enc.in");
  z_enc_.collect(p, "z_enc.block");
  z_enc_head_.collect(p, "z_enc.head");
  prior_query_in_.collect(p, "z_dec.query_in");
  prior_key_in_.collect(p, "z_dec.key_in");
  prior_dec_.collect(p, "z_dec.block");
  prior_head_.collect(p, "z_dec.head");
  emit_query_in_.collect(p, "x_dec.query_in");
  emit_key_in_.collect(p, "x_dec.key_in");
  emit_dec_.collect(p, "x_dec.block");
  emit_head_.collect(p, "x_dec.head");
  return p;
}

Tensor HitDvae::pose_features(const Tensor& poses, FeatureNet net) const {
  if (poses.rank() != 3 || poses.dim(1) != config_.joints || poses.dim(2) != 3) {
    throw ShapeError("pose features: expected T x " + std::to_string(config_.joints) + " x 3 poses, got " +
                     shape_str(poses.shape()));
  }
  const auto& blocks = net == FeatureNet::Encoder ? encoder_gcn_ : decoder_gcn_;
  Tensor h = poses;
  if (normalized_) {
    const std::size_t J = config_.joints;
    h = div(sub(h, reshape(shift_, {J, 3})), reshape(scale_, {J, 3}));
  }
  for (const auto& b : blocks) h = b.forward(h);
  return reshape(h, {poses.dim(0), feature_width()});
}

DiagGaussian HitDvae::split_gaussian(const Tensor& head_out, std::size_t width) const {
  const double c = config_.logvar_clamp;
  return {slice(head_out, 1, 0, width), clamp(slice(head_out, 1, width, 2 * width), -c, c)};
}

Tensor HitDvae::with_positions(const Tensor& rows, const std::vector<std::size_t>& positions) const {
  if (!config_.positional_encoding) return rows;
  return add(rows, sinusoidal_encoding(positions, rows.dim(1)));
}

DiagGaussian HitDvae::infer_w(const Tensor& window) const {
  if (window.rank() != 3 || window.dim(0) != config_.w_window) {
    throw ShapeError("infer-w: window " + shape_str(window.shape()) + " must hold exactly " +
                     std::to_string(config_.w_window) + " frames");
  }
  Tensor h = pose_features(window, FeatureNet::Encoder);
  for (const auto& b : temporal_gcn_) h = b.forward(h);
  return split_gaussian(w_head_.forward(reshape(h, {1, h.numel()})), config_.d_w);
}

DiagGaussian HitDvae::infer_z(const Tensor& poses, const Tensor& w) const {
  const Tensor f = pose_features(poses, FeatureNet::Encoder);
  const std::size_t T = f.dim(0);
  const Tensor rows = with_positions(z_enc_in_.forward(f, w), iota_positions(0, T));
  return split_gaussian(z_enc_head_.forward(z_enc_.forward(rows, rows, AttentionMask::full(T, T))), config_.d_z);
}

Tensor HitDvae::prior_queries(const Tensor& prev_features, const Tensor& w,
                              const std::vector<std::size_t>& positions) const {
  return with_positions(prior_query_in_.forward(prev_features, w), positions);
}

Tensor HitDvae::prior_key_inputs(const Tensor& z, const std::vector<std::size_t>& positions) const {
  return with_positions(prior_key_in_.forward(z), positions);
}

Tensor HitDvae::emit_queries(const Tensor& z, const Tensor& w, const std::vector<std::size_t>& positions) const {
  return with_positions(emit_query_in_.forward(z, w), positions);
}

Tensor HitDvae::emit_key_inputs(const Tensor& features, const std::vector<std::size_t>& positions) const {
  return with_positions(emit_key_in_.forward(features), positions);
}

DiagGaussian HitDvae::prior_head(const Tensor& block_out) const {
  return split_gaussian(prior_head_.forward(block_out), config_.d_z);
}

Tensor HitDvae::emission_head(const Tensor& block_out, const Tensor& prev) const {
  Tensor out = emit_head_.forward(block_out);
  if (config_.emission_residual) {
    if (normalized_) out = mul(out, scale_);
    out = add(prev, out);
  } else if (normalized_) {
    out = add(mul(out, scale_), shift_);
  }
  return mul(out, root_mask_);
}

DiagGaussian HitDvae::prior_z(std::size_t t, const Tensor& prev_features, const Tensor& z_history,
                              const Tensor& w) const {
  if (t == 0) throw std::invalid_argument("prior-z: frame 0 has no prior (the initial state is not modeled)");
  if (z_history.rank() != 2 || z_history.dim(0) != t || z_history.dim(1) != config_.d_z) {
    throw ShapeError("prior-z: z history " + shape_str(z_history.shape()) + " must be " + std::to_string(t) + " x " +
                     std::to_string(config_.d_z));
  }
  const Tensor q = prior_queries(prev_features, w, {t});
  const Tensor k = prior_key_inputs(z_history, iota_positions(0, t));
  return prior_head(prior_dec_.forward(q, k, AttentionMask::full(1, t)));
}

Tensor HitDvae::emit_x(std::size_t t, const Tensor& z_t, const Tensor& w, const Tensor& history_features,
                       const Tensor& prev_pose) const {
  if (t == 0) throw std::invalid_argument("emit-x: frame 0 is never emitted (the initial state is not modeled)");
  if (history_features.rank() != 2 || history_features.dim(0) != t) {
    throw ShapeError("emit-x: pose history " + shape_str(history_features.shape()) + " must hold " +
                     std::to_string(t) + " frames");
  }
  Tensor prev;
  if (config_.emission_residual) {
    if (!prev_pose.defined() || prev_pose.numel() != 3 * config_.joints) {
      throw ShapeError("emit-x: the residual emission needs x_{t-1} as " + std::to_string(3 * config_.joints) +
                       " values");
    }
    prev = reshape(prev_pose, {1, 3 * config_.joints});
  }
  const Tensor q = emit_queries(z_t, w, {t});
  const Tensor k = emit_key_inputs(history_features, iota_positions(0, t));
  return emission_head(emit_dec_.forward(q, k, AttentionMask::full(1, t)), prev);
}

HitDvae::DecoderOutput HitDvae::decode(const std::vector<Tensor>& inputs, const std::vector<Tensor>& z,
                                       const Tensor& w) const {
  const std::size_t K = z.size();
  if (K == 0) throw std::invalid_argument("decode: no latent paths");
  if (inputs.size() != 1 && inputs.size() != K) {
    throw std::invalid_argument("decode: " + std::to_string(inputs.size()) + " decoder inputs for " +
                                std::to_string(K) + " latent paths");
  }
  const std::size_t T = z[0].dim(0);
  if (T < 2) throw std::invalid_argument("decode: need at least 2 frames");
  for (const auto& zk : z) {
    if (zk.shape() != Shape{T, config_.d_z}) throw ShapeError("decode: latent path " + shape_str(zk.shape()));
  }
  for (const auto& in : inputs) {
    if (in.rank() != 3 || in.dim(0) != T) throw ShapeError("decode: decoder input " + shape_str(in.shape()));
  }
  const bool shared = inputs.size() == 1;
  std::vector<Tensor> history;  // f_D rows 0..T-2 per input
  for (const auto& in : inputs) history.push_back(slice(pose_features(in, FeatureNet::Decoder), 0, 0, T - 1));

  const auto qpos = iota_positions(1, T);
  const auto zpos = iota_positions(0, T);
  const auto xpos = iota_positions(0, T - 1);

  // z prior: query [f_D(x_{t-1}); w], keys z_0..z_{T-1}
  Tensor pq;
  if (shared) {
    const Tensor one = prior_queries(history[0], w, qpos);
    pq = K == 1 ? one : concat(std::vector<Tensor>(K, one), 0);
  } else {
    pq = prior_queries(concat(history, 0), w, tiled(qpos, K));
  }
  const Tensor pk = prior_key_inputs(K == 1 ? z[0] : concat(z, 0), tiled(zpos, K));
  DiagGaussian prior = prior_head(prior_dec_.forward(pq, pk, grouped_causal(K, qpos, zpos)));

  // emission: query [z_t; w], keys f_D(x_0..x_{T-2})
  std::vector<Tensor> zq;
  for (const auto& zk : z) zq.push_back(slice(zk, 0, 1, T));
  const Tensor eq = emit_queries(K == 1 ? zq[0] : concat(zq, 0), w, tiled(qpos, K));
  Tensor prev;  // x_0..x_{T-2}, sample-major like the queries
  if (config_.emission_residual) {
    std::vector<Tensor> rows;
    for (const auto& in : inputs) rows.push_back(reshape(slice(in, 0, 0, T - 1), {T - 1, 3 * config_.joints}));
    if (shared) rows = std::vector<Tensor>(K, rows[0]);
    prev = rows.size() == 1 ? rows[0] : concat(rows, 0);
  }
  Tensor emission;
  if (shared) {
    const Tensor ek = emit_key_inputs(history[0], xpos);
    emission = emission_head(emit_dec_.forward(eq, ek, AttentionMask::strictly_before(tiled(qpos, K), T - 1)), prev);
  } else {
    const Tensor ek = emit_key_inputs(concat(history, 0), tiled(xpos, K));
    emission = emission_head(emit_dec_.forward(eq, ek, grouped_causal(K, qpos, xpos)), prev);
  }
  return {emission, prior};
}

Tensor HitDvae::joint_log_density(const PoseSequence& x, const Tensor& z, const Tensor& w) const {
  const std::size_t T = x.frames;
  const DecoderOutput out = decode({x.tensor()}, {z}, w);
  const Tensor target = slice(x.flat_tensor(), 0, 1, T);
  const Tensor lx = gaussian_log_density(target, {out.emission, Tensor::zeros(out.emission.shape())});
  const Tensor lz = gaussian_log_density(slice(z, 0, 1, T), out.prior);
  const Tensor lw = gaussian_log_density(w, {Tensor::zeros(w.shape()), Tensor::zeros(w.shape())});
  return add(add(sum(lx), sum(lz)), sum(lw));
}

HitDvae::DecoderState HitDvae::start_decoder(const Tensor& w, std::size_t context_cap) const {
  DecoderState s;
  s.w = w;
  s.context_cap = context_cap;
  return s;
}

void HitDvae::push_frame(DecoderState& state, const Tensor& pose, const Tensor& z) const {
  const std::size_t p = state.length;
  const Tensor f = pose_features(as_frame_stack(pose, config_.joints), FeatureNet::Decoder);
  const auto ekv = emit_dec_.attention.project(emit_key_inputs(f, {p}));
  const auto pkv = prior_dec_.attention.project(prior_key_inputs(z, {p}));
  state.emit_keys = append_rows(state.emit_keys, ekv.keys);
  state.emit_values = append_rows(state.emit_values, ekv.values);
  state.prior_keys = append_rows(state.prior_keys, pkv.keys);
  state.prior_values = append_rows(state.prior_values, pkv.values);
  state.last_features = f;
  state.last_pose = reshape(pose, {1, 3 * config_.joints});
  state.length = p + 1;
}

namespace {

MultiHeadAttention::KeyValues windowed(const Tensor& keys, const Tensor& values, std::size_t cap) {
  const std::size_t n = keys.dim(0);
  if (cap == 0 || n <= cap) return {keys, values};
  return {slice(keys, 0, n - cap, n), slice(values, 0, n - cap, n)};
}

}  // namespace

DiagGaussian HitDvae::next_prior(const DecoderState& state) const {
  if (state.length == 0) throw std::invalid_argument("next-prior: no frame pushed yet");
  const auto kv = windowed(state.prior_keys, state.prior_values, state.context_cap);
  const Tensor q = prior_queries(state.last_features, state.w, {state.length});
  return prior_head(prior_dec_.attend(q, kv, AttentionMask::full(1, kv.keys.dim(0))));
}

Tensor HitDvae::next_emission(const DecoderState& state, const Tensor& z) const {
  if (state.length == 0) throw std::invalid_argument("next-emission: no frame pushed yet");
  const auto kv = windowed(state.emit_keys, state.emit_values, state.context_cap);
  const Tensor q = emit_queries(z, state.w, {state.length});
  return emission_head(emit_dec_.attend(q, kv, AttentionMask::full(1, kv.keys.dim(0))), state.last_pose);
}

void HitDvae::save_to(Checkpoint& ck, const std::string& prefix) const {
  ck.put(parameters(), prefix);
  ck.put(prefix + "norm.shift", shift_.shape(), shift_.values());
  ck.put(prefix + "norm.scale", scale_.shape(), scale_.values());
  ck.meta()["model_config"] = config_.to_json();
}

void HitDvae::load_from(const Checkpoint& ck, const std::string& prefix) {
  if (ck.meta().contains("model_config")) {
    const ModelConfig stored = ModelConfig::from_json(ck.meta()["model_config"], "checkpoint.model_config");
    if (!(stored == config_)) {
      throw ConfigError("checkpoint model config " + stored.to_json().dump() + " does not match " +
                        config_.to_json().dump());
    }
  }
  ParamList p = parameters();
  ck.restore(p, prefix);
  const std::string sh = prefix + "norm.shift", sc = prefix + "norm.scale";
  if (ck.contains(sh) != ck.contains(sc)) throw ShapeError("checkpoint has only one of " + sh + " and " + sc);
  if (ck.contains(sh)) set_pose_normalization(ck.get(sh).values, ck.get(sc).values);
}

void HitDvae::zero_emission_head() { emit_head_.zero(); }

}  // namespace hitdvae
