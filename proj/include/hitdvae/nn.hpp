#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hitdvae/optim.hpp"
#include "hitdvae/random.hpp"
#include "hitdvae/tensor.hpp"

namespace hitdvae {

class Checkpoint;

/// y = x W + b with W stored in x out layout.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  /// Uniform(-s, s) weights with s = init_scale / sqrt(in); zero bias.
  Linear(std::size_t in, std::size_t out, Rng& rng, double init_scale = 1.0);

  std::size_t in_width() const { return weight.dim(0); }
  std::size_t out_width() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const;
  void zero();
  void collect(ParamList& out, const std::string& prefix) const;
};

enum class Activation { Identity, Tanh, Relu };

Tensor activate(const Tensor& x, Activation act);

/// Graph convolution X' = act(A X W + b) over N nodes with a learnable adjacency.
struct GcnBlock {
  Tensor adjacency;
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::Tanh;

  GcnBlock() = default;
  /// Adjacency starts at I + N(0, 0.01^2) noise.
  GcnBlock(std::size_t nodes, std::size_t in, std::size_t out, Rng& rng, Activation act = Activation::Tanh);

  std::size_t nodes() const { return adjacency.dim(0); }
  std::size_t out_width() const { return weight.dim(1); }
  /// Accepts N x F or a B x N x F stack.
  Tensor forward(const Tensor& features) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Boolean visibility matrix (queries x keys), true = visible.
class AttentionMask {
 public:
  AttentionMask(std::size_t queries, std::size_t keys, bool visible);

  static AttentionMask full(std::size_t queries, std::size_t keys) { return {queries, keys, true}; }
  /// Key j is visible to a query at frame position p iff j < p (0-based positions).
  static AttentionMask strictly_before(const std::vector<std::size_t>& query_positions, std::size_t keys);

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool visible(std::size_t q, std::size_t k) const { return bits_[q * keys_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { bits_[q * keys_ + k] = v ? 1 : 0; }
  /// 0 for visible entries, -1e30 for hidden ones.
  Tensor additive_bias() const;
  /// Throws if some query row has no visible key.
  void validate() const;

 private:
  std::size_t queries_;
  std::size_t keys_;
  std::vector<std::uint8_t> bits_;
};

/// Single-head softmax(Q K^T / sqrt(d_k) + mask) V. Hidden keys get exactly zero weight.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask);

struct MultiHeadAttention {
  std::size_t width = 0;
  std::size_t heads = 1;
  Linear query, key, value, output;

  struct KeyValues {
    Tensor keys;
    Tensor values;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  std::size_t head_width() const { return width / heads; }
  KeyValues project(const Tensor& kv_in) const;
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const;
  /// Attention against already-projected keys/values.
  Tensor attend(const Tensor& q_in, const KeyValues& kv, const AttentionMask& mask) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Post-norm transformer layer: h = LN(q + MHA(q, kv)), out = LN(h + FF(h)).
struct TransformerBlock {
  MultiHeadAttention attention;
  Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  Linear ff_in, ff_out;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng);

  std::size_t width() const { return attention.width; }
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const;
  Tensor attend(const Tensor& q_in, const MultiHeadAttention::KeyValues& kv, const AttentionMask& mask) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Standard sinusoidal position codes, one row per position.
Tensor sinusoidal_encoding(const std::vector<std::size_t>& positions, std::size_t width);

/// r = s(x W_ir + h W_hr), z = s(x W_iz + h W_hz), n = tanh(x W_in + r * (h W_hn)), h' = (1 - z) n + z h.
struct GruCell {
  Linear input_gates;
  Linear hidden_gates;

  GruCell() = default;
  GruCell(std::size_t input_width, std::size_t hidden_width, Rng& rng);

  std::size_t input_width() const { return input_gates.in_width(); }
  std::size_t hidden_width() const { return hidden_gates.in_width(); }
  /// x is B x input_width, h is B x hidden_width.
  Tensor step(const Tensor& x, const Tensor& h) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Affine coupling layer: coordinates with mask 1 condition the scale/shift of the rest.
struct CouplingLayer {
  Tensor mask;  // 1 x D, constant
  Linear hidden1, hidden2, out;
};

/// Fixed standardization followed by a stack of affine coupling layers with
/// alternating masks. Maps data x to latent u with u ~ N(0, I).
class CouplingFlow {
 public:
  CouplingFlow() = default;
  CouplingFlow(std::size_t dim, std::size_t layers, std::size_t hidden, Rng& rng);

  struct Pass {
    Tensor latent;   // N x D
    Tensor log_det;  // N x 1
  };

  std::size_t dim() const { return dim_; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t hidden() const { return hidden_; }
  Pass forward(const Tensor& x) const;
  /// log N(forward(x); 0, I) + log|det J|, one row per input row. Throws NumericError
  /// naming the layer when a non-finite value appears.
  Tensor log_prob(const Tensor& x) const;
  /// Inverse map of N x D latent values.
  std::vector<double> inverse(std::span<const double> latent) const;
  /// Scale outputs s(x) of one layer, for inspection.
  Tensor layer_scales(std::size_t layer, const Tensor& layer_input) const;

  void set_standardization(std::vector<double> mean, std::vector<double> stddev);
  const std::vector<double>& shift() const { return shift_; }
  const std::vector<double>& log_scale() const { return log_scale_; }

  ParamList parameters() const;
  void save_to(Checkpoint& ck, const std::string& prefix) const;
  void load_from(const Checkpoint& ck, const std::string& prefix);

 private:
  Tensor conditioner(const CouplingLayer& layer, const Tensor& masked_input, Tensor& scale) const;

  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> shift_;
  std::vector<double> log_scale_;
  std::vector<CouplingLayer> layers_;
};

}  // namespace hitdvae
