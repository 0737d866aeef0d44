#include "hitdvae/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hitdvae/checkpoint.hpp"

namespace hitdvae {

namespace {

constexpr double kHiddenLogit = -1e30;

Tensor identity_plus_noise(std::size_t n, Rng& rng, double noise) {
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = (i == j ? 1.0 : 0.0) + noise * rng.normal();
  return Tensor::from({n, n}, std::move(v), true);
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

// ---- Linear ----

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double init_scale) {
  const double s = init_scale / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& x : w) x = rng.uniform(-s, s);
  weight = Tensor::from({in, out}, std::move(w), true);
  bias = Tensor::zeros({1, out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_width()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

void Linear::zero() {
  for (double& x : weight.mutable_values()) x = 0.0;
  for (double& x : bias.mutable_values()) x = 0.0;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return tanh(x);
    case Activation::Relu:
      return relu(x);
    case Activation::Identity:
      break;
  }
  return x;
}

// ---- GcnBlock ----

GcnBlock::GcnBlock(std::size_t nodes, std::size_t in, std::size_t out, Rng& rng, Activation act)
    : adjacency(identity_plus_noise(nodes, rng, 0.01)), activation(act) {
  Linear lin(in, out, rng);
  weight = lin.weight;
  bias = lin.bias;
}

Tensor GcnBlock::forward(const Tensor& features) const {
  const bool stacked = features.rank() == 3;
  if (features.rank() != 2 && !stacked) throw ShapeError("gcn: expected N x F or B x N x F, got " + shape_str(features.shape()));
  const std::size_t n = stacked ? features.dim(1) : features.dim(0);
  const std::size_t f = stacked ? features.dim(2) : features.dim(1);
  if (n != nodes()) {
    throw ShapeError("gcn: feature rows " + std::to_string(n) + " do not match node count " + std::to_string(nodes()));
  }
  if (f != weight.dim(0)) {
    throw ShapeError("gcn: feature width " + std::to_string(f) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t batch = stacked ? features.dim(0) : 1;
  Tensor xw = matmul(reshape(features, {batch * n, f}), weight);
  Tensor mixed = apply_left(adjacency, stacked ? reshape(xw, {batch, n, out_width()}) : xw);
  return activate(add(mixed, bias), activation);
}

void GcnBlock::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".adjacency", adjacency});
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

// ---- AttentionMask ----

AttentionMask::AttentionMask(std::size_t queries, std::size_t keys, bool visible)
    : queries_(queries), keys_(keys), bits_(queries * keys, visible ? 1 : 0) {}

AttentionMask AttentionMask::strictly_before(const std::vector<std::size_t>& query_positions, std::size_t keys) {
  AttentionMask m(query_positions.size(), keys, false);
  for (std::size_t q = 0; q < query_positions.size(); ++q)
    for (std::size_t k = 0; k < keys && k < query_positions[q]; ++k) m.set(q, k, true);
  return m;
}

Tensor AttentionMask::additive_bias() const {
  std::vector<double> v(bits_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = bits_[i] ? 0.0 : kHiddenLogit;
  return Tensor::from({queries_, keys_}, std::move(v));
}

void AttentionMask::validate() const {
  for (std::size_t q = 0; q < queries_; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys_ && !any; ++k) any = visible(q, k);
    if (!any) {
      throw std::invalid_argument("attention mask row " + std::to_string(q) + " hides every key (" +
                                  std::to_string(keys_) + " keys); check causal indexing");
    }
  }
}

namespace {

bool all_visible(const AttentionMask& m) {
  for (std::size_t q = 0; q < m.queries(); ++q)
    for (std::size_t k = 0; k < m.keys(); ++k)
      if (!m.visible(q, k)) return false;
  return true;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask, bool dense) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor logits = scale(matmul(q, transpose(k)), inv);
  if (!dense) logits = add(logits, mask.additive_bias());
  return matmul(softmax(logits, 1), v);
}

}  // namespace

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: incompatible Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " +
                     shape_str(v.shape()));
  }
  if (mask.queries() != q.dim(0) || mask.keys() != k.dim(0)) {
    throw ShapeError("attention: mask " + std::to_string(mask.queries()) + "x" + std::to_string(mask.keys()) +
                     " does not match " + std::to_string(q.dim(0)) + " queries and " + std::to_string(k.dim(0)) + " keys");
  }
  mask.validate();
  return attention_core(q, k, v, mask, all_visible(mask));
}

// ---- MultiHeadAttention ----

MultiHeadAttention::MultiHeadAttention(std::size_t width_, std::size_t heads_, Rng& rng)
    : width(width_), heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("multi-head attention: width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  query = Linear(width, width, rng);
  key = Linear(width, width, rng);
  value = Linear(width, width, rng);
  output = Linear(width, width, rng);
}

MultiHeadAttention::KeyValues MultiHeadAttention::project(const Tensor& kv_in) const {
  return {key.forward(kv_in), value.forward(kv_in)};
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const {
  return attend(q_in, project(kv_in), mask);
}

Tensor MultiHeadAttention::attend(const Tensor& q_in, const KeyValues& kv, const AttentionMask& mask) const {
  if (mask.queries() != q_in.dim(0) || mask.keys() != kv.keys.dim(0)) {
    throw ShapeError("attention: mask " + std::to_string(mask.queries()) + "x" + std::to_string(mask.keys()) +
                     " does not match " + std::to_string(q_in.dim(0)) + " queries and " +
                     std::to_string(kv.keys.dim(0)) + " keys");
  }
  mask.validate();
  const bool dense = all_visible(mask);
  const Tensor q = query.forward(q_in);
  if (heads == 1) return output.forward(attention_core(q, kv.keys, kv.values, mask, dense));
  const std::size_t dk = head_width();
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    parts.push_back(attention_core(slice(q, 1, h * dk, (h + 1) * dk), slice(kv.keys, 1, h * dk, (h + 1) * dk),
                                   slice(kv.values, 1, h * dk, (h + 1) * dk), mask, dense));
  }
  return output.forward(concat(parts, 1));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  query.collect(out, prefix + ".q");
  key.collect(out, prefix + ".k");
  value.collect(out, prefix + ".v");
  output.collect(out, prefix + ".o");
}

// ---- TransformerBlock ----

TransformerBlock::TransformerBlock(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng)
    : attention(width, heads, rng),
      norm1_gain(Tensor::full({1, width}, 1.0, true)),
      norm1_bias(Tensor::zeros({1, width}, true)),
      norm2_gain(Tensor::full({1, width}, 1.0, true)),
      norm2_bias(Tensor::zeros({1, width}, true)),
      ff_in(width, ff_width, rng),
      ff_out(ff_width, width, rng) {}

Tensor TransformerBlock::forward(const Tensor& q_in, const Tensor& kv_in, const AttentionMask& mask) const {
  return attend(q_in, attention.project(kv_in), mask);
}

Tensor TransformerBlock::attend(const Tensor& q_in, const MultiHeadAttention::KeyValues& kv,
                                const AttentionMask& mask) const {
  Tensor h = add(mul(layer_norm(add(q_in, attention.attend(q_in, kv, mask))), norm1_gain), norm1_bias);
  Tensor ff = ff_out.forward(relu(ff_in.forward(h)));
  return add(mul(layer_norm(add(h, ff)), norm2_gain), norm2_bias);
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
  attention.collect(out, prefix + ".attn");
  out.push_back({prefix + ".ln1.gain", norm1_gain});
  out.push_back({prefix + ".ln1.bias", norm1_bias});
  ff_in.collect(out, prefix + ".ff_in");
  ff_out.collect(out, prefix + ".ff_out");
  out.push_back({prefix + ".ln2.gain", norm2_gain});
  out.push_back({prefix + ".ln2.bias", norm2_bias});
}

Tensor sinusoidal_encoding(const std::vector<std::size_t>& positions, std::size_t width) {
  std::vector<double> v(positions.size() * width);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      v[r * width + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return Tensor::from({positions.size(), width}, std::move(v));
}

// ---- GruCell ----

GruCell::GruCell(std::size_t input_width, std::size_t hidden_width, Rng& rng)
    : input_gates(input_width, 3 * hidden_width, rng), hidden_gates(hidden_width, 3 * hidden_width, rng) {}

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
  const std::size_t hw = hidden_width();
  if (x.rank() != 2 || x.dim(1) != input_width()) {
    throw ShapeError("gru: input " + shape_str(x.shape()) + " does not match input width " + std::to_string(input_width()));
  }
  if (h.rank() != 2 || h.dim(1) != hw || h.dim(0) != x.dim(0)) {
    throw ShapeError("gru: hidden " + shape_str(h.shape()) + " does not match width " + std::to_string(hw) +
                     " and batch " + std::to_string(x.dim(0)));
  }
  const Tensor gi = input_gates.forward(x);
  const Tensor gh = hidden_gates.forward(h);
  const Tensor r = sigmoid(add(slice(gi, 1, 0, hw), slice(gh, 1, 0, hw)));
  const Tensor z = sigmoid(add(slice(gi, 1, hw, 2 * hw), slice(gh, 1, hw, 2 * hw)));
  const Tensor n = tanh(add(slice(gi, 1, 2 * hw, 3 * hw), mul(r, slice(gh, 1, 2 * hw, 3 * hw))));
  return add(n, mul(z, sub(h, n)));
}

void GruCell::collect(ParamList& out, const std::string& prefix) const {
  input_gates.collect(out, prefix + ".input");
  hidden_gates.collect(out, prefix + ".hidden");
}

// ---- CouplingFlow ----

CouplingFlow::CouplingFlow(std::size_t dim, std::size_t layers, std::size_t hidden, Rng& rng)
    : dim_(dim), hidden_(hidden), shift_(dim, 0.0), log_scale_(dim, 0.0) {
  if (dim == 0 || layers == 0) throw std::invalid_argument("coupling flow: dimension and layer count must be positive");
  for (std::size_t l = 0; l < layers; ++l) {
    CouplingLayer layer;
    std::vector<double> m(dim);
    for (std::size_t i = 0; i < dim; ++i) m[i] = ((i + l) % 2 == 0) ? 1.0 : 0.0;
    layer.mask = Tensor::from({1, dim}, std::move(m));
    layer.hidden1 = Linear(dim, hidden, rng);
    layer.hidden2 = Linear(hidden, hidden, rng);
    layer.out = Linear(hidden, 2 * dim, rng);
    layer.out.zero();
    layers_.push_back(std::move(layer));
  }
}

Tensor CouplingFlow::conditioner(const CouplingLayer& layer, const Tensor& masked_input, Tensor& scale_out) const {
  const Tensor h = tanh(layer.hidden2.forward(tanh(layer.hidden1.forward(masked_input))));
  const Tensor o = layer.out.forward(h);
  const Tensor free = add_scalar(neg(layer.mask), 1.0);
  scale_out = mul(tanh(slice(o, 1, 0, dim_)), free);
  return mul(slice(o, 1, dim_, 2 * dim_), free);
}

Tensor CouplingFlow::layer_scales(std::size_t layer, const Tensor& layer_input) const {
  Tensor s;
  conditioner(layers_.at(layer), mul(layer_input, layers_.at(layer).mask), s);
  return s;
}

CouplingFlow::Pass CouplingFlow::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != dim_) {
    throw ShapeError("flow: input " + shape_str(x.shape()) + " does not match dimension " + std::to_string(dim_));
  }
  const std::size_t n = x.dim(0);
  std::vector<double> inv_scale(dim_);
  double log_det0 = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    inv_scale[i] = std::exp(-log_scale_[i]);
    log_det0 -= log_scale_[i];
  }
  Tensor u = mul(sub(x, Tensor::from({1, dim_}, shift_)), Tensor::from({1, dim_}, std::move(inv_scale)));
  Tensor log_det = Tensor::full({n, 1}, log_det0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Tensor s;
    const Tensor t = conditioner(layer, mul(u, layer.mask), s);
    u = add(mul(u, exp(s)), t);
    log_det = add(log_det, sum(s, 1, true));
    if (!all_finite(u.values())) throw NumericError("flow: non-finite output at coupling layer " + std::to_string(l));
  }
  return {u, log_det};
}

Tensor CouplingFlow::log_prob(const Tensor& x) const {
  const Pass p = forward(x);
  const double norm = -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
  Tensor lp = add(add_scalar(scale(sum(square(p.latent), 1, true), -0.5), norm), p.log_det);
  if (!all_finite(lp.values())) throw NumericError("flow: non-finite log-probability");
  return lp;
}

std::vector<double> CouplingFlow::inverse(std::span<const double> latent) const {
  if (latent.size() % dim_ != 0) throw ShapeError("flow inverse: value count not a multiple of dimension");
  NoGradGuard guard;
  const std::size_t n = latent.size() / dim_;
  Tensor y = Tensor::from({n, dim_}, {latent.begin(), latent.end()});
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    Tensor s;
    const Tensor t = conditioner(layer, mul(y, layer.mask), s);
    y = mul(sub(y, t), exp(neg(s)));
  }
  std::vector<double> x(y.values().begin(), y.values().end());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < dim_; ++i) x[r * dim_ + i] = x[r * dim_ + i] * std::exp(log_scale_[i]) + shift_[i];
  return x;
}

void CouplingFlow::set_standardization(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != dim_ || stddev.size() != dim_) throw ShapeError("flow: standardization width mismatch");
  shift_ = std::move(mean);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (!(stddev[i] > 0.0)) throw std::invalid_argument("flow: standardization scale must be positive");
    log_scale_[i] = std::log(stddev[i]);
  }
}

ParamList CouplingFlow::parameters() const {
  ParamList out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "coupling" + std::to_string(l);
    layers_[l].hidden1.collect(out, p + ".h1");
    layers_[l].hidden2.collect(out, p + ".h2");
    layers_[l].out.collect(out, p + ".out");
  }
  return out;
}

void CouplingFlow::save_to(Checkpoint& ck, const std::string& prefix) const {
  ck.put(parameters(), prefix);
  ck.put(prefix + "shift", {1, dim_}, shift_);
  ck.put(prefix + "log_scale", {1, dim_}, log_scale_);
}

void CouplingFlow::load_from(const Checkpoint& ck, const std::string& prefix) {
  ParamList params = parameters();
  ck.restore(params, prefix);
  const auto& s = ck.get(prefix + "shift");
  const auto& ls = ck.get(prefix + "log_scale");
  if (s.values.size() != dim_ || ls.values.size() != dim_) throw ShapeError("flow checkpoint dimension mismatch");
  shift_ = s.values;
  log_scale_ = ls.values;
}

}  // namespace hitdvae
