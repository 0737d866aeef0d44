#include "hitdvae/losses.hpp"

#include <cmath>
#include <limits>

#include "hitdvae/json_util.hpp"

namespace hitdvae {

const std::array<const char*, kTermCount> kLossTermNames = {"R",     "MM",    "KLz", "KLw", "DIVl",
                                                            "DIVu",  "L",     "A",   "NF"};

// ---- weights ----

void LossWeights::validate() const {
  const double v[] = {recon, multimodal, kl_z, kl_w, div_lower, div_upper, limb, angle, nf};
  for (std::size_t i = 0; i < kTermCount; ++i) {
    if (!(v[i] >= 0.0) || !std::isfinite(v[i])) {
      throw ConfigError(std::string("weights: weight of ") + kLossTermNames[i] + " must be finite and non-negative");
    }
  }
  if (!(alpha_lower > 0.0) || !(alpha_upper > 0.0)) throw ConfigError("weights: alpha values must be positive");
}

nlohmann::ordered_json LossWeights::to_json() const {
  return {{"recon", recon},         {"multimodal", multimodal}, {"kl_z", kl_z},       {"kl_w", kl_w},
          {"div_lower", div_lower}, {"div_upper", div_upper},   {"limb", limb},       {"angle", angle},
          {"nf", nf},               {"alpha_lower", alpha_lower}, {"alpha_upper", alpha_upper}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  LossWeights w;
  w.recon = o.get_number("recon");
  w.multimodal = o.get_number("multimodal");
  w.kl_z = o.get_number("kl_z");
  w.kl_w = o.get_number("kl_w");
  w.div_lower = o.get_number("div_lower");
  w.div_upper = o.get_number("div_upper");
  w.limb = o.get_number("limb");
  w.angle = o.get_number("angle");
  w.nf = o.get_number("nf");
  w.alpha_lower = o.get_number("alpha_lower");
  w.alpha_upper = o.get_number("alpha_upper");
  o.finish();
  w.validate();
  return w;
}

// Published tuple order: (R, MM, DIV-l, DIV-u, L, A, NF, KL-z, KL-w).
LossWeights LossWeights::humaneva() {
  LossWeights w;
  w.recon = 10;
  w.multimodal = 5;
  w.div_lower = 0.1;
  w.div_upper = 0.2;
  w.limb = 100;
  w.angle = 1;
  w.nf = 0.001;
  w.kl_z = 0.5;
  w.kl_w = 0.1;
  w.alpha_lower = 15;
  w.alpha_upper = 50;
  return w;
}

LossWeights LossWeights::human36m() {
  LossWeights w = humaneva();
  w.recon = 20;
  w.multimodal = 10;
  w.nf = 0.01;
  w.alpha_lower = 100;
  w.alpha_upper = 300;
  return w;
}

// ---- breakdown ----

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  for (std::size_t i = 0; i < kTermCount; ++i) {
    raw[i] += o.raw[i];
    weighted[i] += o.weighted[i];
  }
  total += o.total;
  anneal = o.anneal;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double f) const {
  LossBreakdown b = *this;
  for (std::size_t i = 0; i < kTermCount; ++i) {
    b.raw[i] *= f;
    b.weighted[i] *= f;
  }
  b.total *= f;
  return b;
}

Tensor total_loss(const LossTerms& terms, const LossWeights& w, double anneal, LossBreakdown* breakdown) {
  const double weights[kTermCount] = {w.recon,     w.multimodal,   anneal * w.kl_z, anneal * w.kl_w, w.div_lower,
                                      w.div_upper, w.limb,         w.angle,         w.nf};
  Tensor total;
  LossBreakdown b;
  b.anneal = anneal;
  for (std::size_t i = 0; i < kTermCount; ++i) {
    const Tensor& t = terms.terms[i];
    if (!t.defined()) throw std::invalid_argument(std::string("total loss: term ") + kLossTermNames[i] + " missing");
    if (t.numel() != 1) throw ShapeError(std::string("total loss: term ") + kLossTermNames[i] + " is not a scalar");
    const double v = t.item();
    if (!std::isfinite(v)) throw NumericError(std::string("total loss: term ") + kLossTermNames[i] + " is not finite");
    b.raw[i] = v;
    b.weighted[i] = weights[i] * v;
    b.total += b.weighted[i];
    const Tensor part = scale(reshape(t, {1}), weights[i]);
    total = total.defined() ? add(total, part) : part;
  }
  if (breakdown) *breakdown = b;
  return total;
}

// ---- reconstruction ----

namespace {

Tensor per_row_mse(const Tensor& samples, const Tensor& target) {
  if (samples.rank() != 2 || target.rank() != 2 || target.dim(0) != 1 || samples.dim(1) != target.dim(1)) {
    throw ShapeError("reconstruction: samples " + shape_str(samples.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  return mean(square(sub(samples, target)), 1);
}

Tensor min_entry(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.numel(); ++i)
    if (v[i] < v[best]) best = i;
  return reshape(slice(v, 0, best, best + 1), {1});
}

}  // namespace

Tensor recon_loss(const Tensor& samples, const Tensor& target) {
  if (samples.rank() == 2 && samples.dim(0) == 0) throw std::invalid_argument("reconstruction: empty sample set");
  return min_entry(per_row_mse(samples, target));
}

Tensor multimodal_loss(const Tensor& samples, const Tensor& pseudo) {
  if (pseudo.rank() != 2 || pseudo.dim(0) == 0) throw std::invalid_argument("multi-modal loss: empty pseudo set");
  Tensor acc;
  for (std::size_t m = 0; m < pseudo.dim(0); ++m) {
    const Tensor l = recon_loss(samples, row(pseudo, m));
    acc = acc.defined() ? add(acc, l) : l;
  }
  return scale(acc, 1.0 / static_cast<double>(pseudo.dim(0)));
}

// ---- KL ----

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.shape() != p.mean.shape() || q.logvar.shape() != p.logvar.shape()) {
    throw ShapeError("kl: posterior " + shape_str(q.mean.shape()) + " vs prior " + shape_str(p.mean.shape()));
  }
  const Tensor ratio = div(add(exp(q.logvar), square(sub(q.mean, p.mean))), exp(p.logvar));
  const Tensor per = scale(add_scalar(add(sub(p.logvar, q.logvar), ratio), -1.0), 0.5);
  return mean(sum(per, 1));
}

Tensor kl_standard(const DiagGaussian& q) {
  const Tensor per = scale(sub(add(exp(q.logvar), square(q.mean)), add_scalar(q.logvar, 1.0)), 0.5);
  return mean(sum(per, 1));
}

// ---- diversity ----

Tensor diversity_term(const Tensor& samples, std::size_t joints_per_frame, const std::vector<std::size_t>& part,
                      double alpha) {
  const std::size_t K = samples.dim(0);
  if (K < 2) throw std::invalid_argument("diversity loss: need at least 2 samples");
  const std::size_t fw = joints_per_frame * 3;
  if (samples.rank() != 2 || samples.dim(1) % fw != 0) {
    throw ShapeError("diversity loss: samples " + shape_str(samples.shape()) + " are not whole frames of " +
                     std::to_string(joints_per_frame) + " joints");
  }
  const std::size_t frames = samples.dim(1) / fw;
  std::vector<double> select(fw * part.size() * 3, 0.0);
  for (std::size_t i = 0; i < part.size(); ++i)
    for (std::size_t a = 0; a < 3; ++a) select[(part[i] * 3 + a) * part.size() * 3 + i * 3 + a] = 1.0;
  const Tensor picked = reshape(matmul(reshape(samples, {K * frames, fw}), Tensor::from({fw, part.size() * 3}, select)),
                                {K, frames * part.size() * 3});
  const std::size_t pairs = K * (K - 1) / 2;
  std::vector<double> diff(pairs * K, 0.0);
  std::size_t r = 0;
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = a + 1; b < K; ++b, ++r) {
      diff[r * K + a] = 1.0;
      diff[r * K + b] = -1.0;
    }
  const Tensor dist = sum(abs(matmul(Tensor::from({pairs, K}, diff), picked)), 1);
  return mean(exp(scale(dist, -1.0 / alpha)));
}

// ---- skeleton realism ----

namespace {

void check_poses(const Tensor& poses, const Skeleton& s) {
  if (poses.rank() != 2 || poses.dim(1) != s.joints() * 3) {
    throw ShapeError("pose loss: poses " + shape_str(poses.shape()) + " do not match " + std::to_string(s.joints()) +
                     " joints");
  }
}

// J*3 x (n*3) matrix mapping a pose to the n vectors pose[to_i] - pose[from_i].
Tensor bone_selector(std::size_t joints, const std::vector<std::pair<std::size_t, std::size_t>>& from_to) {
  const std::size_t n = from_to.size();
  std::vector<double> m(joints * 3 * n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      m[(from_to[i].second * 3 + a) * n * 3 + i * 3 + a] += 1.0;
      m[(from_to[i].first * 3 + a) * n * 3 + i * 3 + a] -= 1.0;
    }
  return Tensor::from({joints * 3, n * 3}, std::move(m));
}

}  // namespace

Tensor limb_loss(const Tensor& poses, const Skeleton& s) {
  check_poses(poses, s);
  const std::size_t N = poses.dim(0), E = s.edges.size();
  std::vector<std::pair<std::size_t, std::size_t>> bones;
  std::vector<double> ref;
  for (const auto& e : s.edges) {
    bones.emplace_back(e.parent, e.child);
    ref.push_back(e.length);
  }
  const Tensor vec = reshape(matmul(poses, bone_selector(s.joints(), bones)), {N * E, 3});
  const Tensor len = reshape(sqrt(sum(square(vec), 1)), {N, E});
  return mean(square(sub(len, Tensor::from({1, E}, ref))));
}

AngleLossResult angle_loss(const Tensor& poses, const Skeleton& s) {
  check_poses(poses, s);
  const std::size_t N = poses.dim(0), H = s.hinges.size();
  if (H == 0) return {Tensor::zeros({1}), 0};
  std::vector<std::pair<std::size_t, std::size_t>> to_parent, to_child;
  std::vector<double> lo, hi;
  for (const auto& h : s.hinges) {
    to_parent.emplace_back(h.joint, h.parent);
    to_child.emplace_back(h.joint, h.child);
    lo.push_back(h.min_angle);
    hi.push_back(h.max_angle);
  }
  const Tensor a = reshape(matmul(poses, bone_selector(s.joints(), to_parent)), {N * H, 3});
  const Tensor b = reshape(matmul(poses, bone_selector(s.joints(), to_child)), {N * H, 3});
  const Tensor na = sqrt(sum(square(a), 1));
  const Tensor nb = sqrt(sum(square(b), 1));
  // Degenerate hinges get a unit denominator and a zero weight.
  std::vector<double> keep(N * H), pad(N * H);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < N * H; ++i) {
    const bool ok = na[i] * nb[i] > 1e-12;
    keep[i] = ok ? 1.0 : 0.0;
    pad[i] = ok ? 0.0 : 1.0;
    skipped += ok ? 0 : 1;
  }
  const Tensor keep_t = Tensor::from({N * H}, keep);
  const Tensor cosine = div(sum(mul(a, b), 1), add(mul(na, nb), Tensor::from({N * H}, pad)));
  const Tensor angle = reshape(acos(cosine), {N, H});
  const Tensor over = relu(sub(angle, Tensor::from({1, H}, hi)));
  const Tensor under = relu(sub(Tensor::from({1, H}, lo), angle));
  const Tensor viol = mul(reshape(square(add(over, under)), {N * H}), keep_t);
  return {scale(sum(viol), 1.0 / static_cast<double>(N)), skipped};
}

std::vector<double> hinge_angles(std::span<const double> pose, const Skeleton& s) {
  std::vector<double> out;
  for (const auto& h : s.hinges) {
    double a[3], b[3], na = 0, nb = 0, dot = 0;
    for (int k = 0; k < 3; ++k) {
      a[k] = pose[h.parent * 3 + k] - pose[h.joint * 3 + k];
      b[k] = pose[h.child * 3 + k] - pose[h.joint * 3 + k];
      na += a[k] * a[k];
      nb += b[k] * b[k];
      dot += a[k] * b[k];
    }
    if (na * nb <= 1e-24) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.push_back(std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0)));
  }
  return out;
}

Tensor nonroot_coordinates(const Tensor& poses) {
  if (poses.rank() != 2 || poses.dim(1) < 6 || poses.dim(1) % 3 != 0) {
    throw ShapeError("flow input: poses " + shape_str(poses.shape()) + " are not N x (J*3) with J >= 2");
  }
  return slice(poses, 1, 3, poses.dim(1));
}

Tensor nf_loss(const Tensor& poses, const CouplingFlow& flow, double calibration) {
  const Tensor lp = flow.log_prob(nonroot_coordinates(poses));
  return mean(relu(add_scalar(neg(lp), -calibration)));
}

}  // namespace hitdvae
