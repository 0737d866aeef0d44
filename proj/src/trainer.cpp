#include "hitdvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "hitdvae/json_util.hpp"
#include "hitdvae/parallel.hpp"

namespace hitdvae {

namespace {

// stream tags for derive_seed
constexpr std::uint64_t kStreamBatch = 1;
constexpr std::uint64_t kStreamExample = 2;
constexpr std::uint64_t kStreamFlow = 3;

}  // namespace

// ---- schedule ----

void TrainSchedule::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("schedule.") + key + ": must be positive");
  };
  positive(epochs, "epochs");
  positive(samples_per_epoch, "samples_per_epoch");
  positive(batch_size, "batch_size");
  positive(kl_anneal_epochs, "kl_anneal_epochs");
  positive(ss_ramp_epochs, "ss_ramp_epochs");
  positive(checkpoint_every, "checkpoint_every");
  positive(mm_max, "mm_max");
  if (samples < 2) throw ConfigError("schedule.samples: need K >= 2 for the diversity terms");
  if (observed < 2 || observed >= frames) throw ConfigError("schedule.observed: must lie in [2, frames)");
  if (!(learning_rate > 0)) throw ConfigError("schedule.learning_rate: must be positive");
  if (!(clip_norm > 0)) throw ConfigError("schedule.clip_norm: must be positive");
  if (!(mm_radius > 0)) throw ConfigError("schedule.mm_radius: must be positive");
}

nlohmann::ordered_json TrainSchedule::to_json() const {
  return {{"epochs", epochs},
          {"samples_per_epoch", samples_per_epoch},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"kl_anneal_epochs", kl_anneal_epochs},
          {"ss_ramp_epochs", ss_ramp_epochs},
          {"samples", samples},
          {"frames", frames},
          {"observed", observed},
          {"clip_norm", clip_norm},
          {"checkpoint_every", checkpoint_every},
          {"resample_w_per_sample", resample_w_per_sample},
          {"mm_radius", mm_radius},
          {"mm_max", mm_max}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  TrainSchedule s;
  s.epochs = o.get_count("epochs");
  s.samples_per_epoch = o.get_count("samples_per_epoch");
  s.batch_size = o.get_count("batch_size");
  s.learning_rate = o.get_number("learning_rate");
  s.kl_anneal_epochs = o.get_count("kl_anneal_epochs");
  s.ss_ramp_epochs = o.get_count("ss_ramp_epochs");
  s.samples = o.get_count("samples");
  s.frames = o.get_count("frames");
  s.observed = o.get_count("observed");
  s.clip_norm = o.get_number("clip_norm");
  s.checkpoint_every = o.get_count("checkpoint_every");
  s.resample_w_per_sample = o.get<bool>("resample_w_per_sample");
  s.mm_radius = o.get_number("mm_radius");
  s.mm_max = o.get_count("mm_max");
  o.finish();
  s.validate();
  return s;
}

double ss_probability(std::size_t epoch, const TrainSchedule& s) {
  const double v = (static_cast<double>(epoch) - static_cast<double>(s.kl_anneal_epochs)) /
                   static_cast<double>(s.ss_ramp_epochs);
  return std::clamp(v, 0.0, 1.0);
}

double kl_anneal(std::size_t epoch, const TrainSchedule& s) {
  return std::min(static_cast<double>(epoch) / static_cast<double>(s.kl_anneal_epochs), 1.0);
}

// ---- scheduled sampling ----

std::vector<FrameSource> scheduled_mask(std::size_t frames, std::size_t protect, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("scheduled sampling: probability must lie in [0, 1]");
  std::vector<FrameSource> mask(frames, FrameSource::GroundTruth);
  for (std::size_t t = 0; t < frames; ++t) {
    const double u = rng.uniform();
    if (t >= protect && u < p) mask[t] = FrameSource::Generated;
  }
  return mask;
}

Tensor scheduled_input(const Tensor& gt, const Tensor& generated, const std::vector<FrameSource>& mask) {
  if (gt.shape() != generated.shape()) {
    throw ShapeError("scheduled input: ground truth " + shape_str(gt.shape()) + " vs generated " +
                     shape_str(generated.shape()));
  }
  if (gt.dim(0) != mask.size()) throw ShapeError("scheduled input: mask length does not match the frame count");
  const std::size_t fw = gt.numel() / gt.dim(0);
  std::vector<double> out(gt.values().begin(), gt.values().end());
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t] == FrameSource::Generated)
      std::copy_n(generated.values().begin() + static_cast<std::ptrdiff_t>(t * fw), fw, out.begin() + static_cast<std::ptrdiff_t>(t * fw));
  return Tensor::from(gt.shape(), std::move(out));
}

// ---- pseudo ground truth ----

std::vector<WindowRef> enumerate_windows(const Corpus& corpus, const std::vector<std::size_t>& clips, std::size_t frames) {
  std::vector<WindowRef> out;
  for (std::size_t c : clips) {
    const std::size_t n = corpus.clips.at(c).poses.frames;
    if (n < frames) continue;
    for (std::size_t s = 0; s + frames <= n; ++s) out.push_back({c, s});
  }
  return out;
}

std::vector<WindowRef> select_pseudo_gt(const Corpus& corpus, const std::vector<WindowRef>& candidates,
                                        std::span<const double> pose, std::size_t observed,
                                        std::optional<std::size_t> exclude_clip, double radius, std::size_t max) {
  const double limit = radius * corpus.skeleton.mean_limb_length();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const WindowRef& r = candidates[i];
    if (exclude_clip && r.clip == *exclude_clip) continue;
    const auto q = corpus.clips[r.clip].poses.frame(r.start + observed - 1);
    if (q.size() != pose.size()) throw ShapeError("pseudo-GT: pose width mismatch");
    double d = 0;
    for (std::size_t k = 0; k < q.size(); ++k) d += (q[k] - pose[k]) * (q[k] - pose[k]);
    scored.emplace_back(std::sqrt(d), i);
  }
  if (scored.empty()) throw std::invalid_argument("pseudo-GT: no candidate windows");
  std::sort(scored.begin(), scored.end());
  std::vector<WindowRef> out;
  for (const auto& [d, i] : scored) {
    if (d > limit || out.size() == max) break;
    out.push_back(candidates[i]);
  }
  if (out.empty()) out.push_back(candidates[scored.front().second]);
  return out;
}

Tensor future_rows(const Corpus& corpus, const std::vector<WindowRef>& refs, std::size_t frames, std::size_t observed) {
  if (refs.empty()) throw std::invalid_argument("pseudo-GT: empty set");
  const std::size_t fw = corpus.clips[refs[0].clip].poses.frame_width();
  const std::size_t width = (frames - observed) * fw;
  std::vector<double> v;
  v.reserve(refs.size() * width);
  for (const auto& r : refs) {
    const auto& p = corpus.clips[r.clip].poses;
    const auto begin = p.coords.begin() + static_cast<std::ptrdiff_t>((r.start + observed) * fw);
    v.insert(v.end(), begin, begin + static_cast<std::ptrdiff_t>(width));
  }
  return Tensor::from({refs.size(), width}, std::move(v));
}

// ---- one training example ----

namespace {

Tensor noise_like(std::size_t rows, std::size_t cols, Rng& rng) {
  return Tensor::from({rows, cols}, rng.normal_vector(rows * cols));
}

// Detached rollout of the emission means of one sample, feeding back generated frames where the mask says so.
Tensor rollout_inputs(const HitDvae& model, const Tensor& poses, const Tensor& z, const Tensor& w,
                      const std::vector<FrameSource>& mask) {
  NoGradGuard guard;
  const std::size_t T = poses.dim(0), J = poses.dim(1);
  std::size_t last = 0;
  for (std::size_t t = 0; t < T; ++t)
    if (mask[t] == FrameSource::Generated) last = t;
  std::vector<double> out(poses.values().begin(), poses.values().end());
  auto state = model.start_decoder(w.detach());
  auto frame_of = [&](std::size_t t) { return Tensor::from({1, J * 3}, {out.begin() + static_cast<std::ptrdiff_t>(t * J * 3), out.begin() + static_cast<std::ptrdiff_t>((t + 1) * J * 3)}); };
  model.push_frame(state, frame_of(0), row(z, 0));
  for (std::size_t t = 1; t <= last; ++t) {
    if (mask[t] == FrameSource::Generated) {
      const Tensor x = model.next_emission(state, row(z, t));
      std::copy(x.values().begin(), x.values().end(), out.begin() + static_cast<std::ptrdiff_t>(t * J * 3));
    }
    if (t < last) model.push_frame(state, frame_of(t), row(z, t));
  }
  return Tensor::from(poses.shape(), std::move(out));
}

DiagGaussian tile_rows(const DiagGaussian& g, std::size_t begin, std::size_t end, std::size_t copies) {
  const Tensor m = slice(g.mean, 0, begin, end), l = slice(g.logvar, 0, begin, end);
  return {concat(std::vector<Tensor>(copies, m), 0), concat(std::vector<Tensor>(copies, l), 0)};
}

}  // namespace

ExampleResult train_example(const HitDvae& model, const Tensor& poses, const Tensor& pseudo, const Skeleton& skeleton,
                            const FlowPrior& prior, const LossWeights& weights, const TrainSchedule& schedule,
                            double p, double anneal, std::uint64_t seed) {
  const ModelConfig& cfg = model.config();
  const std::size_t T = poses.dim(0), J = cfg.joints, K = schedule.samples, O = schedule.observed;
  if (poses.rank() != 3 || poses.dim(1) != J || poses.dim(2) != 3) {
    throw ShapeError("train example: poses " + shape_str(poses.shape()) + " are not T x " + std::to_string(J) + " x 3");
  }
  if (T < cfg.w_window) throw std::invalid_argument("train example: window shorter than the w window");
  if (O >= T) throw std::invalid_argument("train example: observed prefix covers the whole window");
  if (!prior.flow) throw std::invalid_argument("train example: flow prior missing");
  Rng rng(seed);
  const std::size_t fw = J * 3;

  // inference pass
  const std::size_t w_start = rng.index(T - cfg.w_window + 1);
  const DiagGaussian qw = model.infer_w(slice(poses, 0, w_start, w_start + cfg.w_window));
  std::vector<Tensor> w_samples;
  for (std::size_t k = 0; k < (schedule.resample_w_per_sample ? K : 1); ++k)
    w_samples.push_back(reparameterize(qw, noise_like(1, cfg.d_w, rng)));
  const std::vector<FrameSource> mask = scheduled_mask(T, O, p, rng);
  const bool any_generated = std::find(mask.begin(), mask.end(), FrameSource::Generated) != mask.end();

  std::vector<DiagGaussian> qz;
  for (const Tensor& w : w_samples) qz.push_back(model.infer_z(poses, w));
  std::vector<Tensor> z(K);
  for (std::size_t k = 0; k < K; ++k) z[k] = reparameterize(qz[schedule.resample_w_per_sample ? k : 0], noise_like(T, cfg.d_z, rng));

  // generation pass
  ExampleResult result;
  result.mask = mask;
  if (any_generated) {
    for (std::size_t k = 0; k < K; ++k)
      result.decoder_inputs.push_back(rollout_inputs(model, poses, z[k], w_samples[schedule.resample_w_per_sample ? k : 0], mask));
  } else {
    result.decoder_inputs.push_back(poses.detach());
  }
  Tensor emission;
  DiagGaussian pz, qz_rows;
  if (!schedule.resample_w_per_sample) {
    const auto out = model.decode(result.decoder_inputs, z, w_samples[0]);
    emission = out.emission;
    pz = out.prior;
    qz_rows = tile_rows(qz[0], 1, T, K);
  } else {
    std::vector<Tensor> em, pm, pl, qm, ql;
    for (std::size_t k = 0; k < K; ++k) {
      const auto out = model.decode({result.decoder_inputs[any_generated ? k : 0]}, {z[k]}, w_samples[k]);
      em.push_back(out.emission);
      pm.push_back(out.prior.mean);
      pl.push_back(out.prior.logvar);
      qm.push_back(slice(qz[k].mean, 0, 1, T));
      ql.push_back(slice(qz[k].logvar, 0, 1, T));
    }
    emission = concat(em, 0);
    pz = {concat(pm, 0), concat(pl, 0)};
    qz_rows = {concat(qm, 0), concat(ql, 0)};
  }

  // losses
  const Tensor per_sample = reshape(emission, {K, (T - 1) * fw});
  const Tensor target = reshape(slice(reshape(poses, {T, fw}), 0, 1, T), {1, (T - 1) * fw});
  const Tensor future = slice(per_sample, 1, (O - 1) * fw, (T - 1) * fw);
  LossTerms terms;
  terms[kRecon] = recon_loss(per_sample, target);
  terms[kMultimodal] = multimodal_loss(future, pseudo);
  terms[kKlZ] = kl_diag(qz_rows, pz);
  terms[kKlW] = kl_standard(qw);
  terms[kDivLower] = diversity_term(future, J, skeleton.lower_body, weights.alpha_lower);
  terms[kDivUpper] = diversity_term(future, J, skeleton.upper_body, weights.alpha_upper);
  terms[kLimb] = limb_loss(emission, skeleton);
  terms[kAngle] = angle_loss(emission, skeleton).loss;
  terms[kNf] = nf_loss(emission, *prior.flow, prior.calibration);
  result.total = total_loss(terms, weights, anneal, &result.breakdown);
  return result;
}

// ---- trainer ----

Trainer::Trainer(HitDvae& model, FlowPrior prior, const Corpus& corpus, TrainSchedule schedule, LossWeights weights,
                 std::uint64_t seed)
    : model_(model),
      prior_(prior),
      corpus_(corpus),
      schedule_(std::move(schedule)),
      weights_(std::move(weights)),
      seed_(seed),
      adam_(schedule_.learning_rate) {
  schedule_.validate();
  weights_.validate();
  if (model_.config().joints != corpus_.skeleton.joints()) throw ConfigError("trainer: model joints differ from the corpus skeleton");
  if (model_.config().w_window > schedule_.frames) throw ConfigError("trainer: model.w_window exceeds schedule.frames");
  windows_ = enumerate_windows(corpus_, corpus_.train, schedule_.frames);
  if (windows_.empty()) throw ConfigError("trainer: no training clip has schedule.frames frames");
}

std::size_t Trainer::steps_per_epoch() const {
  return (schedule_.samples_per_epoch + schedule_.batch_size - 1) / schedule_.batch_size;
}

StepResult Trainer::step() {
  StepResult r;
  r.epoch = epoch_;
  r.step = step_;
  r.ss_probability = ss_probability(epoch_, schedule_);
  const double anneal = kl_anneal(epoch_, schedule_);
  const std::size_t done = step_in_epoch_ * schedule_.batch_size;
  const std::size_t B = std::min(schedule_.batch_size, schedule_.samples_per_epoch - done);

  Rng batch_rng(derive_seed(seed_, kStreamBatch, step_));
  std::vector<WindowRef> batch(B);
  for (auto& w : batch) w = windows_[batch_rng.index(windows_.size())];
  const std::uint64_t example_seed = derive_seed(seed_, kStreamExample, step_);

  ParamList params = model_.parameters();
  std::vector<std::vector<std::vector<double>>> grads(B);
  std::vector<LossBreakdown> losses(B);
  std::vector<std::string> errors(B);
  std::vector<std::size_t> generated(B, 0);
  const std::size_t T = schedule_.frames, O = schedule_.observed;
  parallel_for(B, [&](std::size_t b) {
    try {
      const WindowRef& ref = batch[b];
      const PoseSequence window = corpus_.clips[ref.clip].poses.slice(ref.start, ref.start + T);
      const auto mm = select_pseudo_gt(corpus_, windows_, window.frame(O - 1), O, ref.clip, schedule_.mm_radius,
                                       schedule_.mm_max);
      const ExampleResult ex = train_example(model_, window.tensor(), future_rows(corpus_, mm, T, O), corpus_.skeleton,
                                             prior_, weights_, schedule_, r.ss_probability, anneal,
                                             derive_seed(example_seed, b));
      generated[b] = static_cast<std::size_t>(std::count(ex.mask.begin(), ex.mask.end(), FrameSource::Generated));
      GradSink sink;
      backward(ex.total, &sink);
      grads[b].resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = sink.get(params[i].tensor.impl().get());
        grads[b][i].assign(g.begin(), g.end());
      }
      losses[b] = ex.breakdown;
    } catch (const NumericError& e) {
      errors[b] = e.what();
    }
  });

  for (std::size_t b = 0; b < B; ++b) {
    if (!errors[b].empty()) {
      r.aborted = true;
      r.incident = "step " + std::to_string(step_) + ", batch element " + std::to_string(b) + ": " + errors[b];
      break;
    }
    r.loss += losses[b];
    r.generated_inputs += generated[b];
  }
  if (!r.aborted) {
    r.loss = r.loss.scaled(1.0 / static_cast<double>(B));
    zero_grads(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<double> acc(params[i].tensor.numel(), 0.0);
      for (std::size_t b = 0; b < B; ++b)
        if (!grads[b][i].empty())
          for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grads[b][i][k];
      for (double& v : acc) v /= static_cast<double>(B);
      params[i].tensor.add_to_grad(acc);
    }
    r.grad_norm = grad_global_norm(params);
    if (!std::isfinite(r.grad_norm)) {
      r.aborted = true;
      r.incident = "step " + std::to_string(step_) + ": non-finite gradient norm";
      zero_grads(params);
    } else {
      clip_grad_norm(params, schedule_.clip_norm);
      adam_step(params, adam_);
    }
  }
  if (r.aborted) incidents_.push_back(r.incident);

  ++step_;
  if (++step_in_epoch_ == steps_per_epoch()) {
    step_in_epoch_ = 0;
    ++epoch_;
  }
  return r;
}

std::vector<StepResult> Trainer::run_epoch() {
  std::vector<StepResult> out;
  const std::size_t e = epoch_;
  while (epoch_ == e) out.push_back(step());
  return out;
}

void Trainer::save_to(Checkpoint& ck) const {
  model_.save_to(ck, "model.");
  const ParamList params = model_.parameters();
  for (std::size_t i = 0; i < adam_.first_moment.size(); ++i) {
    ck.put("adam.m." + params[i].name, params[i].tensor.shape(), adam_.first_moment[i]);
    ck.put("adam.v." + params[i].name, params[i].tensor.shape(), adam_.second_moment[i]);
  }
  ck.meta()["trainer"] = {{"epoch", epoch_},
                          {"step", step_},
                          {"step_in_epoch", step_in_epoch_},
                          {"seed", seed_},
                          {"adam_step", adam_.step},
                          {"learning_rate", adam_.learning_rate},
                          {"schedule", schedule_.to_json()},
                          {"weights", weights_.to_json()},
                          {"flow_calibration", prior_.calibration}};
}

void Trainer::load_from(const Checkpoint& ck) {
  model_.load_from(ck, "model.");
  const auto& m = ck.meta().at("trainer");
  if (m.at("seed").get<std::uint64_t>() != seed_) throw ConfigError("checkpoint: trainer seed differs from the run seed");
  if (nlohmann::json(m.at("schedule")) != nlohmann::json(schedule_.to_json())) {
    throw ConfigError("checkpoint: schedule differs from the configured schedule");
  }
  epoch_ = m.at("epoch").get<std::size_t>();
  step_ = m.at("step").get<std::uint64_t>();
  step_in_epoch_ = m.at("step_in_epoch").get<std::size_t>();
  adam_ = AdamState(m.at("learning_rate").get<double>());
  adam_.step = m.at("adam_step").get<std::uint64_t>();
  if (adam_.step > 0) {
    const ParamList params = model_.parameters();
    for (const auto& p : params) {
      adam_.first_moment.push_back(ck.get("adam.m." + p.name).values);
      adam_.second_moment.push_back(ck.get("adam.v." + p.name).values);
    }
  }
}

std::string loss_csv_header() {
  std::string h = "epoch,step,ss_probability,anneal,total";
  for (const char* n : kLossTermNames) h += std::string(",") + n;
  for (const char* n : kLossTermNames) h += std::string(",w_") + n;
  return h + ",grad_norm,generated_inputs,aborted";
}

std::string loss_csv_row(const StepResult& r) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string s = std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.ss_probability) + "," +
                  num(r.loss.anneal) + "," + num(r.loss.total);
  for (double v : r.loss.raw) s += "," + num(v);
  for (double v : r.loss.weighted) s += "," + num(v);
  return s + "," + num(r.grad_norm) + "," + std::to_string(r.generated_inputs) + "," + (r.aborted ? "1" : "0");
}

// ---- flow prior ----

void FlowConfig::validate() const {
  if (layers == 0 || hidden == 0 || steps == 0 || batch_size == 0) throw ConfigError("flow: counts must be positive");
  if (!(learning_rate > 0)) throw ConfigError("flow.learning_rate: must be positive");
}

nlohmann::ordered_json FlowConfig::to_json() const {
  return {{"layers", layers}, {"hidden", hidden}, {"steps", steps}, {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"standardize", standardize}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  FlowConfig c;
  c.layers = o.get_count("layers");
  c.hidden = o.get_count("hidden");
  c.steps = o.get_count("steps");
  c.batch_size = o.get_count("batch_size");
  c.learning_rate = o.get_number("learning_rate");
  c.standardize = o.get<bool>("standardize");
  o.finish();
  c.validate();
  return c;
}

FlowTrainResult pretrain_flow(CouplingFlow& flow, const Tensor& data, const FlowConfig& config, std::uint64_t seed) {
  config.validate();
  if (data.rank() != 2 || data.dim(0) == 0) throw std::invalid_argument("flow pretraining: empty data");
  if (data.dim(1) != flow.dim()) throw ShapeError("flow pretraining: data width does not match the flow dimension");
  const std::size_t N = data.dim(0), D = data.dim(1);
  const auto v = data.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) throw NumericError("flow pretraining: non-finite data in row " + std::to_string(i / D));
  if (config.standardize) {
    std::vector<double> mu(D, 0.0), sd(D, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) mu[d] += v[n * D + d];
    for (double& m : mu) m /= static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t d = 0; d < D; ++d) sd[d] += (v[n * D + d] - mu[d]) * (v[n * D + d] - mu[d]);
    for (double& s : sd) s = std::max(std::sqrt(s / static_cast<double>(N)), 1e-3);  // 1 mm floor
    flow.set_standardization(std::move(mu), std::move(sd));
  }
  FlowTrainResult result;
  ParamList params = flow.parameters();
  AdamState adam(config.learning_rate);
  Rng rng(derive_seed(seed, kStreamFlow));
  const std::size_t B = std::min(config.batch_size, N);
  auto snapshot = [&] {
    std::vector<std::vector<double>> s;
    for (const auto& p : params) s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    return s;
  };
  std::vector<std::vector<double>> stable = snapshot();
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<double> rows;
    rows.reserve(B * D);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t n = rng.index(N);
      rows.insert(rows.end(), v.begin() + static_cast<std::ptrdiff_t>(n * D), v.begin() + static_cast<std::ptrdiff_t>((n + 1) * D));
    }
    double lp = 0;
    try {
      const Tensor mlp = mean(flow.log_prob(Tensor::from({B, D}, std::move(rows))));
      lp = mlp.item();
      if (!std::isfinite(lp)) throw NumericError("flow pretraining: non-finite log-likelihood");
      zero_grads(params);
      backward(neg(mlp));
      if (!std::isfinite(grad_global_norm(params))) throw NumericError("flow pretraining: non-finite gradient");
    } catch (const NumericError& e) {
      for (std::size_t i = 0; i < params.size(); ++i) std::copy(stable[i].begin(), stable[i].end(), params[i].tensor.mutable_values().begin());
      zero_grads(params);
      result.diverged = true;
      result.incident = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    result.mean_log_prob.push_back(lp);
    stable = snapshot();
    clip_grad_norm(params, 5.0);
    adam_step(params, adam);
  }
  if (result.diverged) {
    result.calibration = std::numeric_limits<double>::quiet_NaN();
    return result;
  }
  {
    NoGradGuard guard;
    const Tensor lp = flow.log_prob(data);
    std::vector<double> nll(N);
    for (std::size_t n = 0; n < N; ++n) nll[n] = -lp[n];
    std::sort(nll.begin(), nll.end());
    result.calibration = N % 2 ? nll[N / 2] : 0.5 * (nll[N / 2 - 1] + nll[N / 2]);
  }
  return result;
}

Tensor flow_training_rows(const Corpus& corpus, const std::vector<std::size_t>& clips) {
  std::vector<Tensor> parts;
  for (std::size_t c : clips) parts.push_back(nonroot_coordinates(corpus.clips.at(c).poses.flat_tensor()));
  if (parts.empty()) throw std::invalid_argument("flow pretraining: no clips");
  NoGradGuard guard;
  return concat(parts, 0);
}

// ---- finite-difference check ----

GradCheckReport total_loss_grad_check(std::uint64_t seed, double step) {
  const ModelConfig cfg = ModelConfig::micro();
  const Skeleton sk = Skeleton::chain3();
  HitDvae model(cfg, seed);
  Rng rng(derive_seed(seed, 11));
  CouplingFlow flow(6, 2, 4, rng);
  TrainSchedule schedule;
  schedule.samples = 2;
  schedule.frames = 4;
  schedule.observed = 2;
  std::vector<double> x(4 * 3 * 3, 0.0), mm(2 * 2 * 9, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (i % 9 >= 3) x[i] = rng.uniform(-0.6, 0.6);
  for (std::size_t i = 0; i < mm.size(); ++i)
    if (i % 9 >= 3) mm[i] = rng.uniform(-0.6, 0.6);
  const Tensor poses = Tensor::from({4, 3, 3}, x), pseudo = Tensor::from({2, 18}, mm);
  const FlowPrior prior{&flow, 0.0};
  const LossWeights weights;
  ParamList params = model.parameters();
  return grad_check_params(
      [&] { return train_example(model, poses, pseudo, sk, prior, weights, schedule, 0.0, 1.0, seed).total; }, params,
      step);
}

}  // namespace hitdvae
