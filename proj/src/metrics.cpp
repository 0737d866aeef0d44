#include "hitdvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/json_util.hpp"
#include "hitdvae/optim.hpp"

namespace hitdvae {

namespace {

void same_shape(const PoseSequence& a, const PoseSequence& b, const char* what) {
  if (a.frames != b.frames || a.joints != b.joints) {
    throw ShapeError(std::string(what) + ": sequences of " + std::to_string(a.frames) + "x" + std::to_string(a.joints) +
                     " and " + std::to_string(b.frames) + "x" + std::to_string(b.joints) + " frames x joints");
  }
}

double flat_distance(const PoseSequence& a, const PoseSequence& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.coords.size(); ++i) s += (a.coords[i] - b.coords[i]) * (a.coords[i] - b.coords[i]);
  return std::sqrt(s);
}

double frame_distance(const PoseSequence& a, const PoseSequence& b, std::size_t t) {
  const auto x = a.frame(t), y = b.frame(t);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

}  // namespace

double apd(const std::vector<PoseSequence>& samples) {
  const std::size_t K = samples.size();
  if (K < 2) throw std::invalid_argument("APD: need at least 2 samples, got " + std::to_string(K));
  double total = 0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j)
      if (i != j) {
        same_shape(samples[i], samples[j], "APD");
        total += flat_distance(samples[i], samples[j]);
      }
  return total / static_cast<double>(K * (K - 1));
}

const char* ade_norm_name(AdeNorm n) { return n == AdeNorm::PerFrame ? "per-frame" : "flattened"; }

double sample_ade(const PoseSequence& sample, const PoseSequence& gt, AdeNorm norm) {
  same_shape(sample, gt, "ADE");
  if (gt.frames == 0) throw std::invalid_argument("ADE: empty future");
  if (norm == AdeNorm::Flattened) return flat_distance(sample, gt) / static_cast<double>(gt.frames);
  double s = 0;
  for (std::size_t t = 0; t < gt.frames; ++t) s += frame_distance(sample, gt, t);
  return s / static_cast<double>(gt.frames);
}

double sample_fde(const PoseSequence& sample, const PoseSequence& gt) {
  same_shape(sample, gt, "FDE");
  if (gt.frames == 0) throw std::invalid_argument("FDE: empty future");
  return frame_distance(sample, gt, gt.frames - 1);
}

std::size_t medium_index(const std::vector<PoseSequence>& samples, const PoseSequence& gt) {
  if (samples.empty()) throw std::invalid_argument("medium sample: no samples");
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    same_shape(samples[k], gt, "medium sample");
    d.emplace_back(flat_distance(samples[k], gt), k);
  }
  std::sort(d.begin(), d.end());
  return d[(samples.size() + 1) / 2 - 1].second;
}

AdeFde ade_fde(const std::vector<PoseSequence>& samples, const PoseSequence& gt, Selection mode, AdeNorm norm) {
  if (samples.empty()) throw std::invalid_argument("ADE/FDE: no samples");
  if (mode == Selection::Medium) {
    const std::size_t m = medium_index(samples, gt);
    return {sample_ade(samples[m], gt, norm), sample_fde(samples[m], gt)};
  }
  AdeFde r{sample_ade(samples[0], gt, norm), sample_fde(samples[0], gt)};
  for (std::size_t k = 1; k < samples.size(); ++k) {
    r.ade = std::min(r.ade, sample_ade(samples[k], gt, norm));
    r.fde = std::min(r.fde, sample_fde(samples[k], gt));
  }
  return r;
}

AdeFde mm_ade_fde(const std::vector<PoseSequence>& samples, const std::vector<PoseSequence>& pseudo, Selection mode,
                  AdeNorm norm) {
  if (pseudo.empty()) throw std::invalid_argument("multi-modal ADE/FDE: empty pseudo-ground-truth set");
  AdeFde r;
  for (const auto& p : pseudo) {
    const AdeFde one = ade_fde(samples, p, mode, norm);
    r.ade += one.ade;
    r.fde += one.fde;
  }
  r.ade /= static_cast<double>(pseudo.size());
  r.fde /= static_cast<double>(pseudo.size());
  return r;
}

PoseSequence future_of(const PoseSequence& seq, std::size_t observed) {
  if (observed > seq.frames) throw std::invalid_argument("future: observed prefix longer than the sequence");
  PoseSequence f = seq.slice(observed, seq.frames);
  f.observed = 0;
  return f;
}

PoseSequence shuffled_frames(const PoseSequence& seq, Rng& rng) {
  std::vector<std::size_t> order(seq.frames);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  PoseSequence out = seq;
  const std::size_t fw = seq.frame_width();
  for (std::size_t t = 0; t < seq.frames; ++t) {
    const auto src = seq.frame(order[t]);
    std::copy(src.begin(), src.end(), out.coords.begin() + static_cast<std::ptrdiff_t>(t * fw));
  }
  return out;
}

// ---- FID ----

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("feature statistics: need at least 2 rows");
  FeatureStats s;
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sym, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (ev.size() && ev.minCoeff() < -1e-8) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "FID: %s covariance is not PSD (min eigenvalue %.3g)", which, ev.minCoeff());
    throw NumericError(buf);
  }
  return eig.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != a.mean.size() || b.covariance.rows() != b.mean.size()) {
    throw ShapeError("FID: feature widths differ");
  }
  const Eigen::MatrixXd s1 = 0.5 * (a.covariance + a.covariance.transpose());
  const Eigen::MatrixXd s2 = 0.5 * (b.covariance + b.covariance.transpose());
  const Eigen::MatrixXd r1 = psd_sqrt(s1, "first");
  psd_sqrt(s2, "second");
  Eigen::MatrixXd m = r1 * s2 * r1;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const double cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (a.mean - b.mean).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross;
  return std::max(v, 0.0);
}

// ---- classifier ----

void ClassifierConfig::validate() const {
  if (hidden == 0 || epochs == 0 || batch_size == 0) throw ConfigError("classifier: counts must be positive");
  if (!(learning_rate > 0)) throw ConfigError("classifier.learning_rate: must be positive");
}

nlohmann::ordered_json ClassifierConfig::to_json() const {
  return {{"hidden", hidden},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"velocity_inputs", velocity_inputs}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  ClassifierConfig c;
  c.hidden = o.get_count("hidden");
  c.epochs = o.get_count("epochs");
  c.batch_size = o.get_count("batch_size");
  c.learning_rate = o.get_number("learning_rate");
  c.velocity_inputs = o.get<bool>("velocity_inputs");
  o.finish();
  c.validate();
  return c;
}

ActionClassifier::ActionClassifier(std::vector<std::string> classes, std::size_t input_width, std::size_t hidden,
                                   std::uint64_t seed, bool velocity_inputs)
    : classes_(std::move(classes)), input_width_(input_width), hidden_(hidden), velocity_(velocity_inputs) {
  if (classes_.size() < 2) throw std::invalid_argument("classifier: need at least 2 classes");
  Rng rng(seed);
  layer1_ = GruCell(velocity_ ? 2 * input_width : input_width, hidden, rng);
  layer2_ = GruCell(hidden, hidden, rng);
  head_ = Linear(hidden, classes_.size(), rng);
}

std::size_t ActionClassifier::class_index(const std::string& label) const {
  const auto it = std::find(classes_.begin(), classes_.end(), label);
  if (it == classes_.end()) throw std::invalid_argument("classifier: unknown label '" + label + "'");
  return static_cast<std::size_t>(it - classes_.begin());
}

std::pair<Tensor, Tensor> ActionClassifier::forward(const Tensor& batch) const {
  if (batch.rank() != 3 || batch.dim(2) != input_width_) {
    throw ShapeError("classifier: input " + shape_str(batch.shape()) + " is not B x F x " + std::to_string(input_width_));
  }
  const std::size_t B = batch.dim(0), F = batch.dim(1);
  Tensor h1 = Tensor::zeros({B, hidden_}), h2 = Tensor::zeros({B, hidden_});
  Tensor prev;
  for (std::size_t t = 0; t < F; ++t) {
    Tensor x = reshape(slice(batch, 1, t, t + 1), {B, input_width_});
    if (velocity_) {
      const Tensor v = t == 0 ? Tensor::zeros({B, input_width_}) : sub(x, prev);
      prev = x;
      x = concat({x, v}, 1);
    }
    h1 = layer1_.step(x, h1);
    h2 = layer2_.step(h1, h2);
  }
  return {h2, head_.forward(h2)};
}

namespace {

Tensor stack_sequences(const std::vector<PoseSequence>& seqs, const std::vector<std::size_t>& idx) {
  const std::size_t F = seqs[idx[0]].frames, D = seqs[idx[0]].frame_width();
  std::vector<double> v;
  v.reserve(idx.size() * F * D);
  for (std::size_t i : idx) {
    if (seqs[i].frames != F || seqs[i].frame_width() != D) throw ShapeError("classifier: batch sequences differ in shape");
    v.insert(v.end(), seqs[i].coords.begin(), seqs[i].coords.end());
  }
  return Tensor::from({idx.size(), F, D}, std::move(v));
}

}  // namespace

template <typename F>
void ActionClassifier::for_batches(const std::vector<PoseSequence>& seqs, F&& f) const {
  // groups of equal length, in input order
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_length[seqs[i].frames].push_back(i);
  for (const auto& [len, idx] : by_length) {
    if (len == 0) throw std::invalid_argument("classifier: empty sequence");
    for (std::size_t b = 0; b < idx.size(); b += 256) {
      const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + 256)));
      f(chunk, forward(stack_sequences(seqs, chunk)));
    }
  }
}

Eigen::MatrixXd ActionClassifier::features(const std::vector<PoseSequence>& seqs) const {
  NoGradGuard guard;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), static_cast<Eigen::Index>(hidden_));
  for_batches(seqs, [&](const std::vector<std::size_t>& idx, const std::pair<Tensor, Tensor>& r) {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t h = 0; h < hidden_; ++h) out(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(h)) = r.first.at(i, h);
  });
  return out;
}

Eigen::MatrixXd ActionClassifier::probabilities(const std::vector<PoseSequence>& seqs) const {
  NoGradGuard guard;
  const std::size_t C = classes_.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), static_cast<Eigen::Index>(C));
  for_batches(seqs, [&](const std::vector<std::size_t>& idx, const std::pair<Tensor, Tensor>& r) {
    const Tensor p = softmax(r.second, 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < C; ++c) out(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(c)) = p.at(i, c);
  });
  return out;
}

std::vector<std::size_t> ActionClassifier::predict(const std::vector<PoseSequence>& seqs) const {
  const Eigen::MatrixXd p = probabilities(seqs);
  std::vector<std::size_t> out(seqs.size());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

ParamList ActionClassifier::parameters() const {
  ParamList out;
  layer1_.collect(out, "gru1.");
  layer2_.collect(out, "gru2.");
  head_.collect(out, "head.");
  return out;
}

void ActionClassifier::save_to(Checkpoint& ck, const std::string& prefix) const {
  ck.put(parameters(), prefix);
  ck.meta()["classifier"] = {
      {"classes", classes_}, {"input_width", input_width_}, {"hidden", hidden_}, {"velocity_inputs", velocity_}};
}

void ActionClassifier::load_from(const Checkpoint& ck, const std::string& prefix) {
  const auto& m = ck.meta().at("classifier");
  *this = ActionClassifier(m.at("classes").get<std::vector<std::string>>(), m.at("input_width").get<std::size_t>(),
                           m.at("hidden").get<std::size_t>(), 0, m.at("velocity_inputs").get<bool>());
  ParamList p = parameters();
  ck.restore(p, prefix);
}

double recognition_accuracy(const ActionClassifier& classifier, const LabeledSequences& data) {
  if (data.sequences.size() != data.labels.size()) throw std::invalid_argument("accuracy: label count mismatch");
  if (data.sequences.empty()) throw std::invalid_argument("accuracy: no sequences");
  std::vector<std::size_t> truth;
  for (const auto& l : data.labels) truth.push_back(classifier.class_index(l));
  const auto pred = classifier.predict(data.sequences);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

ClassifierTrainResult train_classifier(const std::vector<std::string>& classes, const LabeledSequences& train,
                                       const LabeledSequences& heldout, const ClassifierConfig& config,
                                       std::uint64_t seed) {
  config.validate();
  if (classes.size() < 2) throw std::invalid_argument("classifier training: need at least 2 classes");
  if (train.sequences.size() != train.labels.size()) throw std::invalid_argument("classifier training: label count mismatch");
  if (train.sequences.empty()) throw std::invalid_argument("classifier training: no sequences");
  ClassifierTrainResult result;
  result.classifier = ActionClassifier(classes, train.sequences[0].frame_width(), config.hidden, derive_seed(seed, 1),
                                       config.velocity_inputs);
  ActionClassifier& clf = result.classifier;
  std::vector<std::size_t> label(train.labels.size());
  std::vector<std::size_t> counts(classes.size(), 0);
  for (std::size_t i = 0; i < label.size(); ++i) ++counts[label[i] = clf.class_index(train.labels[i])];
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (counts[c] < 20) {
      throw std::invalid_argument("classifier training: class '" + classes[c] + "' has " + std::to_string(counts[c]) +
                                  " sequences, need at least 20");
    }
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi > 10 * *lo) result.warnings.push_back("class imbalance above 10:1");

  ParamList params = clf.parameters();
  AdamState adam(config.learning_rate);
  Rng rng(derive_seed(seed, 2));
  const std::size_t N = label.size(), C = classes.size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0;
    for (std::size_t b = 0; b < N; b += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(N, b + config.batch_size)));
      std::vector<double> onehot(idx.size() * C, 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) onehot[i * C + label[idx[i]]] = 1.0;
      const auto [h, logits] = clf.forward(stack_sequences(train.sequences, idx));
      const Tensor loss = neg(mean(sum(mul(log_softmax(logits, 1), Tensor::from({idx.size(), C}, onehot)), 1)));
      zero_grads(params);
      backward(loss);
      clip_grad_norm(params, 5.0);
      adam_step(params, adam);
      total += loss.item() * static_cast<double>(idx.size());
    }
    result.epoch_loss.push_back(total / static_cast<double>(N));
  }
  result.train_accuracy = recognition_accuracy(clf, train);
  if (!heldout.sequences.empty()) result.heldout_accuracy = recognition_accuracy(clf, heldout);
  return result;
}

// ---- reports ----

bool MetricReport::invariants_hold() const {
  const double all[] = {apd, ade_b, fde_b, mmade_b, mmfde_b, ade_m, fde_m, mmade_m, mmfde_m, fid};
  for (double v : all)
    if (!(v >= 0.0)) return false;
  return ade_b <= ade_m && fde_b <= fde_m && mmade_b <= mmade_m && mmfde_b <= mmfde_m;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  if (has_classifier) {
    j["Acc"] = acc;
    j["FID"] = fid;
  } else {
    j["Acc"] = nullptr;
    j["FID"] = nullptr;
  }
  j["APD"] = apd;
  j["ADEb"] = ade_b;
  j["FDEb"] = fde_b;
  j["MMADEb"] = mmade_b;
  j["MMFDEb"] = mmfde_b;
  j["ADEm"] = ade_m;
  j["FDEm"] = fde_m;
  j["MMADEm"] = mmade_m;
  j["MMFDEm"] = mmfde_m;
  j["counts"] = {{"sequences", sequences}, {"K", samples}, {"M_mean", mean_pseudo_gt}};
  j["ade_norm"] = ade_norm_name(ade_norm);
  return j;
}

std::string MetricReport::csv_header() { return "Acc,FID,APD,ADEb,FDEb,MMADEb,MMFDEb,ADEm,FDEm,MMADEm,MMFDEm"; }

std::string MetricReport::csv_row() const {
  std::string s;
  char buf[40];
  bool first = true;
  auto add = [&](double v, bool present = true) {
    if (!first) s += ',';
    first = false;
    if (present) {
      std::snprintf(buf, sizeof buf, "%.10g", v);
      s += buf;
    }
  };
  add(acc, has_classifier);
  add(fid, has_classifier);
  for (double v : {apd, ade_b, fde_b, mmade_b, mmfde_b, ade_m, fde_m, mmade_m, mmfde_m}) add(v);
  return s;
}

MetricReport evaluate_cases(const std::vector<EvalCase>& cases, const ActionClassifier* classifier, AdeNorm norm) {
  if (cases.empty()) throw std::invalid_argument("evaluation: no cases");
  MetricReport r;
  r.ade_norm = norm;
  r.sequences = cases.size();
  r.samples = cases[0].samples.size();
  LabeledSequences generated;
  std::vector<PoseSequence> real;
  for (const auto& c : cases) {
    if (c.samples.size() != r.samples) throw std::invalid_argument("evaluation: cases differ in sample count");
    if (r.samples >= 2) r.apd += apd(c.samples);
    const AdeFde b = ade_fde(c.samples, c.gt, Selection::Best, norm), m = ade_fde(c.samples, c.gt, Selection::Medium, norm);
    const AdeFde mb = mm_ade_fde(c.samples, c.pseudo, Selection::Best, norm);
    const AdeFde mm = mm_ade_fde(c.samples, c.pseudo, Selection::Medium, norm);
    r.ade_b += b.ade;
    r.fde_b += b.fde;
    r.ade_m += m.ade;
    r.fde_m += m.fde;
    r.mmade_b += mb.ade;
    r.mmfde_b += mb.fde;
    r.mmade_m += mm.ade;
    r.mmfde_m += mm.fde;
    r.mean_pseudo_gt += static_cast<double>(c.pseudo.size());
    for (const auto& s : c.samples) {
      generated.sequences.push_back(s);
      generated.labels.push_back(c.label);
    }
    real.push_back(c.gt);
  }
  const double n = static_cast<double>(cases.size());
  for (double* v : {&r.apd, &r.ade_b, &r.fde_b, &r.ade_m, &r.fde_m, &r.mmade_b, &r.mmfde_b, &r.mmade_m, &r.mmfde_m, &r.mean_pseudo_gt})
    *v /= n;
  if (classifier) {
    r.has_classifier = true;
    r.acc = recognition_accuracy(*classifier, generated);
    r.fid = fid(feature_stats(classifier->features(real)), feature_stats(classifier->features(generated.sequences)));
  }
  return r;
}

}  // namespace hitdvae
