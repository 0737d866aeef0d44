#include "hitdvae/motion.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "hitdvae/json_util.hpp"
#include "hitdvae/losses.hpp"
#include "hitdvae/random.hpp"

namespace hitdvae {

// ---- clip files ----

namespace {

const char* encoding_name(ClipEncoding e) { return e == ClipEncoding::Base64 ? "base64" : "csv"; }

std::string base64_encode(const std::vector<double>& values) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  const std::size_t n = values.size() * sizeof(double);
  std::string out(4 * ((n + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

void check_finite(const PoseSequence& p, const std::string& where) {
  for (std::size_t i = 0; i < p.coords.size(); ++i) {
    if (!std::isfinite(p.coords[i])) {
      const std::size_t fw = p.frame_width();
      throw FormatError(where + ": non-finite value at frame " + std::to_string(i / fw) + ", joint " +
                        std::to_string((i % fw) / 3) + ", axis " + std::to_string(i % 3));
    }
  }
}

}  // namespace

std::string encode_clip(const MotionClip& clip, ClipEncoding encoding) {
  const PoseSequence& p = clip.poses;
  nlohmann::ordered_json h;
  h["format"] = "hitdvae-clip";
  h["version"] = kClipFormatVersion;
  h["skeleton"] = clip.skeleton;
  h["label"] = clip.label;
  h["fps"] = clip.fps;
  h["frames"] = p.frames;
  h["joints"] = p.joints;
  h["observed"] = p.observed;
  h["encoding"] = encoding_name(encoding);
  h["source"] = clip.source;
  std::string out = h.dump() + "\n";
  if (encoding == ClipEncoding::Base64) {
    out += base64_encode(p.coords) + "\n";
  } else {
    const std::size_t fw = p.frame_width();
    for (std::size_t t = 0; t < p.frames; ++t) {
      for (std::size_t i = 0; i < fw; ++i) {
        if (i) out += ',';
        out += format_double(p.coords[t * fw + i]);
      }
      out += '\n';
    }
  }
  return out;
}

MotionClip decode_clip(const std::string& text) {
  const std::size_t nl = text.find('\n');
  if (nl == std::string::npos) throw FormatError("clip: missing header line terminator (file is " + std::to_string(text.size()) + " bytes)");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("clip header: parse error at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!h.is_object() || h.value("format", "") != "hitdvae-clip") throw FormatError("clip header: not a hitdvae-clip file");
  if (!h.contains("version") || h["version"] != kClipFormatVersion) {
    throw FormatError("clip header: unsupported version " + (h.contains("version") ? h["version"].dump() : "<missing>") +
                      ", expected " + std::to_string(kClipFormatVersion));
  }
  MotionClip clip;
  std::size_t frames = 0, joints = 0, observed = 0;
  std::string encoding;
  try {
    StrictObject o(h, "clip header");
    o.get<std::string>("format");
    o.get<int>("version");
    clip.skeleton = o.get<std::string>("skeleton");
    clip.label = o.get<std::string>("label");
    clip.fps = o.get_number("fps");
    frames = o.get_count("frames");
    joints = o.get_count("joints");
    observed = o.get_count("observed", true);
    encoding = o.get<std::string>("encoding");
    clip.source = o.get<std::string>("source");
    o.finish();
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  if (observed > frames) throw FormatError("clip header: observed " + std::to_string(observed) + " exceeds frames");
  const std::size_t n = frames * joints * 3;
  std::vector<double> values(n);
  const std::size_t body = nl + 1;
  if (encoding == "base64") {
    std::size_t end = text.find('\n', body);
    if (end == std::string::npos) end = text.size();
    const std::size_t expected = 4 * ((n * sizeof(double) + 2) / 3);
    const std::size_t found = end - body;
    if (found != expected) {
      throw FormatError("clip body: expected " + std::to_string(expected) + " base64 characters from byte offset " +
                        std::to_string(body) + ", data ends at byte offset " + std::to_string(end) +
                        (found < expected ? " (truncated)" : " (trailing data)"));
    }
    std::vector<unsigned char> raw(expected / 4 * 3);
    const int got = EVP_DecodeBlock(raw.data(), reinterpret_cast<const unsigned char*>(text.data() + body),
                                    static_cast<int>(found));
    if (got < 0 || static_cast<std::size_t>(got) < n * sizeof(double)) {
      throw FormatError("clip body: invalid base64 starting at byte offset " + std::to_string(body));
    }
    std::memcpy(values.data(), raw.data(), n * sizeof(double));
    if (end + 1 < text.size()) throw FormatError("clip body: trailing data at byte offset " + std::to_string(end + 1));
  } else if (encoding == "csv") {
    std::size_t pos = body;
    const std::size_t fw = joints * 3;
    for (std::size_t t = 0; t < frames; ++t) {
      if (pos >= text.size()) {
        throw FormatError("clip body: file ends at byte offset " + std::to_string(text.size()) + " after " +
                          std::to_string(t) + " of " + std::to_string(frames) + " rows");
      }
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::size_t col = 0, start = pos;
      while (start <= eol) {
        std::size_t comma = text.find(',', start);
        if (comma == std::string::npos || comma > eol) comma = eol;
        if (col < fw) {
          double v = 0;
          const auto r = std::from_chars(text.data() + start, text.data() + comma, v);
          if (r.ec != std::errc() || r.ptr != text.data() + comma) {
            throw FormatError("clip body: row " + std::to_string(t) + ", column " + std::to_string(col) +
                              ": not a number (byte offset " + std::to_string(start) + ")");
          }
          values[t * fw + col] = v;
        }
        ++col;
        start = comma + 1;
      }
      if (col != fw) {
        throw FormatError("clip body: row " + std::to_string(t) + " has " + std::to_string(col) + " columns, expected " +
                          std::to_string(fw));
      }
      pos = eol + 1;
    }
    if (pos < text.size()) throw FormatError("clip body: trailing data at byte offset " + std::to_string(pos));
  } else {
    throw FormatError("clip header: unknown encoding '" + encoding + "'");
  }
  clip.poses = PoseSequence(frames, joints, std::move(values), observed);
  check_finite(clip.poses, "clip body");
  return clip;
}

void save_clip(const std::filesystem::path& path, const MotionClip& clip, ClipEncoding encoding) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  const std::string s = encode_clip(clip, encoding);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

MotionClip load_clip(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return decode_clip(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PoseSequence preprocess(const PoseSequence& raw) {
  PoseSequence out = raw;
  for (std::size_t t = 0; t < raw.frames; ++t) {
    const double r[3] = {raw.at(t, 0, 0), raw.at(t, 0, 1), raw.at(t, 0, 2)};
    for (std::size_t j = 0; j < raw.joints; ++j)
      for (std::size_t a = 0; a < 3; ++a) out.at(t, j, a) = raw.at(t, j, a) - r[a];
  }
  return out;
}

// ---- corpus spec ----

void CorpusSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("corpus.classes: need at least 2 action classes");
  for (const auto& c : classes)
    if (std::find(synth_classes().begin(), synth_classes().end(), c) == synth_classes().end())
      throw ConfigError("corpus.classes: unknown generator '" + c + "'");
  if (clips_per_class < 2) throw ConfigError("corpus.clips_per_class: need at least 2 clips per class");
  if (frames < 2) throw ConfigError("corpus.frames: need at least 2 frames");
  if (observed < 2 || observed >= frames) throw ConfigError("corpus.observed: must lie in [2, frames)");
  if (!(fps > 0)) throw ConfigError("corpus.fps: must be positive");
  if (!(jitter >= 0 && jitter < 0.5)) throw ConfigError("corpus.jitter: must lie in [0, 0.5)");
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("corpus.train_fraction: must lie in (0, 1)");
}

nlohmann::ordered_json CorpusSpec::to_json() const {
  return {{"classes", classes},
          {"clips_per_class", clips_per_class},
          {"frames", frames},
          {"observed", observed},
          {"fps", fps},
          {"jitter", jitter},
          {"train_fraction", train_fraction},
          {"seed", seed}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  CorpusSpec s;
  s.classes = o.get<std::vector<std::string>>("classes");
  s.clips_per_class = o.get_count("clips_per_class");
  s.frames = o.get_count("frames");
  s.observed = o.get_count("observed");
  s.fps = o.get_number("fps");
  s.jitter = o.get_number("jitter");
  s.train_fraction = o.get_number("train_fraction");
  s.seed = o.get<std::uint64_t>("seed");
  o.finish();
  s.validate();
  return s;
}

std::vector<std::string> Corpus::class_names() const { return spec.classes; }

std::size_t Corpus::class_index(const std::string& label) const {
  const auto it = std::find(spec.classes.begin(), spec.classes.end(), label);
  if (it == spec.classes.end()) throw std::invalid_argument("unknown action label '" + label + "'");
  return static_cast<std::size_t>(it - spec.classes.begin());
}

// ---- forward-kinematic generators ----

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

Vec3 rotate(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 rot_x(double a) { return {1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a)}; }
Mat3 rot_y(double a) { return {std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a)}; }
Mat3 rot_z(double a) { return {std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1}; }

// Joint angles of one frame. Positive swing moves a limb forward (+z); x points to the body's left.
struct Angles {
  double yaw = 0, lean = 0, neck = 0.1;
  double arm_swing[2] = {0, 0}, arm_abduct[2] = {0.15, 0.15}, elbow[2] = {0.25, 0.25};
  double hip_swing[2] = {0, 0}, leg_abduct[2] = {0.08, 0.08};
};

constexpr Vec3 kUp{0, 1, 0};
constexpr Vec3 kDown{0, -1, 0};

struct BoneLengths {
  double spine, neck, upper_arm[2], forearm[2], leg[2];
};

void pose_from_angles(const Angles& a, const BoneLengths& L, std::span<double> out) {
  const Mat3 body = rot_y(a.yaw);
  auto put = [&](std::size_t j, const Vec3& v) {
    for (int k = 0; k < 3; ++k) out[j * 3 + k] = v[k];
  };
  auto plus = [](const Vec3& p, const Vec3& d, double len) {
    return Vec3{p[0] + len * d[0], p[1] + len * d[1], p[2] + len * d[2]};
  };
  const Vec3 pelvis{0, 0, 0};
  const Vec3 spine = plus(pelvis, rotate(mat_mul(body, rot_x(a.lean)), kUp), L.spine);
  const Vec3 head = plus(spine, rotate(mat_mul(body, rot_x(a.lean + a.neck)), kUp), L.neck);
  put(0, pelvis);
  put(1, spine);
  put(2, head);
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? 1.0 : -1.0;  // left arm abducts towards +x
    const Mat3 arm = mat_mul(mat_mul(body, rot_x(-a.arm_swing[side])), rot_z(sign * a.arm_abduct[side]));
    const Vec3 elbow = plus(spine, rotate(arm, kDown), L.upper_arm[side]);
    const Vec3 hand = plus(elbow, rotate(mat_mul(arm, rot_x(-a.elbow[side])), kDown), L.forearm[side]);
    put(side == 0 ? 3 : 5, elbow);
    put(side == 0 ? 4 : 6, hand);
    const Mat3 leg = mat_mul(mat_mul(body, rot_x(-a.hip_swing[side])), rot_z(sign * a.leg_abduct[side]));
    put(side == 0 ? 7 : 8, plus(pelvis, rotate(leg, kDown), L.leg[side]));
  }
}

BoneLengths bone_lengths(const Skeleton& s) {
  const Skeleton ref = Skeleton::synthetic9();
  if (s.joints() != 9) throw ConfigError("synth: generators need the 9-joint synthetic skeleton topology");
  for (std::size_t i = 0; i < ref.edges.size(); ++i) {
    if (s.edges[i].parent != ref.edges[i].parent || s.edges[i].child != ref.edges[i].child) {
      throw ConfigError("synth: skeleton edge " + std::to_string(i) + " differs from the synthetic topology");
    }
  }
  const auto& e = s.edges;
  return {e[0].length, e[1].length, {e[2].length, e[4].length}, {e[3].length, e[5].length}, {e[6].length, e[7].length}};
}

}  // namespace

const std::vector<std::string>& synth_classes() {
  static const std::vector<std::string> names{"walk", "wave", "squat", "turn"};
  return names;
}

MotionClip synth_clip(const std::string& label, const Skeleton& skeleton, std::size_t frames, double fps,
                      double jitter, std::uint64_t seed) {
  const BoneLengths L = bone_lengths(skeleton);
  Rng rng(seed);
  const double freq_scale = 1.0 + jitter * (2.0 * rng.uniform() - 1.0);
  const double amp = 1.0 + jitter * (2.0 * rng.uniform() - 1.0);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::function<Angles(double)> angles;
  if (label == "walk") {
    angles = [=](double s) {
      Angles a;
      const double c = std::sin(two_pi * 1.0 * freq_scale * s + phase);
      a.hip_swing[0] = 0.45 * amp * c;
      a.hip_swing[1] = -0.45 * amp * c;
      a.arm_swing[0] = -0.4 * amp * c;
      a.arm_swing[1] = 0.4 * amp * c;
      a.elbow[0] = 0.3 + 0.15 * amp * (1 + c);
      a.elbow[1] = 0.3 + 0.15 * amp * (1 - c);
      a.lean = 0.06;
      return a;
    };
  } else if (label == "wave") {
    angles = [=](double s) {
      Angles a;
      const double c = std::sin(two_pi * 1.5 * freq_scale * s + phase);
      a.arm_abduct[1] = 2.3;
      a.arm_swing[1] = 0.2;
      a.elbow[1] = 0.7 + 0.5 * amp * c;
      a.elbow[0] = 0.2;
      a.lean = 0.03 * c;
      a.neck = 0.15;
      return a;
    };
  } else if (label == "squat") {
    angles = [=](double s) {
      Angles a;
      const double d = 0.5 * amp * (1.0 - std::cos(two_pi * 0.5 * freq_scale * s + phase));
      a.lean = 0.4 * d;
      a.hip_swing[0] = a.hip_swing[1] = 0.8 * d;
      a.arm_swing[0] = a.arm_swing[1] = 1.3 * d;
      a.elbow[0] = a.elbow[1] = 0.2;
      a.neck = 0.1 + 0.2 * d;
      a.leg_abduct[0] = a.leg_abduct[1] = 0.1 + 0.1 * d;
      return a;
    };
  } else if (label == "turn") {
    angles = [=](double s) {
      Angles a;
      const double c = std::sin(two_pi * 0.4 * freq_scale * s + phase);
      a.yaw = 1.2 * amp * c;
      a.arm_abduct[0] = a.arm_abduct[1] = 0.5;
      a.elbow[0] = a.elbow[1] = 0.4;
      a.leg_abduct[0] = a.leg_abduct[1] = 0.12;
      a.lean = 0.05;
      return a;
    };
  } else {
    throw ConfigError("synth: unknown action class '" + label + "'");
  }

  MotionClip clip;
  clip.skeleton = skeleton.name;
  clip.label = label;
  clip.fps = fps;
  clip.source = std::string(kSynthGeneratorVersion) + ":" + label + ":seed=" + std::to_string(seed);
  clip.poses = PoseSequence(frames, 9);
  for (std::size_t t = 0; t < frames; ++t) pose_from_angles(angles(static_cast<double>(t) / fps), L, clip.poses.frame(t));
  return clip;
}

Corpus synth_corpus(const CorpusSpec& spec, const Skeleton& skeleton) {
  spec.validate();
  skeleton.validate();
  Corpus c;
  c.spec = spec;
  c.skeleton = skeleton;
  NoGradGuard guard;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < spec.clips_per_class; ++i) {
      MotionClip clip = synth_clip(spec.classes[k], skeleton, spec.frames, spec.fps, spec.jitter,
                                   derive_seed(spec.seed, k, i));
      clip.poses.observed = spec.observed;
      const Tensor flat = clip.poses.flat_tensor();
      const double limb = limb_loss(flat, skeleton).item();
      const double angle = angle_loss(flat, skeleton).loss.item();
      if (limb > 1e-20 || angle != 0.0) {
        throw ConfigError("synth: clip " + std::to_string(i) + " of class '" + spec.classes[k] +
                          "' violates the skeleton (limb loss " + std::to_string(limb) + ", angle loss " +
                          std::to_string(angle) + ")");
      }
      members.push_back(c.clips.size());
      c.clips.push_back(std::move(clip));
    }
    Rng split(derive_seed(spec.seed, 0x5EED, k));
    std::shuffle(members.begin(), members.end(), split.engine());
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) (i < n_train ? c.train : c.test).push_back(members[i]);
  }
  std::sort(c.train.begin(), c.train.end());
  std::sort(c.test.begin(), c.test.end());
  return c;
}

// ---- corpus files ----

namespace {

std::string clip_file_name(const Corpus& c, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "clip_%04zu_%s.clip", i, c.clips[i].label.c_str());
  return buf;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, ClipEncoding encoding) {
  std::filesystem::create_directories(dir / "clips");
  nlohmann::ordered_json m;
  m["format"] = "hitdvae-corpus";
  m["version"] = 1;
  m["generator"] = kSynthGeneratorVersion;
  m["seed"] = corpus.spec.seed;
  m["spec"] = corpus.spec.to_json();
  m["skeleton"] = corpus.skeleton.to_json();
  std::vector<int> is_train(corpus.clips.size(), 0);
  for (std::size_t i : corpus.train) is_train[i] = 1;
  auto& clips = m["clips"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    const std::string name = clip_file_name(corpus, i);
    save_clip(dir / "clips" / name, corpus.clips[i], encoding);
    clips.push_back({{"file", "clips/" + name}, {"label", corpus.clips[i].label}, {"split", is_train[i] ? "train" : "test"}});
  }
  std::ofstream f(dir / "manifest.json", std::ios::binary);
  f << m.dump(2) << "\n";
  if (!f) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": parse error at byte offset " + std::to_string(e.byte));
  }
  if (m.value("format", "") != "hitdvae-corpus" || m.value("version", 0) != 1) {
    throw FormatError(path.string() + ": not a version-1 hitdvae corpus manifest");
  }
  Corpus c;
  c.spec = CorpusSpec::from_json(m.at("spec"), "manifest.spec");
  c.skeleton = Skeleton::from_json(m.at("skeleton"), "manifest.skeleton");
  for (const auto& entry : m.at("clips")) {
    MotionClip clip = load_clip(dir / entry.at("file").get<std::string>());
    if (clip.label != entry.at("label").get<std::string>()) throw FormatError("manifest label mismatch for " + entry.at("file").get<std::string>());
    if (clip.poses.joints != c.skeleton.joints()) throw FormatError("clip joint count does not match the corpus skeleton");
    (entry.at("split") == "train" ? c.train : c.test).push_back(c.clips.size());
    c.clips.push_back(std::move(clip));
  }
  return c;
}

// ---- rendering ----

std::string render_svg(const std::vector<PoseSequence>& samples, const Skeleton& skeleton,
                       const RenderOptions& options) {
  auto axis_index = [](char c) -> std::size_t {
    if (c < 'x' || c > 'z') throw std::invalid_argument(std::string("render: unknown axis '") + c + "'");
    return static_cast<std::size_t>(c - 'x');
  };
  const std::size_t hx = axis_index(options.horizontal), vy = axis_index(options.vertical);
  double lo = -1.0, hi = 1.0;
  for (const auto& s : samples)
    for (std::size_t f : options.frames) {
      if (f >= s.frames) throw std::out_of_range("render: frame " + std::to_string(f) + " beyond sequence length");
      for (std::size_t j = 0; j < s.joints; ++j) {
        lo = std::min(lo, s.at(f, j, vy));
        hi = std::max(hi, s.at(f, j, vy));
      }
    }
  const double margin = 20.0;
  const double width = 2 * margin + options.scale * options.spacing * static_cast<double>(std::max<std::size_t>(options.frames.size(), 1));
  const double height = 2 * margin + options.scale * (hi - lo);
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" "
                "width=\"%.1f\" height=\"%.1f\" viewBox=\"0 0 %.1f %.1f\">\n",
                width, height, width, height);
  out += buf;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double hue = std::fmod(360.0 * static_cast<double>(k) * 0.618033988749895, 360.0);
    std::snprintf(buf, sizeof buf, "<g stroke=\"hsl(%.0f,70%%,45%%)\" stroke-width=\"2\" fill=\"none\">\n", hue);
    out += buf;
    for (std::size_t i = 0; i < options.frames.size(); ++i) {
      const std::size_t f = options.frames[i];
      const double ox = margin + options.scale * options.spacing * (static_cast<double>(i) + 0.5);
      for (const auto& e : skeleton.edges) {
        const auto& s = samples[k];
        std::snprintf(buf, sizeof buf, "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\"/>\n",
                      ox + options.scale * s.at(f, e.parent, hx), margin + options.scale * (hi - s.at(f, e.parent, vy)),
                      ox + options.scale * s.at(f, e.child, hx), margin + options.scale * (hi - s.at(f, e.child, vy)));
        out += buf;
      }
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace hitdvae
