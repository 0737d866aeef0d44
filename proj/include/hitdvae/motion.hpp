#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hitdvae/pose.hpp"
#include "hitdvae/skeleton.hpp"

namespace hitdvae {

/// Raised for malformed clip or corpus files. The message names the location.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MotionClip {
  std::string skeleton;  // skeleton name
  std::string label;
  double fps = 25.0;
  std::string source;
  PoseSequence poses;

  bool operator==(const MotionClip&) const = default;
};

enum class ClipEncoding { Base64, Csv };

constexpr int kClipFormatVersion = 1;

/// One JSON header line followed by the body (base64 of little-endian doubles, or CSV rows of J*3 values).
std::string encode_clip(const MotionClip& clip, ClipEncoding encoding = ClipEncoding::Base64);
MotionClip decode_clip(const std::string& text);
void save_clip(const std::filesystem::path& path, const MotionClip& clip, ClipEncoding encoding = ClipEncoding::Base64);
MotionClip load_clip(const std::filesystem::path& path);

/// Subtracts the root joint from every joint of every frame.
PoseSequence preprocess(const PoseSequence& raw);

struct CorpusSpec {
  std::vector<std::string> classes{"walk", "wave", "squat", "turn"};
  std::size_t clips_per_class = 100;
  std::size_t frames = 40;
  std::size_t observed = 10;
  double fps = 25.0;
  double jitter = 0.15;  // relative spread of frequency and amplitude
  double train_fraction = 0.8;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j, const std::string& path = "corpus");
};

struct Corpus {
  CorpusSpec spec;
  Skeleton skeleton;
  std::vector<MotionClip> clips;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::vector<std::string> class_names() const;
  std::size_t class_index(const std::string& label) const;
};

constexpr const char* kSynthGeneratorVersion = "synth-fk-1";

/// Names of the parametric generators available to synth_corpus.
const std::vector<std::string>& synth_classes();
/// One clip of `label` from the forward-kinematic generator. `jitter` = 0 fixes frequency
/// and amplitude; the phase stays seed dependent.
MotionClip synth_clip(const std::string& label, const Skeleton& skeleton, std::size_t frames, double fps,
                      double jitter, std::uint64_t seed);
/// Deterministic corpus with a per-class train/test split. Rejects clips that fail the
/// limb or angle validators.
Corpus synth_corpus(const CorpusSpec& spec, const Skeleton& skeleton);

/// Writes manifest.json and clips/ under dir.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, ClipEncoding encoding = ClipEncoding::Base64);
Corpus load_corpus(const std::filesystem::path& dir);

struct RenderOptions {
  std::vector<std::size_t> frames;  // frames to draw, left to right
  char horizontal = 'x';            // projection axes
  char vertical = 'y';
  double scale = 100.0;             // pixels per meter
  double spacing = 1.2;             // meters between drawn frames
};

/// Stick figures of every sample at the selected frames, one color per sample, SVG 1.1.
std::string render_svg(const std::vector<PoseSequence>& samples, const Skeleton& skeleton, const RenderOptions& options);

}  // namespace hitdvae
