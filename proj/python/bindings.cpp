#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hitdvae/checkpoint.hpp"
#include "hitdvae/config.hpp"
#include "hitdvae/generator.hpp"
#include "hitdvae/metrics.hpp"
#include "hitdvae/motion.hpp"
#include "hitdvae/pipeline.hpp"

namespace py = pybind11;
using namespace hitdvae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PoseSequence to_pose(const Array& a, std::size_t observed = 0) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("poses must have shape (T, J, 3)");
  const auto t = static_cast<std::size_t>(a.shape(0));
  const auto j = static_cast<std::size_t>(a.shape(1));
  return PoseSequence(t, j, std::vector<double>(a.data(), a.data() + a.size()), observed);
}

Array to_array(const PoseSequence& p) {
  Array out({p.frames, p.joints, std::size_t{3}});
  std::copy(p.coords.begin(), p.coords.end(), out.mutable_data());
  return out;
}

// K x T x J x 3
std::vector<PoseSequence> to_samples(const Array& a) {
  if (a.ndim() != 4 || a.shape(3) != 3) throw std::invalid_argument("samples must have shape (K, T, J, 3)");
  const auto k = static_cast<std::size_t>(a.shape(0));
  const auto t = static_cast<std::size_t>(a.shape(1));
  const auto j = static_cast<std::size_t>(a.shape(2));
  const std::size_t n = t * j * 3;
  std::vector<PoseSequence> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(t, j, std::vector<double>(a.data() + i * n, a.data() + (i + 1) * n));
  return out;
}

Array stack(const std::vector<PoseSequence>& s) {
  const std::size_t t = s.empty() ? 0 : s[0].frames, j = s.empty() ? 0 : s[0].joints;
  Array out({s.size(), t, j, std::size_t{3}});
  double* d = out.mutable_data();
  for (const auto& p : s) d = std::copy(p.coords.begin(), p.coords.end(), d);
  return out;
}

py::dict clip_dict(const MotionClip& c) {
  py::dict d;
  d["label"] = c.label;
  d["skeleton"] = c.skeleton;
  d["fps"] = c.fps;
  d["source"] = c.source;
  d["poses"] = to_array(c.poses);
  return d;
}

struct PyModel {
  RunConfig config;
  HitDvae model;

  static PyModel load(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (!ck.meta().contains("config")) throw FormatError(path + ": checkpoint has no config");
    PyModel m{RunConfig::from_json(ck.meta()["config"]), {}};
    m.model = HitDvae(m.config.model, 0);
    m.model.load_from(ck);
    return m;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Motion prediction core: synthetic corpus, generation and metrics";
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("build_id", &build_id);

  m.def(
      "synth_corpus",
      [](const std::string& config_path, std::optional<std::uint64_t> seed) {
        RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
        if (seed) c.corpus.seed = *seed;
        const Corpus corpus = synth_corpus(c.corpus, c.skeleton);
        py::list clips;
        for (const auto& clip : corpus.clips) clips.append(clip_dict(clip));
        py::dict d;
        d["clips"] = clips;
        d["train"] = corpus.train;
        d["test"] = corpus.test;
        d["classes"] = corpus.class_names();
        return d;
      },
      py::arg("config") = "", py::arg("seed") = py::none());

  m.def("load_clip", [](const std::string& path) { return clip_dict(load_clip(path)); }, py::arg("path"));
  m.def(
      "save_clip",
      [](const std::string& path, const Array& poses, const std::string& label, double fps, const std::string& skeleton,
         const std::string& encoding) {
        MotionClip c{skeleton, label, fps, "python", to_pose(poses)};
        if (encoding != "base64" && encoding != "csv") throw std::invalid_argument("encoding must be base64 or csv");
        save_clip(path, c, encoding == "csv" ? ClipEncoding::Csv : ClipEncoding::Base64);
      },
      py::arg("path"), py::arg("poses"), py::arg("label"), py::arg("fps") = 25.0, py::arg("skeleton") = "synthetic9",
      py::arg("encoding") = "base64");

  m.def("apd", [](const Array& samples) { return apd(to_samples(samples)); }, py::arg("samples"));
  m.def(
      "ade_fde",
      [](const Array& samples, const Array& gt, const std::string& mode) {
        if (mode != "best" && mode != "medium") throw std::invalid_argument("mode must be best or medium");
        const AdeFde r = ade_fde(to_samples(samples), to_pose(gt), mode == "best" ? Selection::Best : Selection::Medium);
        return py::make_tuple(r.ade, r.fde);
      },
      py::arg("samples"), py::arg("gt"), py::arg("mode") = "best");

  m.def(
      "total_loss_grad_check",
      [](std::uint64_t seed, double step) {
        const GradCheckReport r = total_loss_grad_check(seed, step);
        py::dict d;
        d["max_rel_error"] = r.max_rel_error;
        d["coordinates"] = r.coordinates;
        d["finite"] = r.finite;
        return d;
      },
      py::arg("seed") = 1, py::arg("step") = 1e-5);

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("checkpoint"))
      .def_property_readonly("config", [](const PyModel& p) { return p.config.to_json().dump(); })
      .def(
          "generate",
          [](const PyModel& p, const Array& observed, std::size_t horizon, std::size_t samples, std::uint64_t seed) {
            const PoseSequence obs = to_pose(observed, static_cast<std::size_t>(observed.shape(0)));
            std::vector<PoseSequence> out;
            {
              py::gil_scoped_release release;
              out = generate(p.model, obs, {horizon, samples}, seed);
            }
            return stack(out);
          },
          py::arg("observed"), py::arg("horizon"), py::arg("samples") = 1, py::arg("seed") = 0)
      .def(
          "generate_mean",
          [](const PyModel& p, const Array& observed, std::size_t horizon) {
            const PoseSequence obs = to_pose(observed, static_cast<std::size_t>(observed.shape(0)));
            return to_array(generate_mean(p.model, obs, horizon));
          },
          py::arg("observed"), py::arg("horizon"));
}
