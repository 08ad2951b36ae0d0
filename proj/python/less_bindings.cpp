// Python access to the numerics and the pipeline stages. Images cross the
// boundary as uint8 H x W x 3 arrays; matrices as float64 arrays.

#include <cstring>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "less/baselines.hpp"
#include "less/config.hpp"
#include "less/errors.hpp"
#include "less/evalkit.hpp"
#include "less/fusion.hpp"
#include "less/ingest.hpp"
#include "less/nn/attention.hpp"
#include "less/pipeline.hpp"
#include "less/strategies.hpp"
#include "less/synthgen.hpp"
#include "less/vpu.hpp"

namespace py = pybind11;
namespace pl = less::pipeline;
using MatD = less::nn::Matrix<double>;

namespace {

cv::Mat to_mat(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw less::ShapeError("expected an H x W x 3 uint8 array");
  cv::Mat view(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC3,
               const_cast<std::uint8_t*>(a.data()));
  return view.clone();
}

py::array_t<std::uint8_t> to_array(const cv::Mat& m) {
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  py::array_t<std::uint8_t> out({c.rows, c.cols, c.channels()});
  std::memcpy(out.mutable_data(), c.data, c.total() * c.elemSize());
  return out;
}

less::RunConfig make_config(const std::vector<std::string>& files, const std::vector<std::string>& sets) {
  less::RunConfig cfg;
  for (const auto& f : files) cfg.merge_file(f);
  cfg.merge_environment();
  for (const auto& s : sets) cfg.set_assignment(s);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_less, m) {
  m.doc() = "Two-stage multi-scale slide classification";

  py::register_exception<less::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<less::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<less::MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception<less::DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<pl::OutputExistsError>(m, "OutputExistsError", PyExc_FileExistsError);

  // ---- config
  py::class_<less::RunConfig>(m, "Config")
      .def(py::init(&make_config), py::arg("files") = std::vector<std::string>{},
           py::arg("set") = std::vector<std::string>{})
      .def("get", &less::RunConfig::get)
      .def("set", &less::RunConfig::set)
      .def("resolve_key", &less::RunConfig::resolve_key)
      .def("hash", &less::RunConfig::hash)
      .def("serialize", &less::RunConfig::serialize)
      .def("values", &less::RunConfig::values)
      .def("validate", &less::RunConfig::validate);

  // ---- numerics
  m.def("attention", [](const MatD& q, const MatD& k, const MatD& v, int heads) {
    auto r = less::nn::attention<double>(q, k, v, heads);
    return py::make_tuple(r.output, r.maps);
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 1,
        "Scaled dot-product attention; returns (output, per-head maps).");
  m.def("variational_loss", [](const std::vector<double>& u, const std::vector<double>& p) {
    return less::vpu::variational_loss(u, p);
  }, py::arg("phi_unlabeled"), py::arg("phi_positive"));
  m.def("mixup_consistency", [](const std::vector<double>& u, const std::vector<double>& mix, double gamma) {
    return less::vpu::mixup_consistency(u, mix, gamma);
  }, py::arg("phi_unlabeled"), py::arg("phi_mixed"), py::arg("gamma"));
  m.def("vpu_objective", &less::vpu::vpu_objective, py::arg("l_var"), py::arg("l_reg"), py::arg("lam"));

  m.def("auc", [](const std::vector<double>& s, const std::vector<int>& y) { return less::eval::auc(s, y); },
        py::arg("scores"), py::arg("labels"));
  m.def("metrics", [](const std::vector<double>& s, const std::vector<int>& y, double threshold) {
    const auto r = less::eval::compute_metrics(s, y, threshold);
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["auc"] = r.auc;
    d["sensitivity"] = r.sensitivity;
    d["specificity"] = r.specificity;
    return d;
  }, py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5, "Percentages.");
  m.def("train_counts", &less::eval::train_counts, py::arg("n_benign"), py::arg("n_malignant"),
        py::arg("fraction") = 0.7);

  m.def("counting_score", &less::counting_score, py::arg("count"), py::arg("k"), py::arg("threshold") = 50);
  m.def("graph_edges", [](const MatD& emb, double tau) { return less::baselines::build_graph(emb, tau).edges; },
        py::arg("embeddings"), py::arg("tau") = 0.9);
  m.def("top_k_indices", &less::fusion::top_k_indices, py::arg("scores"), py::arg("k"));

  // ---- images
  m.def("tile_positions", [](int w, int h, int patch, int stride) {
    std::vector<std::pair<int, int>> out;
    for (const auto& p : less::ingest::tile_positions(w, h, patch, stride)) out.emplace_back(p.x, p.y);
    return out;
  }, py::arg("width"), py::arg("height"), py::arg("patch_px") = less::ingest::kSmallPatchPx,
        py::arg("stride") = less::ingest::kTileStride);
  m.def("filter_patch", [](const py::array_t<std::uint8_t>& patch, double th1, double th2, double th3) {
    const auto r = less::ingest::filter_patch(to_mat(patch), {th1, th2, th3});
    return std::string(less::ingest::verdict_name(r.verdict));
  }, py::arg("patch"), py::arg("th1") = 236.0, py::arg("th2") = 10.0, py::arg("th3") = 236.0,
        "Returns 'keep', 'th1', 'th2' or 'th3'.");
  m.def("generate_slide", [](const less::RunConfig& cfg, int index) {
    const auto sc = cfg.synth();
    const auto plans = less::synth::plan_corpus(sc);
    if (index < 0 || index >= static_cast<int>(plans.size())) throw py::index_error("slide index out of range");
    const auto s = less::synth::generate_slide(sc, plans[static_cast<std::size_t>(index)]);
    return py::make_tuple(s.id, std::string(less::to_string(s.subtype)), to_array(s.image),
                          s.oracle.malignant_fraction());
  }, py::arg("config"), py::arg("index"), "Returns (id, subtype, image, malignant region fraction).");

  // ---- pipeline
  m.def("create_run", [](const less::RunConfig& cfg, bool force) {
    return pl::create_run(cfg.get("run.root"), cfg, force);
  }, py::arg("config"), py::arg("force") = false);
  m.def("synth_gen", [](const less::RunConfig& cfg, const std::filesystem::path& run, bool force) {
    pl::synth_gen(cfg, pl::Layout(run), force);
  }, py::arg("config"), py::arg("run"), py::arg("force") = false);
  m.def("ingest", [](const less::RunConfig& cfg, const std::filesystem::path& run, bool force) {
    const auto s = pl::ingest(cfg, pl::Layout(run), force);
    return py::make_tuple(s.n_slides, s.n_unusable, s.n_augmented_slides);
  }, py::arg("config"), py::arg("run"), py::arg("force") = false);
  m.def("run_downstream", [](const less::RunConfig& cfg, const std::filesystem::path& run, bool force) {
    py::gil_scoped_release release;
    return pl::run_downstream(cfg, pl::Layout(run), force).table;
  }, py::arg("config"), py::arg("run"), py::arg("force") = false, "Trains and evaluates; returns the results table.");
}
