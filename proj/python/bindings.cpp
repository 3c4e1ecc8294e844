#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "spgat/cli.hpp"
#include "spgat/graph_attention.hpp"
#include "spgat/gradcheck_suite.hpp"
#include "spgat/metrics.hpp"
#include "spgat/ppm.hpp"
#include "spgat/run_config.hpp"
#include "spgat/synth_scene.hpp"
#include "spgat/trainer.hpp"

namespace py = pybind11;
using namespace spgat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const Array& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    shape[static_cast<size_t>(i)] = static_cast<int64_t>(a.shape(i));
  }
  std::vector<double> values(static_cast<size_t>(a.size()));
  std::memcpy(values.data(), a.data(), values.size() * sizeof(double));
  return Tensor::from_data(std::move(shape), std::move(values));
}

py::array array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(),
              t.data().size() * sizeof(double));
  return out;
}

HsiCube cube_from_array(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("cube array must be [bands, height, width]");
  HsiCube cube;
  cube.bands = static_cast<int64_t>(a.shape(0));
  cube.height = static_cast<int64_t>(a.shape(1));
  cube.width = static_cast<int64_t>(a.shape(2));
  cube.values.resize(static_cast<size_t>(a.size()));
  std::memcpy(cube.values.data(), a.data(), cube.values.size() * sizeof(double));
  return cube;
}

py::array array_from_cube(const HsiCube& cube) {
  py::array_t<double> out({cube.bands, cube.height, cube.width});
  std::memcpy(out.mutable_data(), cube.values.data(),
              cube.values.size() * sizeof(double));
  return out;
}

LabelMap labels_from_array(const py::array_t<uint16_t, py::array::c_style |
                                                           py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("label array must be [height, width]");
  LabelMap labels;
  labels.height = static_cast<int64_t>(a.shape(0));
  labels.width = static_cast<int64_t>(a.shape(1));
  labels.classes.assign(a.data(), a.data() + a.size());
  return labels;
}

py::array array_from_labels(const LabelMap& labels) {
  py::array_t<uint16_t> out({labels.height, labels.width});
  std::memcpy(out.mutable_data(), labels.classes.data(),
              labels.classes.size() * sizeof(uint16_t));
  return out;
}

std::vector<PixelRef> coords_from_array(
    const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) {
    throw ShapeError("coords array must be [n, 3] holding (class, row, col)");
  }
  std::vector<PixelRef> out(static_cast<size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    out[static_cast<size_t>(i)] = {static_cast<uint16_t>(r(i, 0)),
                                   static_cast<int64_t>(r(i, 1)),
                                   static_cast<int64_t>(r(i, 2))};
  }
  return out;
}

py::array array_from_coords(const std::vector<PixelRef>& coords) {
  py::array_t<int64_t> out({static_cast<py::ssize_t>(coords.size()),
                            static_cast<py::ssize_t>(3)});
  auto w = out.mutable_unchecked<2>();
  for (size_t i = 0; i < coords.size(); ++i) {
    w(static_cast<py::ssize_t>(i), 0) = coords[i].cls;
    w(static_cast<py::ssize_t>(i), 1) = coords[i].row;
    w(static_cast<py::ssize_t>(i), 2) = coords[i].col;
  }
  return out;
}

ScoreKind score_from_string(const std::string& s) {
  if (s == "dot-product") return ScoreKind::kDotProduct;
  if (s == "feature-difference") return ScoreKind::kFeatureDifference;
  throw ConfigError("score must be dot-product or feature-difference, got '" + s +
                    "'");
}

py::dict dict_from_report(const EvalReport& r) {
  py::dict d;
  d["classes"] = r.classes;
  d["oa"] = r.oa;
  d["aa"] = r.aa;
  d["kappa"] = r.kappa;
  d["per_class_acc"] = r.per_class_acc;
  py::array_t<int64_t> conf({r.classes, r.classes});
  std::memcpy(conf.mutable_data(), r.confusion.data(),
              r.confusion.size() * sizeof(int64_t));
  d["confusion"] = conf;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "spectral pyramid graph attention core";
  tune_allocator();

  // Base registered first so later (more specific) translators match first.
  py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<SplitError>(m, "SplitError", PyExc_ValueError);
  py::register_exception<LabelError>(m, "LabelError", PyExc_ValueError);
  py::register_exception<EvalError>(m, "EvalError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "synth_scene",
      [](int64_t classes, int64_t bands, int64_t height, int64_t width,
         double noise_sigma, double context_scale, uint64_t seed) {
        SynthParams p;
        p.classes = classes;
        p.bands = bands;
        p.height = height;
        p.width = width;
        p.noise_sigma = noise_sigma;
        p.context_scale = context_scale;
        p.seed = seed;
        auto [cube, labels] = synth_scene(p);
        return py::make_tuple(array_from_cube(cube), array_from_labels(labels));
      },
      py::arg("classes") = 4, py::arg("bands") = 32, py::arg("height") = 48,
      py::arg("width") = 48, py::arg("noise_sigma") = 0.3,
      py::arg("context_scale") = 1.0, py::arg("seed") = 7,
      "Seeded Voronoi scene; returns (cube [S,H,W], labels [H,W]).");

  m.def(
      "normalize_bands",
      [](const Array& cube, const py::array_t<uint16_t, py::array::c_style |
                                                  py::array::forcecast>& labels) {
        return array_from_cube(
            normalize_bands(cube_from_array(cube), labels_from_array(labels)));
      },
      py::arg("cube"), py::arg("labels"),
      "Per-band standardization over labeled pixels.");

  m.def(
      "make_split",
      [](const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>&
             labels,
         int64_t count, double fraction, uint64_t seed) {
        SplitRequest req = count > 0 ? SplitRequest::per_class_count(count)
                                     : SplitRequest::per_class_fraction(fraction);
        SplitSpec split = make_split(labels_from_array(labels), req, seed);
        return py::make_tuple(array_from_coords(split.train),
                              array_from_coords(split.test));
      },
      py::arg("labels"), py::arg("count") = 10, py::arg("fraction") = 0.0,
      py::arg("seed") = 0,
      "Seeded per-class split; returns (train [n,3], test [m,3]) coord arrays.");

  m.def(
      "extract_patches",
      [](const Array& cube,
         const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>&
             labels,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>&
             coords,
         int64_t patch) {
        PatchBatch batch =
            extract_patches(cube_from_array(cube), labels_from_array(labels),
                            coords_from_array(coords), patch);
        py::array_t<int64_t> y(static_cast<py::ssize_t>(batch.labels.size()));
        std::memcpy(y.mutable_data(), batch.labels.data(),
                    batch.labels.size() * sizeof(int64_t));
        return py::make_tuple(array_from_tensor(batch.inputs), y);
      },
      py::arg("cube"), py::arg("labels"), py::arg("coords"), py::arg("patch") = 7,
      "Mirror-padded patches; returns (inputs [B,1,S,P,P], labels [B]).");

  m.def(
      "atrous_conv_spectral",
      [](const Array& x, const Array& w, const Array& b, int64_t rate,
         const std::string& pad) {
        Tape tape(false);
        PadMode mode;
        if (pad == "zero") {
          mode = PadMode::kZero;
        } else if (pad == "circular") {
          mode = PadMode::kCircular;
        } else {
          throw ConfigError("pad must be zero or circular, got '" + pad + "'");
        }
        return array_from_tensor(ops::atrous_conv_spectral(
            tape, tensor_from_array(x), tensor_from_array(w),
            tensor_from_array(b), rate, mode));
      },
      py::arg("x"), py::arg("w"), py::arg("b"), py::arg("rate") = 1,
      py::arg("pad") = "zero",
      "Dilated spectral convolution over [B,Cin,S,H,W] with kernel [Cout,Cin,K].");

  m.def(
      "conv_pointwise",
      [](const Array& x, const Array& w, const Array& b) {
        Tape tape(false);
        return array_from_tensor(ops::conv_pointwise(tape, tensor_from_array(x),
                                                     tensor_from_array(w),
                                                     tensor_from_array(b)));
      },
      py::arg("x"), py::arg("w"), py::arg("b"),
      "1x1 channel-mixing convolution over [B,Cin,...].");

  m.def(
      "leaky_relu",
      [](const Array& x, double slope) {
        Tape tape(false);
        return array_from_tensor(ops::leaky_relu(tape, tensor_from_array(x), slope));
      },
      py::arg("x"), py::arg("slope") = 0.2);

  m.def(
      "sigmoid",
      [](const Array& x) {
        Tape tape(false);
        return array_from_tensor(ops::sigmoid(tape, tensor_from_array(x)));
      },
      py::arg("x"));

  m.def(
      "softmax",
      [](const Array& x) {
        Tape tape(false);
        return array_from_tensor(ops::softmax(tape, tensor_from_array(x)));
      },
      py::arg("x"), "Softmax over the last axis.");

  m.def(
      "gat_attention",
      [](const Array& h, const Array& theta_w, const Array& theta_b,
         const Array& phi_w, const Array& phi_b, const Array& psi_w, double slope,
         const std::string& score) {
        GatLayerParams p;
        p.theta_w = tensor_from_array(theta_w);
        p.theta_b = tensor_from_array(theta_b);
        p.phi_w = tensor_from_array(phi_w);
        p.phi_b = tensor_from_array(phi_b);
        p.psi_w = tensor_from_array(psi_w);
        // xi is unused by the score computation but must be well-formed.
        p.xi_w = Tensor::zeros({1, p.theta_w.dim(1)});
        p.xi_b = Tensor::zeros({1});
        p.slope = slope;
        p.score = score_from_string(score);
        Tape tape(false);
        return array_from_tensor(gat_scores(tape, tensor_from_array(h), p));
      },
      py::arg("h"), py::arg("theta_w"), py::arg("theta_b"), py::arg("phi_w"),
      py::arg("phi_b"), py::arg("psi_w"), py::arg("slope") = 0.2,
      py::arg("score") = "dot-product",
      "Row-stochastic attention [B,N,N] from node features [B,N,d].");

  m.def(
      "lattice_adjacency",
      [](int64_t p) { return array_from_tensor(lattice_adjacency_normalized(p)); },
      py::arg("p"),
      "Symmetric-normalized 8-neighbor adjacency with self loops, [p*p, p*p].");

  m.def(
      "metrics",
      [](const py::array_t<int64_t, py::array::c_style | py::array::forcecast>&
             confusion) {
        if (confusion.ndim() != 2 || confusion.shape(0) != confusion.shape(1)) {
          throw ShapeError("confusion must be a square [C,C] matrix");
        }
        std::vector<int64_t> counts(confusion.data(),
                                    confusion.data() + confusion.size());
        return dict_from_report(report_from_confusion(
            std::move(counts), static_cast<int64_t>(confusion.shape(0))));
      },
      py::arg("confusion"), "OA/AA/Kappa and per-class recall from raw counts.");

  m.def(
      "labels_to_ppm",
      [](const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>&
             labels) { return py::bytes(labels_to_ppm(labels_from_array(labels))); },
      py::arg("labels"), "Binary PPM bytes using the fixed class palette.");

  m.def(
      "run_experiment",
      [](const std::string& config_text) {
        RunConfig config = parse_config_text(config_text);
        apply_variant(config);
        config.validate();
        if (config.dataset != "synth") {
          throw ConfigError("run_experiment supports only dataset = synth");
        }
        SynthParams sp = config.synth;
        sp.seed = config.seed;
        auto [cube, labels] = synth_scene(sp);
        HsiCube norm = normalize_bands(cube, labels);
        const int64_t classes = labels.num_classes();
        SplitSpec split = make_split(labels, config.split_request(), config.seed);
        PatchBatch train_data =
            extract_patches(norm, labels, split.train, config.patch);
        PatchBatch test_data =
            extract_patches(norm, labels, split.test, config.patch);
        SessionsResult res =
            run_sessions(config.model_config(classes), config.train_settings(),
                         config.sessions, train_data, test_data, classes);
        py::dict d;
        d["variant"] = config.variant;
        d["classes"] = classes;
        d["mean_oa"] = res.mean_oa;
        d["mean_aa"] = res.mean_aa;
        d["mean_kappa"] = res.mean_kappa;
        py::list sessions;
        for (const SessionResult& s : res.sessions) {
          py::dict sd = dict_from_report(s.report);
          sd["epoch_loss"] = s.epoch_loss;
          sessions.append(sd);
        }
        d["sessions"] = sessions;
        return d;
      },
      py::arg("config_text"),
      "Parses a config, trains the sessions on the synthetic scene, and "
      "returns the averaged metrics.");

  m.def(
      "gradcheck_suite",
      [](double tolerance) {
        py::list out;
        for (const CheckOutcome& c : run_gradcheck_suite(tolerance)) {
          out.append(py::make_tuple(c.name, c.max_rel_err, c.pass));
        }
        return out;
      },
      py::arg("tolerance") = 1e-4,
      "Finite-difference checks over every primitive; returns "
      "(name, max_rel_err, pass) tuples.");

  m.def(
      "cli", [](const std::vector<std::string>& args) { return cli_main(args); },
      py::arg("args"), "Invokes the command-line entry point in process.");
}
