#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <stdexcept>

#include "vlac/commands.hpp"
#include "vlac/evaluation.hpp"

namespace py = pybind11;
using namespace vlac;

namespace {

AssignMode mode_of(const std::string& name) {
  if (name == "injective") return AssignMode::injective;
  if (name == "many-to-one") return AssignMode::many_to_one;
  throw std::invalid_argument("mode must be 'injective' or 'many-to-one'");
}

py::dict report_dict(const EvalReport& rep) {
  py::dict d;
  d["layer"] = rep.layer;
  d["K"] = rep.K;
  d["predictions"] = rep.predictions;
  d["occupancy"] = rep.occupancy;
  py::list channels;
  for (const auto& ch : rep.channels) {
    py::dict c;
    c["channel"] = ch.channel;
    c["injective"] = ch.acc_injective;
    c["many_to_one"] = ch.acc_many_to_one;
    channels.append(c);
  }
  d["channels"] = channels;
  d["formatted"] = rep.formatted();
  return d;
}

}  // namespace

PYBIND11_MODULE(_vlac, m) {
  m.doc() = "ladder autoencoder with Gaussian-mixture latents";

  // ---- data -----------------------------------------------------------------
  py::class_<FactorSpec>(m, "FactorSpec")
      .def(py::init([](int height, int width, int channels, int shapes, int thicknesses,
                       int hues, int brightnesses, double jitter) {
             FactorSpec s;
             s.height = height;
             s.width = width;
             s.channels = channels;
             s.shapes = shapes;
             s.thicknesses = thicknesses;
             s.hues = hues;
             s.brightnesses = brightnesses;
             s.jitter = jitter;
             return s;
           }),
           py::arg("height") = 16, py::arg("width") = 16, py::arg("channels") = 3,
           py::arg("shapes") = 4, py::arg("thicknesses") = 1, py::arg("hues") = 4,
           py::arg("brightnesses") = 1, py::arg("jitter") = 1.0)
      .def_readwrite("height", &FactorSpec::height)
      .def_readwrite("width", &FactorSpec::width)
      .def_readwrite("channels", &FactorSpec::channels)
      .def_readwrite("shapes", &FactorSpec::shapes)
      .def_readwrite("thicknesses", &FactorSpec::thicknesses)
      .def_readwrite("hues", &FactorSpec::hues)
      .def_readwrite("brightnesses", &FactorSpec::brightnesses)
      .def_readwrite("jitter", &FactorSpec::jitter)
      .def_property_readonly("cardinalities", &FactorSpec::cardinalities);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n", &Dataset::n)
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def_readonly("channels", &Dataset::channels)
      .def_readonly("label_channels", &Dataset::label_channels)
      .def_readonly("cardinalities", &Dataset::cardinalities)
      .def_property_readonly("x_dim", &Dataset::x_dim)
      .def("label", &Dataset::label, py::arg("i"), py::arg("channel"))
      .def("image", [](const Dataset& ds, int64_t i) { return ds.image(i).data; }, py::arg("i"),
           "flat [H*W*C] pixels in [0,1]");

  m.def("synth_generate", &synth_generate, py::arg("spec"), py::arg("n"), py::arg("seed"));
  m.def("save_raw", &save_raw, py::arg("dataset"), py::arg("path"));
  m.def("load_raw", &load_raw, py::arg("path"));

  // ---- evaluation --------------------------------------------------------------
  m.def(
      "cluster_accuracy",
      [](std::vector<int> y, std::vector<int> truth, int K, int T, const std::string& mode) {
        const LabelPair pairs = make_label_pair(std::move(y), std::move(truth), K, T);
        const AssignmentResult res = cluster_accuracy(pairs, mode_of(mode));
        py::dict d;
        d["accuracy"] = res.accuracy;
        d["mapping"] = res.mapping;
        return d;
      },
      py::arg("y"), py::arg("truth"), py::arg("K"), py::arg("T"),
      py::arg("mode") = "many-to-one",
      "optimal cluster-to-class accuracy; labels are 1-based");

  // ---- model and training ---------------------------------------------------------
  py::class_<LayerSpec>(m, "LayerSpec")
      .def(py::init([](int64_t d_z, int64_t K, int64_t hidden) {
             return LayerSpec{d_z, K, hidden};
           }),
           py::arg("d_z") = 4, py::arg("K") = 1, py::arg("hidden") = 64)
      .def_readwrite("d_z", &LayerSpec::d_z)
      .def_readwrite("K", &LayerSpec::K)
      .def_readwrite("hidden", &LayerSpec::hidden);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("layers", &ModelConfig::layers)
      .def_readwrite("x_dim", &ModelConfig::x_dim)
      .def_readwrite("sigma_x", &ModelConfig::sigma_x)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate);

  m.def("preset_model", &preset_model, py::arg("name"), py::arg("x_dim"),
        "vlae, vlac-kone, vlac-ktwo, vlac-desk or gm-dgm");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("eps", &TrainConfig::eps)
      .def_readwrite("tau_start", &TrainConfig::tau_start)
      .def_readwrite("tau_end", &TrainConfig::tau_end)
      .def_readwrite("anneal_steps", &TrainConfig::anneal_steps)
      .def_readwrite("straight_through", &TrainConfig::straight_through)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_property(
          "precision",
          [](const TrainConfig& tc) { return tc.precision == Precision::f32 ? "f32" : "f64"; },
          [](TrainConfig& tc, const std::string& v) {
            if (v == "f32")
              tc.precision = Precision::f32;
            else if (v == "f64")
              tc.precision = Precision::f64;
            else
              throw std::invalid_argument("precision must be f32 or f64");
          })
      .def("validate", &TrainConfig::validate);

  py::class_<ElboValues>(m, "ElboValues")
      .def_readonly("total", &ElboValues::total)
      .def_readonly("reconstruction", &ElboValues::reconstruction)
      .def_readonly("kl_z", &ElboValues::kl_z)
      .def_readonly("kl_y", &ElboValues::kl_y);

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<ModelConfig, TrainConfig>(), py::arg("model"), py::arg("train"))
      .def_property_readonly("step", &Trainer::step)
      .def(
          "train_step",
          [](Trainer& t, const std::vector<double>& x_flat, int64_t batch) {
            const int64_t x_dim = t.model_config().x_dim;
            if (batch <= 0 || static_cast<int64_t>(x_flat.size()) != batch * x_dim)
              throw std::invalid_argument("x must hold batch * x_dim values");
            return t.train_step(Array({batch, x_dim}, x_flat));
          },
          py::arg("x"), py::arg("batch"),
          "one ascent update on a flat row-major [batch, x_dim] batch; returns the bound")
      .def("train", &Trainer::train, py::arg("dataset"), py::arg("out_dir"),
           "run to the configured step count, logging metrics and checkpoints")
      .def("save_checkpoint", &Trainer::save_checkpoint, py::arg("prefix"))
      .def("load_checkpoint", &Trainer::load_checkpoint, py::arg("prefix"))
      .def(
          "evaluate",
          [](const Trainer& t, const Dataset& ds, int layer) {
            if (layer == 0) {
              layer = designated_layer(t.model_config());
              if (layer == 0)
                throw std::invalid_argument("no layer with K > 1 to evaluate");
            }
            return report_dict(evaluate_model(t.model_config(), t.params(), ds, layer));
          },
          py::arg("dataset"), py::arg("layer") = 0,
          "cluster-accuracy report; layer 0 picks the deepest K > 1 layer");

  // ---- selfcheck ---------------------------------------------------------------------
  m.def(
      "selfcheck",
      [](const std::string& inject_fault) {
        std::ostringstream log;
        const int code = cmd_selfcheck(inject_fault, log);
        return py::make_tuple(code == 0, log.str());
      },
      py::arg("inject_fault") = "",
      "numerical self-test; returns (ok, log)");
}
