#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tsenas/diagnostics.hpp"
#include "tsenas/error.hpp"
#include "tsenas/optimizers.hpp"
#include "tsenas/runner.hpp"
#include "tsenas/search_space.hpp"
#include "tsenas/supernet.hpp"

namespace py = pybind11;
using namespace tsenas;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Array& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ad::Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return ad::Tensor(std::move(shape), to_vec(a));
}

Batch to_batch(const Array& inputs, const std::vector<int>& labels) { return {to_tensor(inputs), labels}; }

ArchEncoding to_alpha(const Supernet& net, const Array& alpha) {
  const ArchEncoding shape = net.initial_alpha();
  if (static_cast<std::size_t>(alpha.size()) != shape.flat().size())
    throw ShapeError("alpha must have " + std::to_string(shape.flat().size()) + " entries");
  return ArchEncoding(shape.num_edges(), shape.num_ops(), to_vec(alpha));
}

SearchSpace space_of(const std::string& preset) {
  if (!preset.empty() && preset.front() == '{') return make_custom_space(nlohmann::json::parse(preset));
  return make_space(preset);
}

UnrollWindow window_of(const Supernet& net, const std::vector<std::pair<Array, std::vector<int>>>& bs) {
  UnrollWindow w{std::vector<double>(net.weights().begin(), net.weights().end()), {}};
  for (const auto& [x, y] : bs) w.batches.push_back(to_batch(x, y));
  return w;
}

}  // namespace

PYBIND11_MODULE(_tsenas, m) {
  m.doc() = "Native core of the tsenas architecture-search engine";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("mixture_weights", [](const std::vector<double>& a) { return mixture_weights(a); });

  m.def(
      "space_info",
      [](const std::string& preset) {
        const SearchSpace sp = space_of(preset);
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (const Edge& e : sp.topology.edges()) edges.emplace_back(e.from, e.to);
        std::vector<std::string> ops;
        for (OpKind o : sp.ops) ops.emplace_back(op_tag(o));
        return py::dict(py::arg("edges") = edges, py::arg("ops") = ops,
                        py::arg("nodes") = sp.topology.num_nodes());
      },
      py::arg("preset"));

  m.def(
      "discretize",
      [](const std::string& preset, const Array& alpha, bool top_k) {
        const SearchSpace sp = space_of(preset);
        ArchEncoding a(sp.topology.num_edges(), sp.num_ops(), to_vec(alpha));
        const Genotype g =
            discretize(a, sp, top_k ? DiscretizeRule::TopKEdges : DiscretizeRule::ArgmaxPerEdge);
        return genotype_to_json(g, sp).dump();
      },
      py::arg("preset"), py::arg("alpha"), py::arg("top_k") = false);

  m.def(
      "cell_depth",
      [](const std::string& preset, const std::string& genotype) {
        const SearchSpace sp = space_of(preset);
        return cell_depth(genotype_from_json(nlohmann::json::parse(genotype), sp), sp.topology);
      },
      py::arg("preset"), py::arg("genotype"));

  m.def(
      "skip_count",
      [](const std::string& preset, const std::string& genotype) {
        const SearchSpace sp = space_of(preset);
        return skip_count(genotype_from_json(nlohmann::json::parse(genotype), sp));
      },
      py::arg("preset"), py::arg("genotype"));

  m.def(
      "synth_dataset",
      [](const std::string& spec, std::uint64_t seed) {
        const Dataset ds = load_dataset_spec(parse_dataset_spec(spec), seed);
        return py::make_tuple(to_array(ds.features), ds.labels, ds.classes);
      },
      py::arg("spec"), py::arg("seed") = 0);

  py::class_<Supernet>(m, "Supernet")
      .def(py::init([](const std::string& preset, std::size_t layers, std::size_t width,
                       std::vector<std::size_t> input_shape, int classes, std::uint64_t seed) {
             SupernetConfig cfg;
             cfg.space = space_of(preset);
             cfg.layers = layers;
             cfg.width = width;
             cfg.input_shape = ad::Shape(input_shape.begin(), input_shape.end());
             cfg.classes = classes;
             cfg.seed = seed;
             return Supernet(cfg);
           }),
           py::arg("preset") = "s2-like", py::arg("layers") = 8, py::arg("width") = 8,
           py::arg("input_shape") = std::vector<std::size_t>{1, 1, 16}, py::arg("classes") = 4,
           py::arg("seed") = 0)
      .def_property_readonly("num_weights", &Supernet::num_weights)
      .def_property_readonly("num_alpha", &Supernet::num_alpha)
      .def_property_readonly("weights", [](const Supernet& n) {
        return to_array(std::vector<double>(n.weights().begin(), n.weights().end()));
      })
      .def("set_weights", [](Supernet& n, const Array& w) { n.set_weights(to_vec(w)); })
      .def("forward", [](const Supernet& n, const Array& x, const Array& alpha) {
        return to_array(n.forward(to_tensor(x), to_alpha(n, alpha)));
      })
      .def("evaluate",
           [](const Supernet& n, const Array& alpha, const Array& x, const std::vector<int>& y) {
             const auto r = n.evaluate(to_alpha(n, alpha), to_batch(x, y));
             return py::make_tuple(r.loss, to_array(r.grad_weights), to_array(r.grad_alpha));
           })
      .def("tse_unroll",
           [](const Supernet& n, const Array& alpha, const std::vector<std::pair<Array, std::vector<int>>>& bs,
              double lr) {
             const UnrollResult u = tse_unroll(n, to_alpha(n, alpha), window_of(n, bs), SGDConfig{lr});
             return py::make_tuple(u.tse, to_array(u.grad_alpha), u.step_losses);
           })
      .def("exact_tse_gradient",
           [](const Supernet& n, const Array& alpha, const std::vector<std::pair<Array, std::vector<int>>>& bs,
              double lr) {
             return to_array(exact_tse_gradient(n, to_alpha(n, alpha), window_of(n, bs), SGDConfig{lr}));
           })
      .def("exact_hypergradient",
           [](const Supernet& n, const Array& alpha, const std::vector<std::pair<Array, std::vector<int>>>& bs,
              double lr) {
             return to_array(exact_hypergradient(n, to_alpha(n, alpha), window_of(n, bs), SGDConfig{lr}));
           })
      .def("alpha_eigenvalue", [](const Supernet& n, const Array& alpha, const Array& x,
                                  const std::vector<int>& y, std::size_t max_iters, double tol, std::uint64_t seed) {
        const Batch b = to_batch(x, y);
        EigenOptions opts;
        opts.max_iters = max_iters;
        opts.tol = tol;
        opts.seed = seed;
        const EigenEstimate e = dominant_eigenvalue(alpha_gradient(n, n.weights(), b), to_vec(alpha), opts);
        return py::dict(py::arg("eigenvalue") = e.eigenvalue, py::arg("iterations") = e.iterations,
                        py::arg("converged") = e.converged, py::arg("residual") = e.residual);
      }, py::arg("alpha"), py::arg("inputs"), py::arg("labels"), py::arg("max_iters") = 50,
         py::arg("tol") = 1e-3, py::arg("seed") = 0);

  m.def(
      "run_search",
      [](const std::string& config_json) {
        const RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(config_json));
        std::ostringstream log;
        int rc;
        {
          py::gil_scoped_release release;
          rc = run_search(cfg, log);
        }
        return py::make_tuple(rc, log.str());
      },
      py::arg("config_json"));

  m.def("default_config", [] { return RunConfig{}.to_json().dump(); });
  m.def("run_verify", [](const std::string& suite) { return run_verify(suite).dump(); }, py::arg("suite") = "all");
  m.def("emit_plots", [](const std::string& dir) { emit_plots(dir); }, py::arg("dir"));
}
