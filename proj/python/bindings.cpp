#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "dsbo/errors.hpp"
#include "dsbo/experiment.hpp"

namespace py = pybind11;
using namespace dsbo;

namespace {

py::dict record_to_dict(const IterationRecord& r) {
  py::dict d;
  d["t"] = r.t;
  d["upper_loss"] = r.upper_loss;
  d["hypergrad_sq"] = r.hypergrad_sq;
  d["consensus_x"] = r.consensus_x;
  d["consensus_y"] = r.consensus_y;
  d["consensus_z"] = r.consensus_z;
  d["comm_floats_cum"] = r.comm_floats_cum;
  d["comm_mb_cum"] = r.comm_mb_cum;
  d["test_accuracy"] = r.test_accuracy ? py::cast(*r.test_accuracy) : py::none();
  return d;
}

py::dict result_to_dict(const RunResult& r) {
  py::list records;
  for (const auto& rec : r.records) records.append(record_to_dict(rec));
  py::dict d;
  d["records"] = records;
  d["x"] = r.final_state.x;
  d["y"] = r.final_state.y;
  d["z"] = r.final_state.z;
  d["counted_floats"] = r.counted_floats;
  d["accounted_floats"] = r.accounted_floats;
  return d;
}

nlohmann::json to_json(const py::object& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(dsbo, m) {
  m.doc() = "Decentralized stochastic bilevel optimization simulator";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<ConstructionFailure>(m, "ConstructionFailure", PyExc_RuntimeError);

  py::class_<MixingMatrix>(m, "MixingMatrix")
      .def(py::init<std::string, Eigen::MatrixXd>(), py::arg("name"), py::arg("weights"))
      .def_property_readonly("name", &MixingMatrix::name)
      .def_property_readonly("size", &MixingMatrix::size)
      .def_property_readonly("weights", &MixingMatrix::weights)
      .def_property_readonly("lambda2", &MixingMatrix::lambda2)
      .def_property_readonly("spectral_gap", &MixingMatrix::spectral_gap)
      .def("degree", &MixingMatrix::degree)
      .def("neighbors", &MixingMatrix::neighbors)
      .def("mix", [](const MixingMatrix& e, const Eigen::MatrixXd& cols) { return e.mix(cols); })
      .def("validate", [](const MixingMatrix& e) {
        const auto d = validate(e);
        py::dict out;
        out["symmetry_defect"] = d.symmetry_defect;
        out["row_sum_defect"] = d.row_sum_defect;
        out["column_sum_defect"] = d.column_sum_defect;
        out["min_entry"] = d.min_entry;
        out["lambda2"] = d.lambda2;
        out["passed"] = d.passed;
        return out;
      });

  m.def("build_ring", &build_ring, py::arg("workers"));
  m.def("build_torus", &build_torus, py::arg("rows"), py::arg("cols"));
  m.def("build_random", &build_random, py::arg("workers"), py::arg("p"), py::arg("seed"));
  m.def("build_complete", &build_complete, py::arg("workers"));
  m.def("spectral_lambda", py::overload_cast<const Eigen::MatrixXd&>(&spectral_lambda), py::arg("weights"));
  m.def("account_communication", &account_communication, py::arg("mixing"), py::arg("dim_x"), py::arg("dim_y"));

  m.def(
      "storm_update",
      [](const Eigen::VectorXd& prev, const Eigen::VectorXd& g_new, const Eigen::VectorXd& g_old, double a) {
        return storm_update(prev, g_new, g_old, a);
      },
      py::arg("prev"), py::arg("grad_new"), py::arg("grad_old"), py::arg("a"));

  py::class_<BilevelOracle>(m, "BilevelOracle")
      .def_property_readonly("workers", &BilevelOracle::workers)
      .def_property_readonly("dim_x", &BilevelOracle::dim_x)
      .def_property_readonly("dim_y", &BilevelOracle::dim_y)
      .def_property_readonly("radius", [](const BilevelOracle& o) { return o.constants().radius(); });

  py::class_<QuadraticBilevelProblem, BilevelOracle>(m, "QuadraticProblem")
      .def("exact",
           [](const QuadraticBilevelProblem& p, const Eigen::VectorXd& x) {
             const auto e = p.exact(x);
             py::dict d;
             d["y_star"] = e.y_star;
             d["z_star"] = e.z_star;
             d["hypergradient"] = e.hypergradient;
             return d;
           })
      .def("objective", [](const QuadraticBilevelProblem& p, const Eigen::VectorXd& x) { return p.objective(x); });

  m.def(
      "generate_quadratic",
      [](int workers, int dim_x, int dim_y, double mu, double ell_gy, double noise_sigma, bool heterogeneous,
         std::uint64_t seed) {
        QuadraticOptions o;
        o.workers = workers;
        o.dim_x = dim_x;
        o.dim_y = dim_y;
        o.mu = mu;
        o.ell_gy = ell_gy;
        o.noise_sigma = noise_sigma;
        o.heterogeneous = heterogeneous;
        o.seed = seed;
        return QuadraticBilevelProblem(generate_quadratic(o));
      },
      py::arg("workers") = 8, py::arg("dim_x") = 10, py::arg("dim_y") = 10, py::arg("mu") = 1.0,
      py::arg("ell_gy") = 4.0, py::arg("noise_sigma") = 0.0, py::arg("heterogeneous") = true, py::arg("seed") = 0);

  py::enum_<UpdateMode>(m, "UpdateMode")
      .value("simultaneous", UpdateMode::kSimultaneous)
      .value("alternating", UpdateMode::kAlternating);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("mode", &RunConfig::mode)
      .def_readwrite("eta", &RunConfig::eta)
      .def_readwrite("alpha1", &RunConfig::alpha1)
      .def_readwrite("alpha2", &RunConfig::alpha2)
      .def_readwrite("alpha3", &RunConfig::alpha3)
      .def_readwrite("beta1", &RunConfig::beta1)
      .def_readwrite("beta2", &RunConfig::beta2)
      .def_readwrite("beta3", &RunConfig::beta3)
      .def_readwrite("iterations", &RunConfig::iterations)
      .def_readwrite("batch0", &RunConfig::batch0)
      .def_readwrite("batch", &RunConfig::batch)
      .def_readwrite("radius", &RunConfig::radius)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("threads", &RunConfig::threads)
      .def_readwrite("eval_every", &RunConfig::eval_every)
      .def("validate", &RunConfig::validate)
      .def("make_plain_sgd", &RunConfig::make_plain_sgd)
      .def_static("scaled_defaults", &RunConfig::scaled_defaults, py::arg("workers"), py::arg("lambda2"),
                  py::arg("epsilon"));

  m.def(
      "run",
      [](const RunConfig& config, const BilevelOracle& oracle, const MixingMatrix& mixing) {
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run(config, oracle, mixing);
        }
        return result_to_dict(r);
      },
      py::arg("config"), py::arg("oracle"), py::arg("mixing"));

  m.def("default_spec", [] { return from_json(spec_to_json(ExperimentSpec{})); });
  m.def(
      "run_experiment",
      [](const py::object& spec) {
        const ExperimentSpec s = spec_from_json(to_json(spec));
        ExperimentOutcome out;
        {
          py::gil_scoped_release release;
          out = run_experiment(s);
        }
        py::dict d = result_to_dict(out.result);
        d["lambda2"] = out.lambda;
        d["topology"] = out.topology_name;
        d["problem"] = out.problem_name;
        return d;
      },
      py::arg("spec"), "Runs an experiment from a (partial) spec dict; missing keys keep their defaults.");
}
