#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "hallab/cli.hpp"
#include "hallab/cooccur.hpp"
#include "hallab/error.hpp"
#include "hallab/kernels.hpp"
#include "hallab/metrics.hpp"
#include "hallab/regressor.hpp"
#include "hallab/sphere.hpp"
#include "hallab/sweep.hpp"
#include "hallab/trace.hpp"

namespace py = pybind11;
using namespace hallab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

nlohmann::json to_cpp(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

kernels::KernelSpec kernel_arg(const py::handle& obj) { return kernels::from_json(to_cpp(obj)); }

std::vector<char> flags(const std::vector<bool>& v) { return {v.begin(), v.end()}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "hallab native core";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const FormatError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const NumericalError& e) {
      PyErr_SetString(PyExc_ArithmeticError, e.what());
    }
  });

  // sphere
  m.def(
      "make_dataset",
      [](int dim, double rho, std::size_t n, std::uint64_t seed, double epsilon) {
        const auto data = sphere::make_dataset(sphere::make_region_spec(dim, rho, epsilon), n, seed);
        std::vector<std::string> regions;
        VectorXd fstar(static_cast<Eigen::Index>(data.size()));
        for (std::size_t i = 0; i < data.size(); ++i) {
          regions.emplace_back(sphere::to_string(data.points[i].region));
          fstar[static_cast<Eigen::Index>(i)] = data.points[i].fstar;
        }
        py::dict out;
        out["x"] = data.inputs();
        out["y"] = data.labels();
        out["region"] = regions;
        out["fstar"] = fstar;
        return out;
      },
      py::arg("dim"), py::arg("rho"), py::arg("n"), py::arg("seed") = 0, py::arg("epsilon") = 0.02,
      "Toy sphere dataset as a dict with x (N x (dim+1)), y, region and fstar.");
  m.def("sample_uniform_sphere", py::overload_cast<int, std::size_t, std::uint64_t>(&sphere::sample_uniform_sphere),
        py::arg("dim"), py::arg("n"), py::arg("seed") = 0);
  m.def("cap_measure", &sphere::cap_measure, py::arg("dim"), py::arg("theta"));
  m.def("fill_distance", py::overload_cast<const MatrixXd&, const MatrixXd&>(&sphere::fill_distance),
        py::arg("samples"), py::arg("mesh"));
  m.def("separation_distance", py::overload_cast<const MatrixXd&>(&sphere::separation_distance), py::arg("samples"));

  // kernels
  m.def(
      "gram", [](const py::object& kernel, const MatrixXd& X) { return kernels::gram(kernel_arg(kernel), X); },
      py::arg("kernel"), py::arg("x"), "Gram matrix; kernel is a dict like {'variant': 'laplace', 'params': {...}}.");
  m.def(
      "cross_matrix",
      [](const py::object& kernel, const MatrixXd& Z, const MatrixXd& X) {
        return kernels::cross_matrix(kernel_arg(kernel), Z, X);
      },
      py::arg("kernel"), py::arg("z"), py::arg("x"));

  // regressor
  py::class_<regressor::FitModel>(m, "FitModel")
      .def_readonly("alpha", &regressor::FitModel::alpha)
      .def_readonly("support", &regressor::FitModel::support)
      .def_readonly("lam", &regressor::FitModel::lambda)
      .def_readonly("jitter_used", &regressor::FitModel::jitter_used)
      .def("predict", [](const regressor::FitModel& f, const MatrixXd& Z) { return regressor::predict_batch(f, Z); })
      .def("rkhs_norm_sq", &regressor::rkhs_norm_sq)
      .def("to_json", [](const regressor::FitModel& f) { return to_py(regressor::to_json(f)); });
  m.def(
      "fit_krr",
      [](const MatrixXd& X, const VectorXd& Y, const py::object& kernel, double lam) {
        return regressor::fit_krr(X, Y, kernel_arg(kernel), lam);
      },
      py::arg("x"), py::arg("y"), py::arg("kernel"), py::arg("lam") = 0.0);
  m.def(
      "kernel_gd_predict",
      [](const MatrixXd& X, const VectorXd& Y, const py::object& kernel, double t, double eta, const MatrixXd& Z) {
        return regressor::predict_batch(regressor::fit_kernel_gd(X, Y, kernel_arg(kernel), t, eta), Z);
      },
      py::arg("x"), py::arg("y"), py::arg("kernel"), py::arg("t"), py::arg("eta"), py::arg("z"),
      "Predictions of kernel gradient descent from zero after time t (inf for the interpolant).");

  // detection metrics
  m.def(
      "auroc",
      [](const std::vector<double>& s, const std::vector<bool>& pos) {
        const auto p = flags(pos);
        return detect::auroc(s, p);
      },
      py::arg("scores"), py::arg("is_positive"));
  m.def(
      "tpr_at_fpr",
      [](const std::vector<double>& s, const std::vector<bool>& pos, double cap) {
        const auto p = flags(pos);
        return detect::tpr_at_fpr(s, p, cap);
      },
      py::arg("scores"), py::arg("is_positive"), py::arg("fpr_cap") = 0.05);
  m.def(
      "confidence_scores", [](const VectorXd& p) { return detect::confidence_scores(p); }, py::arg("predictions"));

  // sweep
  m.def(
      "sweep",
      [](const py::object& config, int jobs) {
        auto c = detect::sweep_config_from_json(to_cpp(config));
        c.jobs = jobs;
        detect::SweepResult res;
        {
          py::gil_scoped_release release;
          res = detect::sweep_rho(c);
        }
        py::dict out;
        out["csv"] = detect::rows_to_csv(res.rows);
        out["summary"] = to_py(detect::summarize(res, c));
        return out;
      },
      py::arg("config"), py::arg("jobs") = 1, "Runs the rho sweep; returns {'csv': str, 'summary': dict}.");

  // traces
  m.def(
      "evaluate_traces",
      [](const std::string& jsonl, double test_fraction, std::uint64_t seed) {
        std::istringstream is(jsonl);
        trace::EvalConfig cfg;
        cfg.test_fraction = test_fraction;
        cfg.seed = seed;
        return to_py(trace::to_json(trace::evaluate_detectors(trace::read_traces(is), cfg)));
      },
      py::arg("jsonl"), py::arg("test_fraction") = 0.5, py::arg("seed") = 0);

  // co-occurrence
  py::class_<cooccur::ArticleIndex>(m, "ArticleIndex")
      .def(py::init([](const std::vector<std::pair<std::string, std::uint64_t>>& pairs) {
             return cooccur::build_index(pairs);
           }),
           py::arg("pairs"))
      .def("articles",
           [](const cooccur::ArticleIndex& idx, const std::string& e) {
             const auto a = idx.articles(e);
             return std::vector<std::uint64_t>(a.begin(), a.end());
           })
      .def("jaccard", [](const cooccur::ArticleIndex& idx, const std::string& a,
                         const std::string& b) { return cooccur::jaccard(idx, a, b); })
      .def("pair_overlap",
           [](const cooccur::ArticleIndex& idx, const std::vector<std::string>& q, const std::vector<std::string>& a) {
             return cooccur::pair_overlap(idx, q, a);
           })
      .def_property_readonly("num_entities", &cooccur::ArticleIndex::num_entities);
  m.def(
      "consensus",
      [](const std::vector<std::string>& gens) {
        const auto c = cooccur::consensus_and_consistency(gens);
        return py::make_tuple(c.answer, c.self_consistency);
      },
      py::arg("generations"));

  // subcommands
  m.def(
      "run",
      [](const std::string& sub, std::optional<std::filesystem::path> config, std::optional<std::uint64_t> seed,
         std::optional<int> jobs, std::optional<std::filesystem::path> out) {
        cli::GlobalOptions o{std::move(config), seed, jobs, std::move(out)};
        cli::RunOutcome r;
        {
          py::gil_scoped_release release;
          r = cli::run(sub, o);
        }
        py::dict d;
        d["out_dir"] = r.out_dir;
        d["files"] = r.files;
        d["failures"] = r.failures;
        return d;
      },
      py::arg("subcommand"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("jobs") = py::none(), py::arg("out") = py::none(),
      "Same as the hallab tool: runs a subcommand and returns the written files.");
}
