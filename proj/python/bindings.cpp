#include "scrmed/effects.hpp"
#include "scrmed/em.hpp"
#include "scrmed/errors.hpp"
#include "scrmed/inference.hpp"
#include "scrmed/io.hpp"
#include "scrmed/likelihood.hpp"
#include "scrmed/simulate.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace scrmed;

namespace {

Dataset from_arrays(const Eigen::VectorXi& a, const Vector& z, const Eigen::VectorXi& delta_m, const Vector& y,
                    const Eigen::VectorXi& delta_t, const Matrix& x, std::vector<std::string> ids,
                    std::vector<std::string> names) {
  const auto n = a.size();
  if (z.size() != n || delta_m.size() != n || y.size() != n || delta_t.size() != n || x.rows() != n)
    throw InvalidInput("all columns must have the same length");
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != n) throw InvalidInput("ids has the wrong length");
  if (names.empty())
    for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  std::vector<SubjectRecord> rs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& r = rs[static_cast<std::size_t>(i)];
    r.id = ids.empty() ? std::to_string(i + 1) : ids[static_cast<std::size_t>(i)];
    r.a = a[i];
    r.z = z[i];
    r.delta_m = delta_m[i];
    r.y = y[i];
    r.delta_t = delta_t[i];
    for (Eigen::Index j = 0; j < x.cols(); ++j) r.x.push_back(x(i, j));
  }
  return Dataset(rs, names);
}

py::dict parameters(const FittedModel& f, const Dataset& d) {
  py::dict out;
  const auto names = ParameterSet::names(d.covariate_names());
  const Vector flat = f.params.flat();
  for (std::size_t k = 0; k < names.size(); ++k) out[py::str(names[k])] = flat[static_cast<Eigen::Index>(k)];
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Principal-stratification mediation for semi-competing risks";

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&from_arrays), py::arg("a"), py::arg("z"), py::arg("delta_m"), py::arg("y"), py::arg("delta_t"),
           py::arg("x"), py::arg("ids") = std::vector<std::string>{}, py::arg("covariate_names") = std::vector<std::string>{})
      .def_static("read_csv", py::overload_cast<const fs::path&>(&io::read_dataset), py::arg("path"))
      .def("write_csv", [](const Dataset& d, const fs::path& p) { io::write_dataset(p, d); }, py::arg("path"))
      .def("__len__", &Dataset::size)
      .def_property_readonly("ids", &Dataset::ids)
      .def_property_readonly("covariate_names", &Dataset::covariate_names)
      .def_property_readonly("a", &Dataset::a)
      .def_property_readonly("z", &Dataset::z)
      .def_property_readonly("delta_m", &Dataset::delta_m)
      .def_property_readonly("y", &Dataset::y)
      .def_property_readonly("delta_t", &Dataset::delta_t)
      .def_property_readonly("x", &Dataset::x);

  py::class_<FittedModel>(m, "FittedModel")
      .def_readonly("converged", &FittedModel::converged)
      .def_readonly("n_iters", &FittedModel::n_iters)
      .def_readonly("loglik_trace", &FittedModel::loglik_trace)
      .def_readonly("posteriors", &FittedModel::posteriors)
      .def_readonly("warnings", &FittedModel::warnings)
      .def_property_readonly("flat_parameters", [](const FittedModel& f) { return f.params.flat(); })
      .def("parameters", &parameters, py::arg("data"))
      .def("support", [](const FittedModel& f, const std::string& effect) {
        return effect_support(parse_effect_name(effect), f);
      });

  m.def(
      "simulate",
      [](std::size_t n, std::uint64_t seed, std::optional<double> censor_max) {
        auto spec = GenerativeSpec::reference_design(n, seed);
        if (censor_max) spec.censor_max = *censor_max;
        auto sim = generate(spec);
        return py::make_tuple(sim.data, sim.truth.stratum);
      },
      py::arg("n"), py::arg("seed"), py::arg("censor_max") = py::none(),
      "Draws from the reference simulation design; returns (dataset, hidden strata 1..3).");

  m.def(
      "fit",
      [](const Dataset& d, double tol, std::size_t max_iters, bool accelerate, std::size_t starts, std::uint64_t seed) {
        EmConfig c;
        c.tol = tol;
        c.max_outer_iters = max_iters;
        c.accelerate = accelerate;
        c.n_starts = starts;
        c.seed = seed;
        py::gil_scoped_release release;
        return fit(d, c);
      },
      py::arg("data"), py::arg("tol") = 1e-6, py::arg("max_iters") = 5000, py::arg("accelerate") = false,
      py::arg("starts") = 1, py::arg("seed") = 0);

  m.def(
      "effect",
      [](const std::string& name, const FittedModel& f, const std::vector<double>& grid, std::optional<Vector> x,
         const Dataset* data) {
        const EffectName e = parse_effect_name(name);
        const auto c = effect_curve(e, f, grid, is_marginal(e) ? std::nullopt : x, data);
        return py::make_tuple(c.grid, c.values);
      },
      py::arg("name"), py::arg("fit"), py::arg("grid"), py::arg("x") = py::none(), py::arg("data") = nullptr,
      "Effect curve; returns (grid, values) with points beyond the support dropped.");

  m.def(
      "observed_loglik",
      [](const Dataset& d, const FittedModel& f) { return observed_loglik(d, f.params, f.hazards).total; },
      py::arg("data"), py::arg("fit"));

  m.def(
      "label_swap",
      [](const Dataset& d) {
        const auto s = label_swap_sensitivity(d);
        py::dict out;
        out["original_avg_w2"] = s.original_avg_w2;
        out["swapped_avg_w2"] = s.swapped_avg_w2;
        out["original_converged"] = s.original_converged;
        out["swapped_converged"] = s.swapped_converged;
        out["swapped_error"] = s.swapped_error;
        return out;
      },
      py::arg("data"));
}
