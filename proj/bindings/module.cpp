#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cpdyn/dynamics.hpp"
#include "cpdyn/experiments.hpp"
#include "cpdyn/io.hpp"
#include "cpdyn/probe.hpp"
#include "cpdyn/problems.hpp"
#include "cpdyn/rng.hpp"

namespace py = pybind11;
using namespace cpdyn;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int64_t> dims(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) dims[i] = arr.shape(i);
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(Shape(dims), std::move(data));
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().dims.begin(), t.shape().dims.end());
  py::array_t<double> arr(shape);
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

LossKind loss_from_args(const std::string& kind, double param) {
  if (kind == "squared") return make_squared(param);
  if (kind == "huber") return make_huber(param);
  throw std::invalid_argument("loss kind must be 'squared' or 'huber'");
}

Problem problem_from_variant(const std::variant<ObservationSet, MeasurementSet>& p) { return p; }

TrainConfig train_config(const std::string& lr_scheme, double eta, double stop_loss,
                         int64_t max_iters, int64_t record_every, int64_t top_k, bool gammas,
                         bool vector_sq_norms) {
  TrainConfig cfg;
  if (lr_scheme == "fixed") {
    cfg.lr = FixedLr{eta};
  } else if (lr_scheme == "adaptive") {
    AdaptiveLr a;
    if (eta > 0) a.eta_base = eta;
    cfg.lr = a;
  } else {
    throw std::invalid_argument("lr_scheme must be 'fixed' or 'adaptive'");
  }
  cfg.stop_loss = stop_loss;
  cfg.max_iters = max_iters;
  cfg.record.every = record_every;
  cfg.record.top_k = top_k;
  cfg.record.gammas = gammas;
  cfg.record.vector_sq_norms = vector_sq_norms;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_cpdyn, m) {
  m.doc() = "CP tensor factorization training and gradient-flow dynamics";

  py::class_<CPFactorization>(m, "CPFactorization")
      .def(py::init([](std::vector<int64_t> dims,
                       std::vector<std::vector<std::vector<double>>> weights) {
             CPFactorization f;
             f.shape = Shape(std::move(dims));
             f.weights = std::move(weights);
             f.validate();
             return f;
           }),
           py::arg("shape"), py::arg("weights"))
      .def_property_readonly("shape", [](const CPFactorization& f) { return f.shape.dims; })
      .def_property_readonly("weights", [](const CPFactorization& f) { return f.weights; })
      .def_property_readonly("rank", &CPFactorization::rank)
      .def_property_readonly("order", &CPFactorization::order);

  py::class_<Observation>(m, "Observation")
      .def(py::init<std::vector<int64_t>, double>(), py::arg("index"), py::arg("value"))
      .def_readonly("index", &Observation::index)
      .def_readonly("value", &Observation::value);

  py::class_<ObservationSet>(m, "ObservationSet")
      .def(py::init([](std::vector<int64_t> dims,
                       std::vector<std::pair<std::vector<int64_t>, double>> entries) {
             ObservationSet obs;
             obs.shape = Shape(std::move(dims));
             for (auto& [idx, y] : entries) obs.entries.push_back({std::move(idx), y});
             obs.validate();
             return obs;
           }),
           py::arg("shape"), py::arg("entries"))
      .def_property_readonly("shape", [](const ObservationSet& o) { return o.shape.dims; })
      .def_property_readonly("entries", [](const ObservationSet& o) {
        std::vector<std::pair<std::vector<int64_t>, double>> out;
        for (const auto& e : o.entries) out.emplace_back(e.index, e.value);
        return out;
      })
      .def("min_abs_value", &ObservationSet::min_abs_value);

  py::class_<MeasurementSet>(m, "MeasurementSet")
      .def(py::init([](std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>
                           tensors,
                       std::vector<double> values) {
             MeasurementSet meas;
             if (tensors.empty()) throw std::invalid_argument("no measurement tensors");
             for (auto& arr : tensors) meas.tensors.push_back(tensor_from_array(arr));
             meas.shape = meas.tensors.front().shape();
             meas.values = std::move(values);
             meas.validate();
             return meas;
           }),
           py::arg("tensors"), py::arg("values"))
      .def_property_readonly("values", [](const MeasurementSet& s) { return s.values; });

  py::class_<TrajectoryRecord>(m, "TrajectoryRecord")
      .def_readonly("iter", &TrajectoryRecord::iter)
      .def_readonly("time", &TrajectoryRecord::time)
      .def_readonly("eta", &TrajectoryRecord::eta)
      .def_readonly("loss", &TrajectoryRecord::loss)
      .def_readonly("unbalancedness", &TrajectoryRecord::unbalancedness)
      .def_readonly("component_norms", &TrajectoryRecord::component_norms)
      .def_readonly("gammas", &TrajectoryRecord::gammas)
      .def_readonly("vector_sq_norms", &TrajectoryRecord::vector_sq_norms)
      .def_readonly("recon_error", &TrajectoryRecord::recon_error);

  py::class_<DynamicsCheckReport>(m, "DynamicsCheckReport")
      .def_readonly("name", &DynamicsCheckReport::name)
      .def_readonly("max_violation", &DynamicsCheckReport::max_violation)
      .def_readonly("tolerance", &DynamicsCheckReport::tolerance)
      .def_readonly("pass_", &DynamicsCheckReport::pass)
      .def_readonly("residuals", &DynamicsCheckReport::residuals);

  // Tensor algebra.
  m.def("outer_product", [](const std::vector<std::vector<double>>& vectors) {
    return tensor_to_array(outer_product(vectors));
  });
  m.def("matricize",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& arr, int mode) {
          const Matrix mat = matricize(tensor_from_array(arr), mode);
          py::array_t<double> out({mat.rows, mat.cols});
          std::copy(mat.data.begin(), mat.data.end(), out.mutable_data());
          return out;
        });
  m.def("kron_except", [](const std::vector<std::vector<double>>& vectors, int skip) {
    return kron_except(vectors, skip);
  });
  m.def("inner",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
          return inner(tensor_from_array(a), tensor_from_array(b));
        });
  m.def("frobenius_norm",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
          return frobenius_norm(tensor_from_array(a));
        });

  // Factorization model.
  m.def("end_tensor", [](const CPFactorization& f) { return tensor_to_array(end_tensor(f)); });
  m.def("predict",
        [](const CPFactorization& f, const std::vector<int64_t>& index) { return predict(f, index); });
  m.def("component_norm", &component_norm);
  m.def("component_direction", &component_direction);
  m.def("unbalancedness_magnitude", &unbalancedness_magnitude);
  m.def("end_tensor_norm", &end_tensor_norm);
  m.def("sufficient_R",
        [](const std::vector<int64_t>& dims) { return sufficient_R(Shape(dims)); });
  m.def(
      "initialize",
      [](const std::string& kind, double stddev, uint64_t seed, const std::vector<int64_t>& dims,
         int64_t R) {
        InitSpec spec;
        spec.seed = seed;
        if (kind == "gaussian") spec.kind = GaussianInit{stddev};
        else if (kind == "balanced_gaussian") spec.kind = BalancedGaussianInit{stddev};
        else throw std::invalid_argument("init kind must be 'gaussian' or 'balanced_gaussian'");
        return initialize(spec, Shape(dims), R);
      },
      py::arg("kind"), py::arg("stddev"), py::arg("seed"), py::arg("shape"), py::arg("R"));
  m.def("scaled", &scaled, py::arg("base"), py::arg("alpha"));

  // Losses and gradients.
  m.def("scalar_loss", [](const std::string& kind, double param, double z) {
    return scalar_loss(loss_from_args(kind, param), z);
  });
  m.def("scalar_loss_derivative", [](const std::string& kind, double param, double z) {
    return scalar_loss_derivative(loss_from_args(kind, param), z);
  });
  m.def("completion_loss",
        [](const CPFactorization& f, const ObservationSet& obs, const std::string& kind,
           double param) { return completion_loss(f, obs, loss_from_args(kind, param)); });
  m.def("sensing_loss",
        [](const CPFactorization& f, const MeasurementSet& meas, const std::string& kind,
           double param) { return sensing_loss(f, meas, loss_from_args(kind, param)); });
  m.def("objective_gradient",
        [](const CPFactorization& f, const std::variant<ObservationSet, MeasurementSet>& p,
           const std::string& kind, double param) {
          return objective_gradient(f, problem_from_variant(p), loss_from_args(kind, param));
        });
  m.def("gamma",
        [](const CPFactorization& f, const std::variant<ObservationSet, MeasurementSet>& p,
           const std::string& kind, double param, int64_t r) {
          return gamma(f, problem_from_variant(p), loss_from_args(kind, param), r);
        });

  // Problem generation.
  m.def(
      "generate_ground_truth",
      [](const std::vector<int64_t>& dims, int64_t rank, uint64_t seed, bool normalize) {
        return tensor_to_array(generate_ground_truth({Shape(dims), rank, seed, normalize}));
      },
      py::arg("shape"), py::arg("rank"), py::arg("seed"), py::arg("normalize") = true);
  m.def("sample_observations",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& gt, int64_t count,
           uint64_t seed) { return sample_observations(tensor_from_array(gt), count, seed); });
  m.def("sample_measurements",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& gt, int64_t count,
           uint64_t seed) { return sample_measurements(tensor_from_array(gt), count, seed); });
  m.def("estimate_rip_delta",
        [](const MeasurementSet& meas, int rank, int64_t trials, uint64_t seed) {
          const RipEstimate est = estimate_rip_delta(meas, rank, trials, seed);
          return py::make_tuple(est.delta_lower_bound, est.min_sum, est.max_sum);
        });

  // Training.
  m.def(
      "train",
      [](const CPFactorization& f, const std::variant<ObservationSet, MeasurementSet>& p,
         const std::string& kind, double param, const std::string& lr_scheme, double eta,
         double stop_loss, int64_t max_iters, int64_t record_every, int64_t top_k, bool gammas,
         bool vector_sq_norms,
         std::optional<py::array_t<double, py::array::c_style | py::array::forcecast>> gt) {
        TrainConfig cfg = train_config(lr_scheme, eta, stop_loss, max_iters, record_every, top_k,
                                       gammas, vector_sq_norms);
        std::optional<Tensor> gt_tensor;
        if (gt) {
          gt_tensor = tensor_from_array(*gt);
          cfg.record.ground_truth = &*gt_tensor;
        }
        const TrainResult res =
            train(f, std::make_shared<const Problem>(problem_from_variant(p)),
                  loss_from_args(kind, param), cfg);
        py::dict out;
        out["factorization"] = res.factorization;
        out["records"] = res.records;
        out["stop"] = std::string(to_string(res.stop));
        out["iters"] = res.iters;
        out["time"] = res.time;
        out["final_loss"] = res.final_loss;
        return out;
      },
      py::arg("factorization"), py::arg("problem"), py::arg("loss"), py::arg("loss_param"),
      py::arg("lr_scheme") = "adaptive", py::arg("eta") = 0.0, py::arg("stop_loss") = 1e-8,
      py::arg("max_iters") = 1'000'000, py::arg("record_every") = 100, py::arg("top_k") = 0,
      py::arg("gammas") = false, py::arg("vector_sq_norms") = false,
      py::arg("ground_truth") = py::none());

  // Dynamics checks over recorded trajectories.
  m.def("check_balancedness_conservation",
        [](const std::vector<TrajectoryRecord>& records, double tolerance) {
          return check_balancedness_conservation(records, tolerance);
        });
  m.def("check_corollary1_ode",
        [](const std::vector<TrajectoryRecord>& records, double tolerance, double sigma_floor) {
          return check_corollary1_ode(records, tolerance, sigma_floor);
        },
        py::arg("records"), py::arg("tolerance"), py::arg("sigma_floor") = 1e-6);
  m.def("check_theorem1_bounds",
        [](const std::vector<TrajectoryRecord>& records, double slack_coeff) {
          return check_theorem1_bounds(records, slack_coeff);
        });

  m.def("derive_seed", [](uint64_t base, const std::string& purpose) {
    return derive_seed(base, purpose);
  });

  m.attr("__version__") = "0.1.0";
}
