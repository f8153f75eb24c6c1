#include "cpdyn/io.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cpdyn {

std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open " + path.string());
}

void CsvWriter::header(std::span<const std::string> names) {
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) out_ << ',';
    out_ << names[i];
  }
  out_ << '\n';
}

void CsvWriter::field(const std::string& s) {
  if (row_open_) out_ << ',';
  out_ << s;
  row_open_ = true;
}

void CsvWriter::field(double v) { field(format_double17(v)); }

void CsvWriter::field(int64_t v) { field(std::to_string(v)); }

void CsvWriter::end_row() {
  out_ << '\n';
  row_open_ = false;
}

void save_checkpoint(const std::filesystem::path& path, const CPFactorization& f) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "{\n  \"shape\": [";
  for (size_t n = 0; n < f.shape.dims.size(); ++n) {
    if (n) out << ", ";
    out << f.shape.dims[n];
  }
  out << "],\n  \"R\": " << f.rank() << ",\n  \"weights\": [\n";
  for (int64_t r = 0; r < f.rank(); ++r) {
    out << "    [";
    for (int n = 0; n < f.order(); ++n) {
      if (n) out << ", ";
      out << '[';
      const auto& v = f.weights[r][n];
      for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ", ";
        out << format_double17(v[i]);
      }
      out << ']';
    }
    out << (r + 1 < f.rank() ? "],\n" : "]\n");
  }
  out << "  ]\n}\n";
}

CPFactorization load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  CPFactorization f;
  f.shape = Shape(j.at("shape").get<std::vector<int64_t>>());
  const int64_t R = j.at("R").get<int64_t>();
  f.weights = j.at("weights").get<std::vector<std::vector<std::vector<double>>>>();
  if (static_cast<int64_t>(f.weights.size()) != R) {
    throw std::runtime_error(path.string() + ": R does not match weights");
  }
  f.validate();
  return f;
}

nlohmann::json observation_set_to_json(const ObservationSet& obs) {
  nlohmann::json j;
  j["shape"] = obs.shape.dims;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : obs.entries) {
    entries.push_back({{"index", e.index}, {"value", e.value}});
  }
  j["entries"] = std::move(entries);
  return j;
}

ObservationSet observation_set_from_json(const nlohmann::json& j) {
  ObservationSet obs;
  obs.shape = Shape(j.at("shape").get<std::vector<int64_t>>());
  for (const auto& e : j.at("entries")) {
    obs.entries.push_back({e.at("index").get<std::vector<int64_t>>(), e.at("value").get<double>()});
  }
  obs.validate();
  return obs;
}

nlohmann::json measurement_set_to_json(const MeasurementSet& meas) {
  nlohmann::json j;
  j["shape"] = meas.shape.dims;
  j["values"] = meas.values;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : meas.tensors) {
    tensors.push_back(std::vector<double>(t.data().begin(), t.data().end()));
  }
  j["tensors"] = std::move(tensors);
  return j;
}

MeasurementSet measurement_set_from_json(const nlohmann::json& j) {
  MeasurementSet meas;
  meas.shape = Shape(j.at("shape").get<std::vector<int64_t>>());
  meas.values = j.at("values").get<std::vector<double>>();
  for (const auto& t : j.at("tensors")) {
    meas.tensors.emplace_back(meas.shape, t.get<std::vector<double>>());
  }
  meas.validate();
  return meas;
}

nlohmann::json dynamics_report_to_json(const DynamicsCheckReport& report) {
  nlohmann::json j;
  j["name"] = report.name;
  j["max_violation"] = report.max_violation;
  j["tolerance"] = report.tolerance;
  j["pass"] = report.pass;
  if (!report.detail.empty()) j["detail"] = report.detail;
  return j;
}

nlohmann::json assumption_report_to_json(const AssumptionReport& report) {
  nlohmann::json j;
  j["delta_h"] = report.delta_h;
  j["min_abs_y"] = report.min_abs_y;
  j["transition_ok"] = report.transition_ok;
  j["unbalancedness"] = report.unbalancedness;
  j["balanced_ok"] = report.balanced_ok;
  j["loss_grad_norm_at_origin"] = report.loss_grad_norm_at_origin;
  j["gamma_hat"] = report.gamma_hat;
  if (report.leading) j["leading"] = *report.leading;
  j["leading_ok"] = report.leading_ok;
  j["all_ok"] = report.all_ok();
  if (!report.failure.empty()) j["failure"] = report.failure;
  return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << '\n';
}

void write_trajectory_csv(const std::filesystem::path& path,
                          std::span<const TrajectoryRecord> records) {
  CsvWriter csv(path);
  std::vector<std::string> names = {"iter", "time", "eta", "loss", "unbalancedness",
                                    "recon_error"};
  const size_t n_comp = records.empty() ? 0 : records.front().component_norms.size();
  const size_t n_gamma = records.empty() ? 0 : records.front().gammas.size();
  for (size_t i = 0; i < n_comp; ++i) names.push_back("comp_norm_" + std::to_string(i));
  for (size_t i = 0; i < n_gamma; ++i) names.push_back("gamma_" + std::to_string(i));
  csv.header(names);
  for (const auto& rec : records) {
    csv.field(rec.iter);
    csv.field(rec.time);
    csv.field(rec.eta);
    csv.field(rec.loss);
    csv.field(rec.unbalancedness);
    if (std::isnan(rec.recon_error)) {
      csv.field(std::string{});
    } else {
      csv.field(rec.recon_error);
    }
    for (double v : rec.component_norms) csv.field(v);
    for (double v : rec.gammas) csv.field(v);
    csv.end_row();
  }
}

void write_trace_csv(const std::filesystem::path& path, const RankOneTrace& trace) {
  CsvWriter csv(path);
  const std::vector<std::string> names = {"step", "time", "distance", "main_norm",
                                          "companion_norm"};
  csv.header(names);
  for (const auto& row : trace.rows) {
    csv.field(row.step);
    csv.field(row.time);
    csv.field(row.distance);
    csv.field(row.main_norm);
    csv.field(row.companion_norm);
    csv.end_row();
  }
}

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::loss_threshold: return "loss_threshold";
    case StopReason::max_iters: return "max_iters";
    case StopReason::non_finite: return "non_finite";
  }
  return "?";
}

}  // namespace cpdyn
