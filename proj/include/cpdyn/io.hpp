#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cpdyn/dynamics.hpp"
#include "cpdyn/losses.hpp"
#include "cpdyn/optimizer.hpp"
#include "cpdyn/rank_one.hpp"

namespace cpdyn {

// 17 significant digits: enough for an exact decimal round-trip of any
// double, and byte-stable across runs.
std::string format_double17(double v);

// Minimal CSV emitter with fixed formatting (LF rows, %.17g doubles), so
// identical runs produce byte-identical files.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void header(std::span<const std::string> names);
  void field(const std::string& s);
  void field(double v);
  void field(int64_t v);
  void end_row();

 private:
  std::ofstream out_;
  bool row_open_ = false;
};

// Factorization checkpoint: JSON with shape, R, and nested weight arrays,
// doubles written with 17 significant digits.
void save_checkpoint(const std::filesystem::path& path, const CPFactorization& f);
CPFactorization load_checkpoint(const std::filesystem::path& path);

nlohmann::json observation_set_to_json(const ObservationSet& obs);
ObservationSet observation_set_from_json(const nlohmann::json& j);
nlohmann::json measurement_set_to_json(const MeasurementSet& meas);
MeasurementSet measurement_set_from_json(const nlohmann::json& j);

nlohmann::json dynamics_report_to_json(const DynamicsCheckReport& report);
nlohmann::json assumption_report_to_json(const AssumptionReport& report);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

void write_trajectory_csv(const std::filesystem::path& path,
                          std::span<const TrajectoryRecord> records);
void write_trace_csv(const std::filesystem::path& path, const RankOneTrace& trace);

const char* to_string(StopReason reason);

}  // namespace cpdyn
