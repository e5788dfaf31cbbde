#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rgm/evaluation.hpp"
#include "rgm/objectives.hpp"

// Report schema ("rgm-report v1"), written as JSON:
//   config      the experiment configuration that produced the report
//   cells       one entry per (method, seed): status, error, selected step,
//               chosen lambda / lambda_g, train / validation / test metrics,
//               refit regrets, input sensitivities and the flat metric map
//   aggregates  method -> metric -> {mean, std, n} over the ok cells
// The CSV companion has one row per method x seed x metric.
namespace rgm::report {

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | aborted | error
  std::string error;
  std::size_t selected_step = 0;
  double lambda = 0.0;
  double lambda_g = 0.0;
  eval::Metrics train;
  eval::Metrics validation;
  eval::Metrics test;
  std::vector<obj::RegretTerm> refit_regrets;
  bool refit_converged = true;
  std::vector<double> sensitivity;
  std::map<std::string, double> metrics;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single cell
  std::size_t n = 0;
};

struct RunReport {
  nlohmann::json config;
  std::vector<CellResult> cells;
  std::map<std::string, std::map<std::string, Aggregate>> aggregates;

  /// Rebuilds `aggregates` from the ok cells.
  void recompute_aggregates();
  /// Methods in first-appearance order.
  std::vector<std::string> methods() const;
  const Aggregate& aggregate(const std::string& method, const std::string& metric) const;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

/// Writes `path` (JSON) plus `<path>.csv` (rows) and `<path>.agg.csv`
/// (aggregates). Throws Error(kIo) naming the path on failure.
void write_report(const RunReport& report, const std::string& path);
RunReport read_report(const std::string& path);

/// One row per method x seed x metric: method,seed,metric,value.
std::string report_csv(const RunReport& report);
std::string aggregate_csv(const RunReport& report);

}  // namespace rgm::report
