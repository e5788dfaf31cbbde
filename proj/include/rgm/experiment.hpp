#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rgm/environments.hpp"
#include "rgm/report.hpp"
#include "rgm/trainer.hpp"

namespace rgm::exp {

/// Which synthetic to draw and with what parameters. The seed inside
/// `params` is replaced by the cell's seed.
struct GeneratorConfig {
  std::string kind = "translation";  // translation | descriptor
  nlohmann::json params = nlohmann::json::object();
  /// Merge the training environments into E0 / E1 by size.
  bool cluster = false;

  env::EnvironmentSet make(std::uint64_t seed) const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// One compared method. Each seed trains once per (lambda, lambda_g) grid
/// point and keeps the one with the best validation score.
struct MethodSpec {
  std::string label;
  train::TrainConfig train;
  std::vector<double> lambda_grid;    // empty: train.lambda only
  std::vector<double> lambda_g_grid;  // empty: train.lambda_g only

  nlohmann::json to_json() const;
  static MethodSpec from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  GeneratorConfig generator;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds{0};
  bool refit = true;
  std::string output;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// Trains, selects, evaluates and refits one (method, seed) cell on `envs`.
/// Failures are recorded in the cell rather than thrown.
report::CellResult run_cell(const env::EnvironmentSet& envs, const MethodSpec& method, std::uint64_t seed,
                            bool refit);

/// Runs every (method, seed) cell, concurrently when OpenMP is available.
/// The result does not depend on the thread count.
report::RunReport run_experiment(const ExperimentConfig& config);

struct SweepResult {
  std::string parameter;
  std::vector<double> levels;
  std::vector<std::string> methods;
  /// ratio[level][method]: error of the method over error of ERM (1 - accuracy
  /// for classification, MAE for regression), seed means; below 1 is better.
  std::vector<std::vector<double>> ratio;
  std::vector<report::RunReport> reports;

  nlohmann::json to_json() const;
  std::string csv() const;
};

/// Sets generator parameter `parameter` to each level and runs the experiment.
/// The method list must contain one labelled "erm".
SweepResult sweep_shift_severity(const ExperimentConfig& base, const std::string& parameter,
                                 const std::vector<double>& levels);

}  // namespace rgm::exp
