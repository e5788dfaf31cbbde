#pragma once

#include <vector>

#include "json.hpp"
#include "rgm/environments.hpp"
#include "rgm/models.hpp"

namespace rgm::eval {

/// Classification fills accuracy and mean_ce, regression fills mae; the
/// other fields stay NaN.
struct Metrics {
  std::size_t n = 0;
  double accuracy;
  double mean_ce;
  double mae;

  Metrics();
  /// Selection score, larger is better: accuracy, or -MAE.
  double score(env::Task task) const;
  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
};

/// Predictions of f o phi without a tape.
Matrix predict_outputs(const model::PlayerSet& players, const Matrix& x);

Metrics evaluate(const model::PlayerSet& players, const env::Environment& env, env::Task task);
Metrics evaluate_outputs(const Matrix& outputs, const env::Environment& env, env::Task task);

/// Mean |d margin / d x_j| over the examples, one entry per input feature.
/// The margin is logit_1 - logit_0 for two classes and the prediction for
/// regression.
std::vector<double> input_sensitivity(model::PlayerSet& players, std::span<const env::Environment> envs);

}  // namespace rgm::eval
