#include "rgm/evaluation.hpp"

#include <cmath>
#include <limits>

#include "rgm/error.hpp"

namespace rgm::eval {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double from_number_or_null(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }
}  // namespace

Metrics::Metrics() : accuracy(kNaN), mean_ce(kNaN), mae(kNaN) {}

double Metrics::score(env::Task task) const { return task == env::Task::kClassification ? accuracy : -mae; }

nlohmann::json Metrics::to_json() const {
  return {{"n", n}, {"accuracy", number_or_null(accuracy)}, {"mean_ce", number_or_null(mean_ce)},
          {"mae", number_or_null(mae)}};
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m;
  m.n = j.at("n").get<std::size_t>();
  m.accuracy = from_number_or_null(j.at("accuracy"));
  m.mean_ce = from_number_or_null(j.at("mean_ce"));
  m.mae = from_number_or_null(j.at("mae"));
  return m;
}

Matrix predict_outputs(const model::PlayerSet& players, const Matrix& x) {
  return players.f.net.forward(players.phi.forward(x));
}

Metrics evaluate_outputs(const Matrix& out, const env::Environment& env, env::Task task) {
  require(env.size() > 0, ErrorCode::kInvalidArgument, "evaluate: empty environment " + std::to_string(env.id));
  require(out.rows() == env.size(), ErrorCode::kShapeMismatch, "evaluate: output rows differ from examples");
  Metrics m;
  m.n = env.size();
  const double inv = 1.0 / static_cast<double>(env.size());
  if (task == env::Task::kClassification) {
    double correct = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const auto row = out.row(i);
      std::size_t best = 0;
      for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = k;  // ties stay with the lower index
      const int y = env.examples[i].label();
      correct += static_cast<int>(best) == y ? 1.0 : 0.0;
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double s = 0.0;
      for (double v : row) s += std::exp(v - mx);
      ce += mx + std::log(s) - row[static_cast<std::size_t>(y)];
    }
    m.accuracy = correct * inv;
    m.mean_ce = ce * inv;
  } else {
    double abs_err = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) abs_err += std::abs(out(i, 0) - env.examples[i].y);
    m.mae = abs_err * inv;
  }
  return m;
}

Metrics evaluate(const model::PlayerSet& players, const env::Environment& env, env::Task task) {
  require(env.size() > 0, ErrorCode::kInvalidArgument, "evaluate: empty environment " + std::to_string(env.id));
  const env::Batch b = env::make_batch(env);
  return evaluate_outputs(predict_outputs(players, b.x), env, task);
}

std::vector<double> input_sensitivity(model::PlayerSet& players, std::span<const env::Environment> envs) {
  std::vector<env::Batch> parts;
  for (const auto& e : envs) parts.push_back(env::make_batch(e));
  const env::Batch all = env::concat_batches(parts);
  const std::size_t outputs = players.f.net.spec().out();
  require(outputs <= 2, ErrorCode::kInvalidArgument, "input_sensitivity needs a binary or scalar output");

  ad::Tape tape;
  const ad::Var x = tape.variable(all.x);
  const ad::Var z = players.phi.forward(tape, x, ad::Binding::kFrozen);
  const ad::Var out = players.f.net.forward(tape, z, ad::Binding::kFrozen);
  Matrix direction(outputs, 1, 1.0);
  if (outputs == 2) direction(0, 0) = -1.0;
  // Margins of different examples are independent, so the gradient of their
  // sum holds each example's own input gradient in its row.
  const ad::Var margins = tape.affine(out, tape.constant(direction), tape.constant(Matrix(1, 1)));
  tape.backward(tape.sum(margins));
  const Matrix& g = tape.grad(x);
  std::vector<double> sens(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) sens[j] += std::abs(g(i, j));
  for (double& v : sens) v /= static_cast<double>(g.rows());
  return sens;
}

}  // namespace rgm::eval
