#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "rgm/environments.hpp"
#include "rgm/matrix.hpp"
#include "rgm/trainer.hpp"

// Numeric checks of the regret propositions: an exact Bayes-predictor oracle
// on small discrete instances, and the IRM / RGM constraint gaps of a fixed
// linear representation.
namespace rgm::props {

/// Finite instance: p(e), p(x | e) and p(y | x, e) over n_x inputs and
/// n_labels labels.
struct DiscreteInstance {
  std::vector<double> p_env;
  Matrix p_x_given_env;                // n_env x n_x
  std::vector<Matrix> p_y_given_x_env;  // per env, n_x x n_labels

  std::size_t n_env() const { return p_env.size(); }
  std::size_t n_x() const { return p_x_given_env.cols(); }
  std::size_t n_labels() const { return p_y_given_x_env.front().cols(); }
  /// Throws unless every table is non-negative and sums to one.
  void validate() const;
};

/// Instance where the environment is a function of x (disjoint supports), so
/// p(y | x, e) = p(y | x, e(x)).
DiscreteInstance random_env_inferable_instance(std::size_t n_x, std::size_t n_env, std::size_t n_labels,
                                               std::mt19937_64& rng);

struct BayesResult {
  Matrix predictor;                // n_phi x n_labels: p(y | phi(x)) on the pooled distribution
  std::vector<double> risk;        // per environment, log loss of `predictor`
  std::vector<double> optimal_risk;  // per environment, best log loss of any function of phi
  std::vector<double> gap;         // risk - optimal_risk
  double bayes_risk = 0.0;         // pooled log loss of `predictor`
};

/// Exhaustive enumeration. `phi` maps each x to a value in [0, n_phi).
BayesResult brute_force_bayes(const DiscreteInstance& instance, std::span<const int> phi, std::size_t n_phi);

/// Per-environment log loss of an arbitrary table predictor on phi.
std::vector<double> env_risks(const DiscreteInstance& instance, std::span<const int> phi, const Matrix& predictor);

struct ConstraintConfig {
  double tolerance = 1e-3;
  std::size_t restarts = 8;
  double restart_scale = 1.0;  // std of the perturbation applied before each restart
  train::FitConfig fit{200, 1e-9};
  std::uint64_t seed = 0;
};

struct ConstraintCheck {
  std::vector<double> irm_gaps;  // per environment
  std::vector<double> rgm_gaps;
  double irm_gap = 0.0;
  double rgm_gap = 0.0;
  bool irm_feasible = false;
  bool rgm_feasible = false;
  bool converged = true;  // every inner fit reached its tolerance

  nlohmann::json to_json() const;
};

/// `projection` is input_dim x k; the representation is z = x * projection and
/// predictors are linear softmax heads on z.
ConstraintCheck check_constraints(const Matrix& projection, std::span<const env::Environment> envs,
                                  const ConstraintConfig& config = {});

}  // namespace rgm::props
