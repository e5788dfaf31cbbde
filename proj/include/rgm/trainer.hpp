#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rgm/environments.hpp"
#include "rgm/evaluation.hpp"
#include "rgm/models.hpp"
#include "rgm/objectives.hpp"

namespace rgm::train {

/// Full-batch fitting of a single predictor on fixed representations.
struct FitConfig {
  std::size_t max_steps = 200;  // Newton iterations (linear head) or descent steps (MLP head)
  double tolerance = 1e-8;      // on the gradient norm of the mean loss
};

struct FitResult {
  double loss = 0.0;  // mean loss at the end
  double grad_norm = 0.0;
  std::size_t steps = 0;
  bool converged = false;
};

/// Minimizes the mean loss of `predictor` on (z, batch) starting from its
/// current parameters. A linear head uses damped Newton steps, deeper heads
/// gradient descent with backtracking. Directions that leave the loss flat
/// keep their starting values.
FitResult fit_predictor(model::Predictor& predictor, const Matrix& z, const env::Batch& batch, env::Task task,
                        const FitConfig& config = {});

/// Mean loss of `predictor` on (z, batch) without a tape.
double mean_loss(const model::Predictor& predictor, const Matrix& z, const env::Batch& batch, env::Task task);

struct TrainConfig {
  obj::Method method = obj::Method::kErm;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 0.05;
  /// Linear annealing from lr to lr_end over the run when set.
  std::optional<double> lr_end;
  double lambda = 0.0;
  double lambda_g = 0.0;
  double alpha = 0.0;
  bool detach_phi_from_g = false;
  bool with_replacement = false;
  double clip_norm = 10.0;  // per player
  /// Validation checkpoints every this many steps (0: keep the final state).
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  model::ArchConfig arch;
  FitConfig refit;

  obj::ObjectiveConfig objective(env::Task task) const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepTrace {
  std::size_t step = 0;
  double lr = 0.0;
  double objective = 0.0;
  double main_loss = 0.0;
  double perturbed_main_loss = 0.0;
  double descriptor_loss = 0.0;
  std::vector<double> aux_loss;
  std::vector<double> oracle_loss;
  std::vector<double> perturbed_oracle_loss;
  std::vector<obj::RegretTerm> regrets;
  std::vector<std::pair<std::string, double>> grad_norms;  // before clipping

  nlohmann::json to_json() const;
};

/// Names of the players a method updates.
std::vector<std::string> active_players(obj::Method method, const model::PlayerSet& players);

/// Algorithm 1 forward pass (SRGM objective and all auxiliary losses).
obj::Game srgm_forward_pass(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                            const obj::ObjectiveConfig& config);

/// One simultaneous update of every active player from a single backward
/// pass. Throws Error(kNonFinite) without touching parameters if any loss or
/// gradient is non-finite.
StepTrace rgm_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                   env::Task task, double lr, std::size_t step = 0);
StepTrace srgm_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                    env::Task task, double lr, std::size_t step = 0);
/// Dispatches on config.method (CrossGrad uses the same single-pass update).
StepTrace train_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                     env::Task task, double lr, std::size_t step = 0);

double learning_rate(const TrainConfig& config, std::size_t step);

struct TrainResult {
  model::PlayerSet players;        // selected checkpoint
  model::PlayerSet final_players;  // state after the last step
  std::vector<StepTrace> trace;
  std::vector<std::pair<std::size_t, double>> validation;  // (steps taken, score)
  std::size_t selected_step = 0;
  double selected_score = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

using TraceSink = std::function<void(const StepTrace&)>;

TrainResult train(const env::EnvironmentSet& envs, const TrainConfig& config, const TraceSink& sink = {});

/// Architecture with the data-dependent widths filled in.
model::ArchConfig resolve_arch(const env::EnvironmentSet& envs, const TrainConfig& config);

struct RefitEnv {
  int env_id = 0;
  obj::RegretTerm regret;
  std::optional<obj::RegretTerm> perturbed_regret;
  FitResult oracle;
  FitResult heldout;
  std::optional<FitResult> perturbed_oracle;
  bool converged = false;  // caveat bit: false if any fit hit its cap
};

struct RefitReport {
  std::vector<RefitEnv> envs;
  bool converged = true;
};

/// With phi frozen, fits f_e on E_e, f_{-e} on the other environments and,
/// when descriptors are present, f~_e on the perturbed E_e. Regrets are then
/// evaluated on the full environments.
RefitReport refit_oracles(model::PlayerSet& players, const env::EnvironmentSet& envs, const FitConfig& config,
                          double alpha = 0.0);

}  // namespace rgm::train
