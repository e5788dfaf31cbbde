#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgm/autodiff.hpp"
#include "rgm/environments.hpp"
#include "rgm/models.hpp"

namespace rgm::obj {

enum class Method { kErm, kIrm, kRgm, kSrgm, kCrossGrad };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ObjectiveConfig {
  Method method = Method::kErm;
  double lambda = 0.0;    // regret (or IRM penalty) weight
  double lambda_g = 0.0;  // descriptor loss weight
  double alpha = 0.0;     // perturbation step
  bool detach_phi_from_g = false;
  env::Task task = env::Task::kClassification;

  void validate() const;
};

/// Per-environment regret on one batch; losses are per-example means.
struct RegretTerm {
  int env_id = 0;
  double loss_heldout = 0.0;
  double loss_oracle = 0.0;
  double regret = 0.0;
  bool perturbed = false;
};

/// Sum of per-example losses of `out` against the batch targets.
ad::Var loss_from_output(ad::Tape& tape, ad::Var out, const env::Batch& batch, env::Task task);

/// L^e: summed loss of `predictor` on representation `z` of `batch`.
ad::Var env_loss(ad::Tape& tape, model::Predictor& predictor, ad::Var z, const env::Batch& batch,
                 env::Task task, ad::Binding binding = ad::Binding::kTrainable);

/// -sum_i log p(s_i | x_i, B), the softmax running over the distinct
/// descriptors of the batch scored by g(z_i) . enc(s_k).
ad::Var descriptor_ns_loss(ad::Tape& tape, model::Mlp& g, model::Mlp& encoder, ad::Var z,
                           std::span<const env::Descriptor> descriptors,
                           ad::Binding binding = ad::Binding::kTrainable);

/// delta = alpha * d(sum_i l_NS)/dz at fixed g and encoder. Returned as a
/// plain matrix: later passes treat it as a constant.
Matrix perturbation(model::PlayerSet& players, const Matrix& z, std::span<const env::Descriptor> descriptors,
                    double alpha);
Matrix perturb_representation(model::PlayerSet& players, const Matrix& z,
                              std::span<const env::Descriptor> descriptors, double alpha);

struct RegretNodes {
  ad::Var heldout;  // L^e(f_{-e} o z), f_{-e} frozen
  ad::Var oracle;   // L^e(oracle o z) with the representation behind a reversal layer
  RegretTerm term;
};

/// Builds both losses of R^e on the same batch. The held-out predictor is
/// frozen; the oracle sees `z` through grad_scale(weight) then grad_reverse, so
/// in a summed loss weight * heldout + oracle the representation descends
/// weight * R^e while the oracle descends its own loss. A zero weight cuts the
/// representation off entirely.
RegretNodes regret(ad::Tape& tape, model::Predictor& heldout, model::Predictor& oracle, ad::Var z,
                   const env::Batch& batch, env::Task task, double weight, bool perturbed);

/// Everything one forward pass produces.
struct Game {
  /// Backward on this node gives each player the gradient of its own loss:
  /// phi and f the method's objective, f_e / f~_e their environment losses,
  /// f_{-e} the complement loss, g and the encoder the descriptor loss.
  ad::Var game;
  /// The objective itself with ordinary gradients everywhere (built on
  /// request); its phi and f gradients coincide with those of `game`.
  std::optional<ad::Var> objective;
  double objective_value = 0.0;

  double main_loss = 0.0;             // L(f o phi) over the union, per example
  double perturbed_main_loss = 0.0;   // CrossGrad only
  double descriptor_loss = 0.0;       // sum_e L_g^e / |B_e|
  std::vector<double> aux_loss;       // L^{-e}(f_{-e}) on B_{-e}, per example
  std::vector<double> oracle_loss;    // L^e(f_e) on B_e, per example
  std::vector<double> perturbed_oracle_loss;
  std::vector<RegretTerm> regrets;
  std::vector<Matrix> deltas;  // per environment, SRGM / CrossGrad
};

struct GameOptions {
  bool with_objective = false;
  /// Use these perturbations instead of recomputing them (finite differences
  /// hold delta fixed, as the update rule does).
  const std::vector<Matrix>* deltas = nullptr;
};

Game build_game(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                const ObjectiveConfig& config, const GameOptions& options = {});

// Per-method entry points; each checks the method tag and the inputs it needs.
Game erm_objective(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                   const ObjectiveConfig& config, const GameOptions& options = {});
Game irm_penalty(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                 const ObjectiveConfig& config, const GameOptions& options = {});
Game rgm_objective(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                   const ObjectiveConfig& config, const GameOptions& options = {});
Game srgm_objective(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                    const ObjectiveConfig& config, const GameOptions& options = {});
Game crossgrad_augmented_loss(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                              const ObjectiveConfig& config, const GameOptions& options = {});

}  // namespace rgm::obj
