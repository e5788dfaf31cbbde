#include "rgm/objectives.hpp"

#include <cmath>
#include <map>

#include "rgm/error.hpp"

namespace rgm::obj {

using ad::Binding;
using ad::Tape;
using ad::Var;

std::string to_string(Method m) {
  switch (m) {
    case Method::kErm: return "erm";
    case Method::kIrm: return "irm";
    case Method::kRgm: return "rgm";
    case Method::kSrgm: return "srgm";
    case Method::kCrossGrad: return "crossgrad";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kErm, Method::kIrm, Method::kRgm, Method::kSrgm, Method::kCrossGrad})
    if (to_string(m) == s) return m;
  fail(ErrorCode::kInvalidArgument, "unknown method '" + s + "'");
}

void ObjectiveConfig::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  require(ok(lambda), ErrorCode::kInvalidArgument, "lambda must be finite and >= 0");
  require(ok(lambda_g), ErrorCode::kInvalidArgument, "lambda_g must be finite and >= 0");
  require(ok(alpha), ErrorCode::kInvalidArgument, "alpha must be finite and >= 0");
}

Var loss_from_output(Tape& tape, Var out, const env::Batch& batch, env::Task task) {
  require(batch.size() > 0, ErrorCode::kInvalidArgument, "loss on an empty batch");
  if (task == env::Task::kClassification) return tape.softmax_cross_entropy(out, batch.labels);
  return tape.squared_error(out, tape.constant(Matrix(batch.size(), 1, batch.targets)));
}

Var env_loss(Tape& tape, model::Predictor& predictor, Var z, const env::Batch& batch, env::Task task,
             Binding binding) {
  require(batch.size() > 0, ErrorCode::kInvalidArgument,
          "env_loss: empty batch for environment " + std::to_string(batch.env_id));
  return loss_from_output(tape, model::predict(tape, predictor, z, binding), batch, task);
}

Var descriptor_ns_loss(Tape& tape, model::Mlp& g, model::Mlp& encoder, Var z,
                       std::span<const env::Descriptor> descriptors, Binding binding) {
  const std::size_t n = tape.value(z).rows();
  require(descriptors.size() == n, ErrorCode::kShapeMismatch,
          "descriptor_ns_loss: " + std::to_string(descriptors.size()) + " descriptors for " + std::to_string(n) +
              " rows");
  require(n >= 2, ErrorCode::kInvalidArgument, "descriptor_ns_loss: a batch of size 1 has no negatives");
  std::map<std::uint16_t, int> slot;
  for (const auto& s : descriptors) slot.emplace(s.code, 0);
  require(slot.size() >= 2, ErrorCode::kInvalidArgument,
          "descriptor_ns_loss: all descriptors in the batch are identical");
  std::vector<env::Descriptor> distinct;
  for (auto& [code, index] : slot) {
    index = static_cast<int>(distinct.size());
    distinct.push_back(env::Descriptor{code});
  }
  std::vector<int> targets;
  targets.reserve(n);
  for (const auto& s : descriptors) targets.push_back(slot.at(s.code));
  const Var keys = encoder.forward(tape, tape.constant(model::descriptor_matrix(distinct)), binding);
  const Var queries = g.forward(tape, z, binding);
  return tape.batch_dot_softmax(queries, keys, targets);
}

Matrix perturbation(model::PlayerSet& players, const Matrix& z, std::span<const env::Descriptor> descriptors,
                    double alpha) {
  require(std::isfinite(alpha) && alpha >= 0.0, ErrorCode::kInvalidArgument, "alpha must be finite and >= 0");
  Tape tape;
  const Var zv = tape.variable(z);
  const Var loss = descriptor_ns_loss(tape, players.g, players.encoder, zv, descriptors, Binding::kFrozen);
  tape.backward(loss);
  Matrix delta = tape.grad(zv);
  for (double& v : delta.values()) v *= alpha;
  return delta;
}

Matrix perturb_representation(model::PlayerSet& players, const Matrix& z,
                              std::span<const env::Descriptor> descriptors, double alpha) {
  Matrix out = perturbation(players, z, descriptors, alpha);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += z[i];
  return out;
}

RegretNodes regret(Tape& tape, model::Predictor& heldout, model::Predictor& oracle, Var z, const env::Batch& batch,
                   env::Task task, double weight, bool perturbed) {
  const model::Role want = perturbed ? model::Role::kPerturbedOracle : model::Role::kOracle;
  require(heldout.role == model::Role::kHeldOut, ErrorCode::kInvalidArgument,
          "regret: " + heldout.net.name() + " is not a held-out predictor");
  require(oracle.role == want, ErrorCode::kInvalidArgument,
          "regret: " + oracle.net.name() + " passed as " + model::to_string(want));
  require(heldout.env == oracle.env, ErrorCode::kInvalidArgument,
          "regret: " + heldout.net.name() + " and " + oracle.net.name() + " belong to different environments");

  const bool cut = weight == 0.0;
  RegretNodes r;
  r.heldout = env_loss(tape, heldout, cut ? tape.detach(z) : z, batch, task, Binding::kFrozen);
  const Var zo = cut ? tape.detach(z) : tape.grad_reverse(tape.grad_scale(z, weight));
  r.oracle = env_loss(tape, oracle, zo, batch, task);
  const double inv = 1.0 / static_cast<double>(batch.size());
  r.term.env_id = heldout.env;
  r.term.loss_heldout = tape.value(r.heldout).item() * inv;
  r.term.loss_oracle = tape.value(r.oracle).item() * inv;
  r.term.regret = r.term.loss_heldout - r.term.loss_oracle;
  r.term.perturbed = perturbed;
  return r;
}

namespace {

Var add_all(Tape& tape, const std::vector<Var>& terms) {
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
  return total;
}

}  // namespace

Game build_game(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                const ObjectiveConfig& config, const GameOptions& options) {
  config.validate();
  const Method method = config.method;
  const std::size_t n = players.n_envs();
  require(batches.per_env.size() == n, ErrorCode::kInvalidArgument,
          "missing batch: " + std::to_string(batches.per_env.size()) + " batches for " + std::to_string(n) +
              " environments");
  const bool regret_method = method == Method::kRgm || method == Method::kSrgm;
  const bool uses_descriptors = method == Method::kSrgm || method == Method::kCrossGrad;
  if (regret_method) {
    require(n >= 2, ErrorCode::kInvalidArgument, to_string(method) + " needs at least two environments");
    require(batches.complement.size() == n, ErrorCode::kInvalidArgument, "missing complement batches");
  }
  if (uses_descriptors) {
    for (const auto& b : batches.per_env)
      require(b.has_descriptors(), ErrorCode::kInvalidArgument,
              to_string(method) + " needs descriptors on every example; use rgm for data without them");
  }
  if (options.deltas)
    require(options.deltas->size() == n, ErrorCode::kInvalidArgument, "one perturbation per environment expected");

  const double lam = config.lambda;
  const double lam_g = config.lambda_g;
  const env::Task task = config.task;
  Game out;

  std::vector<Var> z(n);
  std::size_t total = 0;
  for (std::size_t e = 0; e < n; ++e) {
    require(batches.per_env[e].size() > 0, ErrorCode::kInvalidArgument,
            "empty batch for environment " + std::to_string(e));
    z[e] = model::extract_features(tape, players.phi, batches.per_env[e].x);
    total += batches.per_env[e].size();
  }
  const env::Batch pooled = concat_batches(batches.per_env);
  const double inv_total = 1.0 / static_cast<double>(total);
  const Var main =
      tape.scale(loss_from_output(tape, model::predict(tape, players.f, tape.concat_rows(z)), pooled, task), inv_total);
  out.main_loss = tape.value(main).item();
  out.objective_value = out.main_loss;

  std::vector<Var> terms{main};
  std::vector<Var> objective{main};
  auto inv_size = [&](std::size_t e) { return 1.0 / static_cast<double>(batches.per_env[e].size()); };

  // Descriptor loss and perturbed representations.
  std::vector<Var> zt(n);
  if (uses_descriptors) {
    for (std::size_t e = 0; e < n; ++e) {
      const auto& b = batches.per_env[e];
      const bool cut = config.detach_phi_from_g || lam_g == 0.0;
      const Var zg = cut ? tape.detach(z[e]) : tape.grad_scale(z[e], lam_g);
      const Var ns = descriptor_ns_loss(tape, players.g, players.encoder, zg, b.descriptors);
      terms.push_back(tape.scale(ns, inv_size(e)));
      out.descriptor_loss += tape.value(ns).item() * inv_size(e);
      if (options.with_objective) {
        const Var plain = descriptor_ns_loss(tape, players.g, players.encoder, z[e], b.descriptors);
        objective.push_back(tape.scale(plain, lam_g * inv_size(e)));
      }
      Matrix delta = options.deltas ? (*options.deltas)[e]
                                    : perturbation(players, tape.value(z[e]), b.descriptors, config.alpha);
      zt[e] = tape.add(z[e], tape.constant(delta));
      out.deltas.push_back(std::move(delta));
    }
    out.objective_value += lam_g * out.descriptor_loss;
  }

  if (method == Method::kCrossGrad) {
    const Var augmented = tape.scale(
        loss_from_output(tape, model::predict(tape, players.f, tape.concat_rows(zt)), pooled, task), inv_total);
    terms.push_back(augmented);
    objective.push_back(augmented);
    out.perturbed_main_loss = tape.value(augmented).item();
    out.objective_value += out.perturbed_main_loss;
  }

  if (method == Method::kIrm) {
    for (std::size_t e = 0; e < n; ++e) {
      const auto& b = batches.per_env[e];
      const double inv = inv_size(e);
      const Var pooled_on_e = env_loss(tape, players.f, z[e], b, task);
      if (lam > 0.0) terms.push_back(tape.scale(pooled_on_e, lam * inv));
      const Var zo = lam > 0.0 ? tape.grad_reverse(tape.grad_scale(z[e], lam)) : tape.detach(z[e]);
      const Var oracle = env_loss(tape, players.oracle[e], zo, b, task);
      terms.push_back(tape.scale(oracle, inv));
      const double gap = (tape.value(pooled_on_e).item() - tape.value(oracle).item()) * inv;
      out.oracle_loss.push_back(tape.value(oracle).item() * inv);
      out.objective_value += lam * gap;
      if (options.with_objective) {
        const Var plain = env_loss(tape, players.oracle[e], z[e], b, task);
        objective.push_back(tape.scale(tape.sub(pooled_on_e, plain), lam * inv));
      }
    }
  }

  if (regret_method) {
    std::vector<Var> detached(n);
    for (std::size_t e = 0; e < n; ++e) detached[e] = tape.detach(z[e]);
    for (std::size_t e = 0; e < n; ++e) {
      const auto& b = batches.per_env[e];
      const double inv = inv_size(e);
      const RegretNodes r = regret(tape, players.heldout[e], players.oracle[e], z[e], b, task, lam, false);
      if (lam > 0.0) terms.push_back(tape.scale(r.heldout, lam * inv));
      terms.push_back(tape.scale(r.oracle, inv));
      out.regrets.push_back(r.term);
      out.oracle_loss.push_back(r.term.loss_oracle);
      out.objective_value += lam * r.term.regret;

      std::vector<Var> others;
      for (std::size_t k = 0; k < n; ++k)
        if (k != e) others.push_back(detached[k]);
      const auto& comp = batches.complement[e];
      const Var aux = env_loss(tape, players.heldout[e], tape.concat_rows(others), comp, task);
      const double inv_comp = 1.0 / static_cast<double>(comp.size());
      terms.push_back(tape.scale(aux, inv_comp));
      out.aux_loss.push_back(tape.value(aux).item() * inv_comp);

      if (options.with_objective) {
        const Var held = env_loss(tape, players.heldout[e], z[e], b, task);
        const Var orc = env_loss(tape, players.oracle[e], z[e], b, task);
        objective.push_back(tape.scale(tape.sub(held, orc), lam * inv));
      }

      if (method == Method::kSrgm) {
        const RegretNodes rp = regret(tape, players.heldout[e], players.perturbed[e], zt[e], b, task, lam, true);
        if (lam > 0.0) terms.push_back(tape.scale(rp.heldout, lam * inv));
        terms.push_back(tape.scale(rp.oracle, inv));
        out.regrets.push_back(rp.term);
        out.perturbed_oracle_loss.push_back(rp.term.loss_oracle);
        out.objective_value += lam * rp.term.regret;
        if (options.with_objective) {
          const Var held = env_loss(tape, players.heldout[e], zt[e], b, task);
          const Var orc = env_loss(tape, players.perturbed[e], zt[e], b, task);
          objective.push_back(tape.scale(tape.sub(held, orc), lam * inv));
        }
      }
    }
  }

  out.game = add_all(tape, terms);
  if (options.with_objective) out.objective = add_all(tape, objective);
  return out;
}

namespace {

void expect(const ObjectiveConfig& config, std::initializer_list<Method> allowed, const char* what) {
  for (Method m : allowed)
    if (config.method == m) return;
  fail(ErrorCode::kInvalidArgument, std::string(what) + " called with method " + to_string(config.method));
}

}  // namespace

Game erm_objective(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                   const ObjectiveConfig& config, const GameOptions& options) {
  expect(config, {Method::kErm}, "erm_objective");
  return build_game(tape, players, batches, config, options);
}

Game irm_penalty(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                 const ObjectiveConfig& config, const GameOptions& options) {
  expect(config, {Method::kIrm}, "irm_penalty");
  return build_game(tape, players, batches, config, options);
}

Game rgm_objective(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                   const ObjectiveConfig& config, const GameOptions& options) {
  expect(config, {Method::kRgm}, "rgm_objective");
  return build_game(tape, players, batches, config, options);
}

Game srgm_objective(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                    const ObjectiveConfig& config, const GameOptions& options) {
  expect(config, {Method::kSrgm}, "srgm_objective");
  return build_game(tape, players, batches, config, options);
}

Game crossgrad_augmented_loss(Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                              const ObjectiveConfig& config, const GameOptions& options) {
  expect(config, {Method::kCrossGrad}, "crossgrad_augmented_loss");
  return build_game(tape, players, batches, config, options);
}

}  // namespace rgm::obj
