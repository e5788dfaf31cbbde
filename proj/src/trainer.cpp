#include "rgm/trainer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "rgm/error.hpp"
#include "rgm/optim.hpp"

namespace rgm::train {

using model::Predictor;

// ---------------------------------------------------------------------------
// Full-batch fits

double mean_loss(const Predictor& predictor, const Matrix& z, const env::Batch& batch, env::Task task) {
  const Matrix out = predictor.net.forward(z);
  double total = 0.0;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto row = out.row(i);
    if (task == env::Task::kClassification) {
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - mx);
      total += mx + std::log(s) - row[static_cast<std::size_t>(batch.labels[i])];
    } else {
      const double d = row[0] - batch.targets[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(out.rows());
}

namespace {

// Loss, gradient and Hessian of the mean loss of a linear head, with the
// parameters flattened as (row j of [W; b], class k) -> j * C + k.
struct Quadratic {
  double loss = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

Quadratic linear_head_terms(const Eigen::MatrixXd& a, const Eigen::MatrixXd& theta, const env::Batch& batch,
                            env::Task task, bool with_hessian) {
  const Eigen::Index n = a.rows(), d = a.cols(), c = theta.cols();
  const Eigen::MatrixXd out = a * theta;
  Quadratic q;
  Eigen::MatrixXd resid(n, c);  // d loss_i / d out_i
  if (task == env::Task::kClassification) {
    Eigen::MatrixXd p(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = out.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (out.row(i).array() - mx).exp();
      const double s = e.sum();
      p.row(i) = e / s;
      const auto y = static_cast<Eigen::Index>(batch.labels[static_cast<std::size_t>(i)]);
      q.loss += mx + std::log(s) - out(i, y);
      resid.row(i) = p.row(i);
      resid(i, y) -= 1.0;
    }
    if (with_hessian) {
      q.hess = Eigen::MatrixXd::Zero(d * c, d * c);
      Eigen::MatrixXd local(c, c);
      for (Eigen::Index i = 0; i < n; ++i) {
        local = -p.row(i).transpose() * p.row(i);
        local.diagonal() += p.row(i).transpose();
        const Eigen::MatrixXd outer = a.row(i).transpose() * a.row(i);
        for (Eigen::Index j = 0; j < d; ++j)
          for (Eigen::Index l = 0; l < d; ++l) q.hess.block(j * c, l * c, c, c) += outer(j, l) * local;
      }
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = out(i, 0) - batch.targets[static_cast<std::size_t>(i)];
      q.loss += r * r;
      resid(i, 0) = 2.0 * r;
    }
    if (with_hessian) q.hess = 2.0 * a.transpose() * a;
  }
  const double inv = 1.0 / static_cast<double>(n);
  q.loss *= inv;
  const Eigen::MatrixXd g = a.transpose() * resid * inv;  // d x c
  q.grad.resize(d * c);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index k = 0; k < c; ++k) q.grad(j * c + k) = g(j, k);
  if (with_hessian) q.hess *= inv;
  return q;
}

FitResult fit_linear(Predictor& p, const Matrix& z, const env::Batch& batch, env::Task task,
                     const FitConfig& config) {
  auto& w = p.net.weight(0).value;
  auto& b = p.net.bias(0).value;
  const Eigen::Index n = static_cast<Eigen::Index>(z.rows());
  const Eigen::Index d = static_cast<Eigen::Index>(z.cols()) + 1;
  const Eigen::Index c = static_cast<Eigen::Index>(w.cols());
  Eigen::MatrixXd a(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j + 1 < d; ++j) a(i, j) = z(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    a(i, d - 1) = 1.0;
  }
  Eigen::MatrixXd theta(d, c);
  for (Eigen::Index j = 0; j + 1 < d; ++j)
    for (Eigen::Index k = 0; k < c; ++k) theta(j, k) = w(static_cast<std::size_t>(j), static_cast<std::size_t>(k));
  for (Eigen::Index k = 0; k < c; ++k) theta(d - 1, k) = b(0, static_cast<std::size_t>(k));

  FitResult r;
  double mu = 1e-10;
  Quadratic q = linear_head_terms(a, theta, batch, task, true);
  for (; r.steps < config.max_steps; ++r.steps) {
    if (q.grad.norm() < config.tolerance) break;
    const double scale = std::max(q.hess.diagonal().mean(), 1e-12);
    bool accepted = false;
    while (mu < 1e10) {
      Eigen::MatrixXd damped = q.hess;
      damped.diagonal().array() += mu * scale;
      const Eigen::VectorXd step = damped.ldlt().solve(-q.grad);
      Eigen::MatrixXd trial = theta;
      for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < c; ++k) trial(j, k) += step(j * c + k);
      Quadratic tq = linear_head_terms(a, trial, batch, task, true);
      const bool better = std::isfinite(tq.loss) &&
                          (tq.loss < q.loss || (tq.loss <= q.loss + 1e-15 * std::abs(q.loss) &&
                                                tq.grad.norm() < q.grad.norm()));
      if (better) {
        theta = std::move(trial);
        q = std::move(tq);
        mu = std::max(mu * 0.1, 1e-12);
        accepted = true;
        break;
      }
      mu *= 10.0;
    }
    if (!accepted) break;
  }
  for (Eigen::Index j = 0; j + 1 < d; ++j)
    for (Eigen::Index k = 0; k < c; ++k) w(static_cast<std::size_t>(j), static_cast<std::size_t>(k)) = theta(j, k);
  for (Eigen::Index k = 0; k < c; ++k) b(0, static_cast<std::size_t>(k)) = theta(d - 1, k);
  r.loss = q.loss;
  r.grad_norm = q.grad.norm();
  r.converged = r.grad_norm < config.tolerance;
  return r;
}

FitResult fit_descent(Predictor& p, const Matrix& z, const env::Batch& batch, env::Task task,
                      const FitConfig& config) {
  const auto params = p.net.params();
  const double inv = 1.0 / static_cast<double>(z.rows());
  auto evaluate = [&](bool with_grad) {
    ad::Tape tape;
    const ad::Var loss = tape.scale(obj::env_loss(tape, p, tape.constant(z), batch, task), inv);
    if (with_grad) {
      ad::zero_grads(params);
      tape.backward(loss);
    }
    return tape.value(loss).item();
  };
  FitResult r;
  double loss = evaluate(true);
  double step = 1.0;
  for (; r.steps < config.max_steps; ++r.steps) {
    const double gnorm = ad::grad_norm(params);
    r.grad_norm = gnorm;
    if (gnorm < config.tolerance) break;
    std::vector<Matrix> start, grads;
    for (auto* q : params) {
      start.push_back(q->value);
      grads.push_back(q->grad);
    }
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t k = 0; k < start[i].size(); ++k)
          params[i]->value[k] = start[i][k] - step * grads[i][k];
      const double trial = evaluate(false);
      if (std::isfinite(trial) && trial <= loss - 0.5 * step * gnorm * gnorm) {
        loss = trial;
        accepted = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = start[i];
      break;
    }
    loss = evaluate(true);
  }
  ad::zero_grads(params);
  r.loss = loss;
  r.converged = r.grad_norm < config.tolerance;
  return r;
}

}  // namespace

FitResult fit_predictor(Predictor& predictor, const Matrix& z, const env::Batch& batch, env::Task task,
                        const FitConfig& config) {
  require(z.rows() == batch.size() && z.rows() > 0, ErrorCode::kShapeMismatch,
          "fit_predictor: representation rows differ from the batch");
  require(z.cols() == predictor.net.spec().in(), ErrorCode::kShapeMismatch,
          "fit_predictor: representation width differs from the predictor input");
  if (predictor.net.num_layers() == 1) return fit_linear(predictor, z, batch, task, config);
  return fit_descent(predictor, z, batch, task, config);
}

// ---------------------------------------------------------------------------
// Configuration

obj::ObjectiveConfig TrainConfig::objective(env::Task task) const {
  obj::ObjectiveConfig c;
  c.method = method;
  c.lambda = lambda;
  c.lambda_g = lambda_g;
  c.alpha = alpha;
  c.detach_phi_from_g = detach_phi_from_g;
  c.task = task;
  return c;
}

void TrainConfig::validate() const {
  require(batch_size > 0, ErrorCode::kInvalidArgument, "batch_size must be positive");
  require(std::isfinite(lr) && lr > 0.0, ErrorCode::kInvalidArgument, "lr must be positive");
  if (lr_end)
    require(std::isfinite(*lr_end) && *lr_end > 0.0 && *lr_end <= lr, ErrorCode::kInvalidArgument,
            "lr schedule needs lr >= lr_end > 0");
  require(clip_norm > 0.0, ErrorCode::kInvalidArgument, "clip_norm must be positive");
  objective(env::Task::kClassification).validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"method", obj::to_string(method)},
                      {"steps", steps},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"lambda", lambda},
                      {"lambda_g", lambda_g},
                      {"alpha", alpha},
                      {"detach_phi_from_g", detach_phi_from_g},
                      {"with_replacement", with_replacement},
                      {"clip_norm", clip_norm},
                      {"eval_every", eval_every},
                      {"seed", seed},
                      {"arch", arch.to_json()},
                      {"refit", {{"max_steps", refit.max_steps}, {"tolerance", refit.tolerance}}}};
  if (lr_end) j["lr_end"] = *lr_end;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("method")) c.method = obj::method_from_string(j.at("method").get<std::string>());
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  if (j.contains("lr_end") && !j.at("lr_end").is_null()) c.lr_end = j.at("lr_end").get<double>();
  c.lambda = j.value("lambda", c.lambda);
  c.lambda_g = j.value("lambda_g", c.lambda_g);
  c.alpha = j.value("alpha", c.alpha);
  c.detach_phi_from_g = j.value("detach_phi_from_g", c.detach_phi_from_g);
  c.with_replacement = j.value("with_replacement", c.with_replacement);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("arch")) c.arch = model::ArchConfig::from_json(j.at("arch"));
  if (j.contains("refit")) {
    c.refit.max_steps = j.at("refit").value("max_steps", c.refit.max_steps);
    c.refit.tolerance = j.at("refit").value("tolerance", c.refit.tolerance);
  }
  return c;
}

nlohmann::json StepTrace::to_json() const {
  nlohmann::json regret_rows = nlohmann::json::array();
  for (const auto& r : regrets)
    regret_rows.push_back({{"env", r.env_id}, {"perturbed", r.perturbed}, {"heldout", r.loss_heldout},
                           {"oracle", r.loss_oracle}, {"regret", r.regret}});
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& [name, v] : grad_norms) norms[name] = v;
  return {{"step", step},
          {"lr", lr},
          {"objective", objective},
          {"main", main_loss},
          {"perturbed_main", perturbed_main_loss},
          {"descriptor", descriptor_loss},
          {"aux", aux_loss},
          {"oracle", oracle_loss},
          {"perturbed_oracle", perturbed_oracle_loss},
          {"regrets", regret_rows},
          {"grad_norms", norms}};
}

// ---------------------------------------------------------------------------
// Steps

std::vector<std::string> active_players(obj::Method method, const model::PlayerSet& players) {
  std::vector<std::string> names{"phi", "f"};
  const std::size_t n = players.n_envs();
  auto add_group = [&](const char* prefix) {
    for (std::size_t e = 0; e < n; ++e) names.push_back(prefix + std::to_string(e));
  };
  switch (method) {
    case obj::Method::kErm: break;
    case obj::Method::kIrm: add_group("f_e"); break;
    case obj::Method::kRgm:
      add_group("f_e");
      add_group("f_-e");
      break;
    case obj::Method::kSrgm:
      names.push_back("g");
      names.push_back("enc");
      add_group("f_e");
      add_group("f_-e");
      add_group("f~_e");
      break;
    case obj::Method::kCrossGrad:
      names.push_back("g");
      names.push_back("enc");
      break;
  }
  return names;
}

obj::Game srgm_forward_pass(ad::Tape& tape, model::PlayerSet& players, const env::MiniBatches& batches,
                            const obj::ObjectiveConfig& config) {
  return obj::srgm_objective(tape, players, batches, config);
}

namespace {

bool finite(const obj::Game& g) {
  auto ok = [](double v) { return std::isfinite(v); };
  bool all = ok(g.objective_value) && ok(g.main_loss) && ok(g.descriptor_loss) && ok(g.perturbed_main_loss);
  for (const auto* v : {&g.aux_loss, &g.oracle_loss, &g.perturbed_oracle_loss})
    all = all && std::all_of(v->begin(), v->end(), ok);
  for (const auto& d : g.deltas) all = all && d.all_finite();
  return all;
}

StepTrace do_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                  env::Task task, double lr, std::size_t step) {
  ad::Tape tape;
  const obj::Game game = obj::build_game(tape, players, batches, config.objective(task));
  require(finite(game), ErrorCode::kNonFinite, "step " + std::to_string(step) + ": non-finite loss");

  StepTrace tr;
  tr.step = step;
  tr.lr = lr;
  tr.objective = game.objective_value;
  tr.main_loss = game.main_loss;
  tr.perturbed_main_loss = game.perturbed_main_loss;
  tr.descriptor_loss = game.descriptor_loss;
  tr.aux_loss = game.aux_loss;
  tr.oracle_loss = game.oracle_loss;
  tr.perturbed_oracle_loss = game.perturbed_oracle_loss;
  tr.regrets = game.regrets;

  tape.backward(game.game);
  const auto active = active_players(config.method, players);
  std::vector<ad::Parameter*> stepping;
  for (auto& player : players.players()) {
    if (std::find(active.begin(), active.end(), player.name) == active.end()) continue;
    tr.grad_norms.emplace_back(player.name, ad::clip_grad_norm(player.params, config.clip_norm));
    stepping.insert(stepping.end(), player.params.begin(), player.params.end());
  }
  const auto everything = players.all_params();
  try {
    ad::sgd_step(stepping, lr);
  } catch (const Error&) {
    ad::zero_grads(everything);
    throw;
  }
  ad::zero_grads(everything);
  return tr;
}

}  // namespace

StepTrace rgm_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                   env::Task task, double lr, std::size_t step) {
  require(config.method == obj::Method::kErm || config.method == obj::Method::kIrm ||
              config.method == obj::Method::kRgm,
          ErrorCode::kInvalidArgument, "rgm_step called with method " + obj::to_string(config.method));
  return do_step(players, batches, config, task, lr, step);
}

StepTrace srgm_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                    env::Task task, double lr, std::size_t step) {
  require(config.method == obj::Method::kSrgm, ErrorCode::kInvalidArgument,
          "srgm_step called with method " + obj::to_string(config.method));
  return do_step(players, batches, config, task, lr, step);
}

StepTrace train_step(model::PlayerSet& players, const env::MiniBatches& batches, const TrainConfig& config,
                     env::Task task, double lr, std::size_t step) {
  return do_step(players, batches, config, task, lr, step);
}

double learning_rate(const TrainConfig& config, std::size_t step) {
  if (!config.lr_end || config.steps <= 1) return config.lr;
  const double t = static_cast<double>(step) / static_cast<double>(config.steps - 1);
  return config.lr + (*config.lr_end - config.lr) * t;
}

model::ArchConfig resolve_arch(const env::EnvironmentSet& envs, const TrainConfig& config) {
  model::ArchConfig a = config.arch;
  a.input_dim = envs.dim();
  a.num_outputs = envs.task == env::Task::kClassification ? static_cast<std::size_t>(envs.num_classes) : 1;
  return a;
}

TrainResult train(const env::EnvironmentSet& envs, const TrainConfig& config, const TraceSink& sink) {
  envs.validate();
  config.validate();
  TrainResult result;
  model::PlayerSet players = init_players(resolve_arch(envs, config), envs.train.size(), config.seed);
  std::mt19937_64 rng(model::player_seed(config.seed, "batches"));
  const env::SamplerOptions sampler{config.batch_size, config.with_replacement};

  auto score = [&](const model::PlayerSet& p) {
    const double s = eval::evaluate(p, envs.validation, envs.task).score(envs.task);
    return std::isnan(s) ? -std::numeric_limits<double>::infinity() : s;
  };
  result.players = players;
  result.selected_step = 0;
  result.selected_score = score(players);
  result.validation.emplace_back(0, result.selected_score);

  for (std::size_t t = 0; t < config.steps; ++t) {
    const auto batches = env::sample_minibatches(envs.train, sampler, rng);
    try {
      result.trace.push_back(train_step(players, batches, config, envs.task, learning_rate(config, t), t));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    if (sink) sink(result.trace.back());
    const std::size_t done = t + 1;
    if (config.eval_every > 0 && (done % config.eval_every == 0 || done == config.steps)) {
      const double s = score(players);
      result.validation.emplace_back(done, s);
      if (s > result.selected_score) {
        result.selected_score = s;
        result.selected_step = done;
        result.players = players;
      }
    }
  }
  if (config.eval_every == 0 && !result.aborted) {
    result.players = players;
    result.selected_step = result.trace.size();
    result.selected_score = score(players);
  }
  result.final_players = std::move(players);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation-time refits

RefitReport refit_oracles(model::PlayerSet& players, const env::EnvironmentSet& envs, const FitConfig& config,
                          double alpha) {
  const std::size_t n = envs.train.size();
  require(players.n_envs() == n, ErrorCode::kInvalidArgument, "refit_oracles: environment count mismatch");
  std::vector<env::Batch> batches;
  std::vector<Matrix> z;
  for (const auto& e : envs.train) {
    batches.push_back(env::make_batch(e));
    z.push_back(players.phi.forward(batches.back().x));
  }
  RefitReport report;
  for (std::size_t e = 0; e < n; ++e) {
    RefitEnv r;
    r.env_id = envs.train[e].id;
    r.oracle = fit_predictor(players.oracle[e], z[e], batches[e], envs.task, config);
    if (n >= 2) {
      std::vector<Matrix> zs;
      std::vector<env::Batch> bs;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == e) continue;
        zs.push_back(z[k]);
        bs.push_back(batches[k]);
      }
      r.heldout = fit_predictor(players.heldout[e], vstack(zs), env::concat_batches(bs), envs.task, config);
    } else {
      r.heldout.converged = true;
    }
    r.regret.env_id = r.env_id;
    r.regret.loss_heldout = mean_loss(players.heldout[e], z[e], batches[e], envs.task);
    r.regret.loss_oracle = mean_loss(players.oracle[e], z[e], batches[e], envs.task);
    r.regret.regret = r.regret.loss_heldout - r.regret.loss_oracle;
    r.converged = r.oracle.converged && r.heldout.converged;

    const auto& desc = batches[e].descriptors;
    const bool varied = std::any_of(desc.begin(), desc.end(), [&](env::Descriptor s) { return s != desc.front(); });
    if (batches[e].has_descriptors() && varied) {
      const Matrix zt = obj::perturb_representation(players, z[e], batches[e].descriptors, alpha);
      r.perturbed_oracle = fit_predictor(players.perturbed[e], zt, batches[e], envs.task, config);
      obj::RegretTerm p;
      p.env_id = r.env_id;
      p.perturbed = true;
      p.loss_heldout = mean_loss(players.heldout[e], zt, batches[e], envs.task);
      p.loss_oracle = mean_loss(players.perturbed[e], zt, batches[e], envs.task);
      p.regret = p.loss_heldout - p.loss_oracle;
      r.perturbed_regret = p;
      r.converged = r.converged && r.perturbed_oracle->converged;
    }
    report.converged = report.converged && r.converged;
    report.envs.push_back(std::move(r));
  }
  return report;
}

}  // namespace rgm::train
