#include "rgm/experiment.hpp"

#include <cmath>
#include <sstream>

#include "rgm/error.hpp"

namespace rgm::exp {

env::EnvironmentSet GeneratorConfig::make(std::uint64_t seed) const {
  nlohmann::json p = params;
  p["seed"] = seed;
  env::EnvironmentSet envs;
  if (kind == "translation") {
    envs = env::gen_translation_envs(env::TranslationConfig::from_json(p));
  } else if (kind == "descriptor") {
    envs = env::gen_descriptor_envs(env::DescriptorConfig::from_json(p));
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown generator '" + kind + "'");
  }
  return cluster ? env::cluster_envs(envs) : envs;
}

nlohmann::json GeneratorConfig::to_json() const { return {{"kind", kind}, {"params", params}, {"cluster", cluster}}; }

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig g;
  g.kind = j.value("kind", g.kind);
  g.params = j.value("params", g.params);
  g.cluster = j.value("cluster", g.cluster);
  return g;
}

nlohmann::json MethodSpec::to_json() const {
  return {{"label", label}, {"train", train.to_json()}, {"lambda_grid", lambda_grid}, {"lambda_g_grid", lambda_g_grid}};
}

MethodSpec MethodSpec::from_json(const nlohmann::json& j) {
  MethodSpec m;
  m.train = train::TrainConfig::from_json(j.value("train", nlohmann::json::object()));
  m.label = j.value("label", obj::to_string(m.train.method));
  m.lambda_grid = j.value("lambda_grid", m.lambda_grid);
  m.lambda_g_grid = j.value("lambda_g_grid", m.lambda_g_grid);
  return m;
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), ErrorCode::kInvalidArgument, "experiment needs at least one seed");
  require(!methods.empty(), ErrorCode::kInvalidArgument, "experiment needs at least one method");
  for (const auto& m : methods) m.train.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : methods) ms.push_back(m.to_json());
  return {{"generator", generator.to_json()}, {"methods", ms}, {"seeds", seeds}, {"refit", refit}, {"output", output}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
  if (j.contains("methods"))
    for (const auto& m : j.at("methods")) c.methods.push_back(MethodSpec::from_json(m));
  c.seeds = j.value("seeds", c.seeds);
  c.refit = j.value("refit", c.refit);
  c.output = j.value("output", c.output);
  return c;
}

namespace {

env::Environment pooled_train(const env::EnvironmentSet& envs) {
  env::Environment all{0, {}};
  for (const auto& e : envs.train) all.examples.insert(all.examples.end(), e.examples.begin(), e.examples.end());
  return all;
}

void put_metrics(report::CellResult& c, const std::string& split, const eval::Metrics& m) {
  if (std::isfinite(m.accuracy)) c.metrics[split + "_accuracy"] = m.accuracy;
  if (std::isfinite(m.mean_ce)) c.metrics[split + "_mean_ce"] = m.mean_ce;
  if (std::isfinite(m.mae)) c.metrics[split + "_mae"] = m.mae;
}

}  // namespace

report::CellResult run_cell(const env::EnvironmentSet& envs, const MethodSpec& method, std::uint64_t seed,
                            bool refit) {
  report::CellResult cell;
  cell.method = method.label;
  cell.seed = seed;
  try {
    const std::vector<double> lambdas = method.lambda_grid.empty() ? std::vector<double>{method.train.lambda}
                                                                   : method.lambda_grid;
    const std::vector<double> lambda_gs = method.lambda_g_grid.empty()
                                              ? std::vector<double>{method.train.lambda_g}
                                              : method.lambda_g_grid;
    std::optional<train::TrainResult> best;
    train::TrainConfig chosen;
    for (double lam : lambdas) {
      for (double lam_g : lambda_gs) {
        train::TrainConfig cfg = method.train;
        cfg.lambda = lam;
        cfg.lambda_g = lam_g;
        cfg.seed = seed;
        auto result = train::train(envs, cfg);
        if (!best || result.selected_score > best->selected_score) {
          best = std::move(result);
          chosen = cfg;
        }
      }
    }
    auto& result = *best;
    cell.lambda = chosen.lambda;
    cell.lambda_g = chosen.lambda_g;
    cell.selected_step = result.selected_step;
    if (result.aborted) {
      cell.status = "aborted";
      cell.error = result.abort_reason;
    }
    model::PlayerSet& players = result.players;
    cell.train = eval::evaluate(players, pooled_train(envs), envs.task);
    cell.validation = eval::evaluate(players, envs.validation, envs.task);
    cell.test = eval::evaluate(players, envs.test, envs.task);
    put_metrics(cell, "train", cell.train);
    put_metrics(cell, "validation", cell.validation);
    put_metrics(cell, "test", cell.test);
    cell.metrics["selected_step"] = static_cast<double>(result.selected_step);
    cell.metrics["lambda"] = cell.lambda;
    cell.metrics["lambda_g"] = cell.lambda_g;

    if (players.f.net.spec().out() <= 2) {
      cell.sensitivity = eval::input_sensitivity(players, envs.train);
      if (cell.sensitivity.size() == 2 && cell.sensitivity[1] > 0.0)
        cell.metrics["sensitivity_ratio"] = cell.sensitivity[0] / cell.sensitivity[1];
    }
    if (refit) {
      model::PlayerSet copy = players;
      const auto rr = train::refit_oracles(copy, envs, chosen.refit, chosen.alpha);
      double min_regret = INFINITY;
      for (const auto& e : rr.envs) {
        cell.refit_regrets.push_back(e.regret);
        min_regret = std::min(min_regret, e.regret.regret);
        if (e.perturbed_regret) {
          cell.refit_regrets.push_back(*e.perturbed_regret);
          min_regret = std::min(min_regret, e.perturbed_regret->regret);
        }
      }
      cell.refit_converged = rr.converged;
      if (std::isfinite(min_regret)) cell.metrics["min_refit_regret"] = min_regret;
    }
  } catch (const std::exception& e) {
    cell.status = "error";
    cell.error = e.what();
    cell.metrics.clear();
  }
  return cell;
}

report::RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<env::EnvironmentSet> data;
  for (auto seed : config.seeds) data.push_back(config.generator.make(seed));

  const std::size_t n_seeds = config.seeds.size();
  const std::size_t n_cells = config.methods.size() * n_seeds;
  std::vector<report::CellResult> cells(n_cells);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n_cells; ++i) {
    const std::size_t m = i / n_seeds, s = i % n_seeds;
    cells[i] = run_cell(data[s], config.methods[m], config.seeds[s], config.refit);
  }
  report::RunReport r;
  r.config = config.to_json();
  r.cells = std::move(cells);
  r.recompute_aggregates();
  return r;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    nlohmann::json row = {{"level", levels[l]}};
    for (std::size_t m = 0; m < methods.size(); ++m) row[methods[m]] = ratio[l][m];
    rows.push_back(row);
  }
  return {{"parameter", parameter}, {"ratios", rows}};
}

std::string SweepResult::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "level,method,ratio\n";
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t m = 0; m < methods.size(); ++m) out << levels[l] << ',' << methods[m] << ',' << ratio[l][m] << '\n';
  return out.str();
}

SweepResult sweep_shift_severity(const ExperimentConfig& base, const std::string& parameter,
                                 const std::vector<double>& levels) {
  require(levels.size() >= 2, ErrorCode::kInvalidArgument, "a sweep needs at least two severity levels");
  bool has_erm = false;
  for (const auto& m : base.methods) has_erm = has_erm || m.label == "erm";
  require(has_erm, ErrorCode::kInvalidArgument, "sweep needs a method labelled 'erm' as the reference");

  SweepResult out;
  out.parameter = parameter;
  out.levels = levels;
  for (const auto& m : base.methods) out.methods.push_back(m.label);
  for (double level : levels) {
    ExperimentConfig cfg = base;
    cfg.generator.params[parameter] = level;
    auto rep = run_experiment(cfg);
    auto error = [&](const std::string& method) {
      const auto& agg = rep.aggregates;
      const auto it = agg.find(method);
      if (it == agg.end()) return std::nan("");
      if (it->second.count("test_accuracy")) return 1.0 - it->second.at("test_accuracy").mean;
      if (it->second.count("test_mae")) return it->second.at("test_mae").mean;
      return std::nan("");
    };
    const double ref = error("erm");
    std::vector<double> row;
    for (const auto& m : out.methods) row.push_back(error(m) / ref);
    out.ratio.push_back(std::move(row));
    out.reports.push_back(std::move(rep));
  }
  return out;
}

}  // namespace rgm::exp
