// rgm: command-line front end for the lab.
//
//   rgm generate   --generator descriptor --set spurious_strength=0.9 --seed 3 --out data.txt
//   rgm train      --data data.txt --set method=rgm --set lambda=0.1 --out players.ckpt --trace trace.jsonl
//   rgm evaluate   --checkpoint players.ckpt --data data.txt
//   rgm check-props --seed 0
//   rgm report     --config experiment.json --out report.json
//   rgm sweep      --config experiment.json --param spurious_strength --levels 0,0.5,0.9 --out sweep
//
// Every --config file is either an experiment configuration or a report (its
// "config" member is used). Failures print {"error": {...}} on stderr and
// exit with status 2 (1 for usage errors).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"
#include "rgm/checkpoint.hpp"
#include "rgm/dataset_io.hpp"
#include "rgm/error.hpp"
#include "rgm/evaluation.hpp"
#include "rgm/experiment.hpp"
#include "rgm/presets.hpp"
#include "rgm/propositions.hpp"
#include "rgm/report.hpp"
#include "rgm/trainer.hpp"

using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  rgm::require(static_cast<bool>(in), rgm::ErrorCode::kIo, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    rgm::fail(rgm::ErrorCode::kFormat, path + ": " + e.what());
  }
}

rgm::exp::ExperimentConfig load_experiment(const std::string& path) {
  json j = read_json(path);
  if (j.contains("schema") && j.contains("config")) j = j.at("config");
  return rgm::exp::ExperimentConfig::from_json(j);
}

// "key=value" overrides; values are parsed as JSON when possible.
void apply_overrides(json& target, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    rgm::require(eq != std::string::npos && eq > 0, rgm::ErrorCode::kInvalidArgument,
                 "--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    try {
      target[key] = json::parse(value);
    } catch (const json::exception&) {
      target[key] = value;
    }
  }
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  rgm::require(static_cast<bool>(f), rgm::ErrorCode::kIo, "cannot open " + out + " for writing");
  f << j.dump(2) << '\n';
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      rgm::fail(rgm::ErrorCode::kInvalidArgument, "bad level '" + item + "'");
    }
  }
  return out;
}

int print_error(const std::string& code, const std::string& message, int status) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regret minimization lab: synthetic environments, RGM / SRGM training and checks"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out;
  std::string config_path;

  // generate
  auto* gen = app.add_subcommand("generate", "Draw a synthetic environment set and write it as text");
  std::string generator = "translation";
  std::vector<std::string> sets;
  bool cluster = false;
  gen->add_option("--generator", generator, "translation | descriptor")->check(CLI::IsMember({"translation", "descriptor"}));
  gen->add_option("--set", sets, "generator parameter override key=value (repeatable)");
  gen->add_flag("--cluster", cluster, "merge training environments into E0 / E1 by size");
  gen->add_option("--config", config_path, "experiment config whose generator is used");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out, "output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train one method and write the selected checkpoint");
  std::string data_path, trace_path, method_label;
  std::vector<std::string> train_sets;
  tr->add_option("--data", data_path, "dataset file (otherwise generated from --config)");
  tr->add_option("--config", config_path, "experiment config supplying generator and method settings");
  tr->add_option("--method-label", method_label, "method of the config to train (default: first)");
  tr->add_option("--set", train_sets, "training option override key=value, e.g. method=srgm lambda=0.1");
  tr->add_option("--seed", seed, "training (and generator) seed");
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--trace", trace_path, "line-delimited step trace output");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Metrics of a checkpoint on every split");
  std::string ckpt_path;
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--out", out, "output JSON (default stdout)");

  // check-props
  auto* cp = app.add_subcommand("check-props", "Numeric checks of the regret propositions");
  cp->add_option("--seed", seed, "seed of the random instances");
  cp->add_option("--out", out, "output JSON (default stdout)");

  // report
  auto* rp = app.add_subcommand("report", "Run an experiment config and write the report, or summarize one");
  std::string in_path;
  std::string preset;
  rp->add_option("--config", config_path, "experiment config to run");
  rp->add_option("--preset", preset, "built-in experiment: translation | descriptor | ablation");
  rp->add_option("--in", in_path, "existing report to summarize");
  rp->add_option("--out", out, "report path (writes .csv and .agg.csv next to it)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Shift-severity sweep: error ratio of each method to ERM");
  std::string param, levels;
  sw->add_option("--config", config_path, "experiment config")->required();
  sw->add_option("--param", param, "generator parameter to vary")->required();
  sw->add_option("--levels", levels, "comma-separated levels")->required();
  sw->add_option("--out", out, "output prefix (writes <out>.json and <out>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return print_error("usage", e.what(), 1);
  }

  try {
    if (*gen) {
      rgm::exp::GeneratorConfig g;
      if (!config_path.empty()) g = load_experiment(config_path).generator;
      else g.kind = generator;
      apply_overrides(g.params, sets);
      g.cluster = g.cluster || cluster;
      rgm::env::write_dataset(g.make(seed), out);
    } else if (*tr) {
      rgm::exp::ExperimentConfig cfg;
      if (!config_path.empty()) cfg = load_experiment(config_path);
      rgm::exp::MethodSpec spec;
      if (!cfg.methods.empty()) {
        spec = cfg.methods.front();
        if (!method_label.empty()) {
          bool found = false;
          for (const auto& m : cfg.methods)
            if (m.label == method_label) spec = m, found = true;
          rgm::require(found, rgm::ErrorCode::kInvalidArgument, "no method labelled '" + method_label + "'");
        }
      }
      json tj = spec.train.to_json();
      apply_overrides(tj, train_sets);
      tj["seed"] = seed;
      const auto train_cfg = rgm::train::TrainConfig::from_json(tj);
      rgm::require(!data_path.empty() || !config_path.empty(), rgm::ErrorCode::kInvalidArgument,
                   "train needs --data or --config");
      const auto envs = !data_path.empty() ? rgm::env::read_dataset(data_path) : cfg.generator.make(seed);
      std::optional<std::ofstream> trace;
      if (!trace_path.empty()) {
        trace.emplace(trace_path);
        rgm::require(static_cast<bool>(*trace), rgm::ErrorCode::kIo, "cannot open " + trace_path);
      }
      const auto result = rgm::train::train(envs, train_cfg, [&](const rgm::train::StepTrace& s) {
        if (trace) *trace << s.to_json().dump() << '\n';
      });
      rgm::model::save_players(result.players, out);
      json summary = {{"selected_step", result.selected_step},
                      {"selected_score", result.selected_score},
                      {"steps_run", result.trace.size()},
                      {"aborted", result.aborted}};
      if (result.aborted) summary["abort_reason"] = result.abort_reason;
      std::cout << summary.dump() << '\n';
      if (result.aborted) return print_error("non_finite", result.abort_reason, 2);
    } else if (*ev) {
      const auto players = rgm::model::load_players(ckpt_path);
      const auto envs = rgm::env::read_dataset(data_path);
      rgm::env::Environment pooled{0, {}};
      for (const auto& e : envs.train) pooled.examples.insert(pooled.examples.end(), e.examples.begin(), e.examples.end());
      json j = {{"train", rgm::eval::evaluate(players, pooled, envs.task).to_json()},
                {"validation", rgm::eval::evaluate(players, envs.validation, envs.task).to_json()},
                {"test", rgm::eval::evaluate(players, envs.test, envs.task).to_json()}};
      emit(j, out);
    } else if (*cp) {
      emit(rgm::presets::check_propositions(seed), out);
    } else if (*rp) {
      if (!in_path.empty()) {
        const auto r = rgm::report::read_report(in_path);
        std::cout << rgm::report::aggregate_csv(r);
        if (!out.empty()) rgm::report::write_report(r, out);
      } else {
        rgm::require(!config_path.empty() || !preset.empty(), rgm::ErrorCode::kInvalidArgument,
                     "report needs --config, --preset or --in");
        const auto cfg = !config_path.empty() ? load_experiment(config_path) : rgm::presets::experiment(preset);
        const auto r = rgm::exp::run_experiment(cfg);
        const std::string path = !out.empty() ? out : (!cfg.output.empty() ? cfg.output : "report.json");
        rgm::report::write_report(r, path);
        std::cout << rgm::report::aggregate_csv(r);
      }
    } else if (*sw) {
      const auto cfg = load_experiment(config_path);
      const auto result = rgm::exp::sweep_shift_severity(cfg, param, parse_levels(levels));
      std::cout << result.csv();
      if (!out.empty()) {
        emit(result.to_json(), out + ".json");
        std::ofstream csv(out + ".csv");
        rgm::require(static_cast<bool>(csv), rgm::ErrorCode::kIo, "cannot open " + out + ".csv");
        csv << result.csv();
      }
    }
  } catch (const rgm::Error& e) {
    return print_error(std::string(rgm::to_string(e.code())), e.what(), 2);
  } catch (const std::exception& e) {
    return print_error("internal", e.what(), 2);
  }
  return 0;
}
