#include "rgm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rgm/error.hpp"

namespace rgm::report {

namespace {

nlohmann::json regret_json(const obj::RegretTerm& r) {
  return {{"env", r.env_id}, {"perturbed", r.perturbed}, {"heldout", r.loss_heldout},
          {"oracle", r.loss_oracle}, {"regret", r.regret}};
}

obj::RegretTerm regret_from_json(const nlohmann::json& j) {
  obj::RegretTerm r;
  r.env_id = j.at("env").get<int>();
  r.perturbed = j.at("perturbed").get<bool>();
  r.loss_heldout = j.at("heldout").get<double>();
  r.loss_oracle = j.at("oracle").get<double>();
  r.regret = j.at("regret").get<double>();
  return r;
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

}  // namespace

nlohmann::json CellResult::to_json() const {
  nlohmann::json regrets = nlohmann::json::array();
  for (const auto& r : refit_regrets) regrets.push_back(regret_json(r));
  return {{"method", method},
          {"seed", seed},
          {"status", status},
          {"error", error},
          {"selected_step", selected_step},
          {"lambda", lambda},
          {"lambda_g", lambda_g},
          {"train", train.to_json()},
          {"validation", validation.to_json()},
          {"test", test.to_json()},
          {"refit_regrets", regrets},
          {"refit_converged", refit_converged},
          {"sensitivity", sensitivity},
          {"metrics", metrics}};
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.method = j.at("method").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.status = j.at("status").get<std::string>();
  c.error = j.at("error").get<std::string>();
  c.selected_step = j.at("selected_step").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.lambda_g = j.at("lambda_g").get<double>();
  c.train = eval::Metrics::from_json(j.at("train"));
  c.validation = eval::Metrics::from_json(j.at("validation"));
  c.test = eval::Metrics::from_json(j.at("test"));
  for (const auto& r : j.at("refit_regrets")) c.refit_regrets.push_back(regret_from_json(r));
  c.refit_converged = j.at("refit_converged").get<bool>();
  c.sensitivity = j.at("sensitivity").get<std::vector<double>>();
  c.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return c;
}

void RunReport::recompute_aggregates() {
  aggregates.clear();
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& c : cells) {
    if (c.status != "ok") continue;
    for (const auto& [k, v] : c.metrics) values[c.method][k].push_back(v);
  }
  for (const auto& [method, by_metric] : values) {
    for (const auto& [metric, vs] : by_metric) {
      Aggregate a;
      a.n = vs.size();
      for (double v : vs) a.mean += v;
      a.mean /= static_cast<double>(a.n);
      if (a.n > 1) {
        double ss = 0.0;
        for (double v : vs) ss += (v - a.mean) * (v - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
      }
      aggregates[method][metric] = a;
    }
  }
}

std::vector<std::string> RunReport::methods() const {
  std::vector<std::string> out;
  for (const auto& c : cells)
    if (std::find(out.begin(), out.end(), c.method) == out.end()) out.push_back(c.method);
  return out;
}

const Aggregate& RunReport::aggregate(const std::string& method, const std::string& metric) const {
  const auto m = aggregates.find(method);
  require(m != aggregates.end(), ErrorCode::kInvalidArgument, "report has no successful cells for " + method);
  const auto a = m->second.find(metric);
  require(a != m->second.end(), ErrorCode::kInvalidArgument, "report has no metric " + metric + " for " + method);
  return a->second;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cells) cs.push_back(c.to_json());
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& [method, by_metric] : aggregates)
    for (const auto& [metric, a] : by_metric) agg[method][metric] = {{"mean", a.mean}, {"std", a.std}, {"n", a.n}};
  return {{"schema", "rgm-report v1"}, {"config", config}, {"cells", cs}, {"aggregates", agg}};
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  require(j.value("schema", std::string()) == "rgm-report v1", ErrorCode::kFormat, "not an rgm-report v1 document");
  RunReport r;
  r.config = j.at("config");
  for (const auto& c : j.at("cells")) r.cells.push_back(CellResult::from_json(c));
  for (const auto& [method, by_metric] : j.at("aggregates").items())
    for (const auto& [metric, a] : by_metric.items())
      r.aggregates[method][metric] = {a.at("mean").get<double>(), a.at("std").get<double>(), a.at("n").get<std::size_t>()};
  return r;
}

std::string report_csv(const RunReport& report) {
  std::ostringstream out;
  out << "method,seed,metric,value\n";
  for (const auto& c : report.cells)
    for (const auto& [k, v] : c.metrics) out << c.method << ',' << c.seed << ',' << k << ',' << g17(v) << '\n';
  return out.str();
}

std::string aggregate_csv(const RunReport& report) {
  std::ostringstream out;
  out << "method,metric,mean,std,n\n";
  for (const auto& [method, by_metric] : report.aggregates)
    for (const auto& [metric, a] : by_metric)
      out << method << ',' << metric << ',' << g17(a.mean) << ',' << g17(a.std) << ',' << a.n << '\n';
  return out.str();
}

void write_report(const RunReport& report, const std::string& path) {
  write_text(path, report.to_json().dump(2) + "\n");
  write_text(path + ".csv", report_csv(report));
  write_text(path + ".agg.csv", aggregate_csv(report));
}

RunReport read_report(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path + ": " + e.what());
  }
  return RunReport::from_json(j);
}

}  // namespace rgm::report
