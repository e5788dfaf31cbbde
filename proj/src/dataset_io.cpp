#include "rgm/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "rgm/error.hpp"

namespace rgm::env {

namespace {

constexpr const char* kMagic = "# rgm-dataset v1";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_env(const Environment& env, const std::string& tag, std::ostream& out) {
  for (const auto& ex : env.examples) {
    out << tag << ' ' << format_double(ex.y) << ' ' << (ex.descriptor ? ex.descriptor->hex() : "-");
    for (double v : ex.x) out << ' ' << format_double(v);
    out << '\n';
  }
}

}  // namespace

void write_dataset(const EnvironmentSet& envs, std::ostream& out) {
  out << kMagic << '\n';
  out << "# task " << (envs.task == Task::kClassification ? "classification" : "regression") << " classes "
      << envs.num_classes << " dim " << envs.dim() << '\n';
  const nlohmann::json info = {{"name", envs.info.name}, {"seed", envs.info.seed}, {"config", envs.info.config}};
  out << "# generator " << info.dump() << '\n';
  for (const auto& e : envs.train) write_env(e, std::to_string(e.id), out);
  write_env(envs.validation, "val", out);
  write_env(envs.test, "test", out);
}

void write_dataset(const EnvironmentSet& envs, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  write_dataset(envs, out);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

EnvironmentSet read_dataset(std::istream& in) {
  std::string line;
  require(std::getline(in, line) && line == kMagic, ErrorCode::kFormat, "missing dataset header line");

  EnvironmentSet set;
  std::size_t dim = 0;
  std::map<int, Environment> train;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "dataset line " + std::to_string(lineno);
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      if (key == "task") {
        std::string task, word;
        hs >> task >> word >> set.num_classes >> word >> dim;
        require(!hs.fail(), ErrorCode::kFormat, where + ": bad task line");
        require(task == "classification" || task == "regression", ErrorCode::kFormat,
                where + ": unknown task '" + task + "'");
        set.task = task == "classification" ? Task::kClassification : Task::kRegression;
      } else if (key == "generator") {
        std::string rest;
        std::getline(hs, rest);
        try {
          const auto j = nlohmann::json::parse(rest);
          set.info = {j.at("name").get<std::string>(), j.at("seed").get<std::uint64_t>(), j.at("config")};
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorCode::kFormat, where + ": bad generator record: " + e.what());
        }
      }
      continue;
    }
    std::istringstream ls(line);
    std::string tag, descriptor;
    Example ex;
    ls >> tag >> ex.y >> descriptor;
    require(!ls.fail(), ErrorCode::kFormat, where + ": expected env, label and descriptor fields");
    if (descriptor != "-") ex.descriptor = Descriptor::from_hex(descriptor);
    double v = 0.0;
    while (ls >> v) ex.x.push_back(v);
    require(ls.eof(), ErrorCode::kFormat, where + ": non-numeric feature");
    require(dim == 0 || ex.x.size() == dim, ErrorCode::kFormat,
            where + ": " + std::to_string(ex.x.size()) + " features, header says " + std::to_string(dim));
    if (tag == "val") {
      set.validation.id = -1;
      set.validation.examples.push_back(std::move(ex));
    } else if (tag == "test") {
      set.test.id = -2;
      set.test.examples.push_back(std::move(ex));
    } else {
      int id = 0;
      try {
        std::size_t used = 0;
        id = std::stoi(tag, &used);
        require(used == tag.size(), ErrorCode::kFormat, where + ": bad environment id '" + tag + "'");
      } catch (const std::logic_error&) {
        fail(ErrorCode::kFormat, where + ": bad environment id '" + tag + "'");
      }
      auto& env = train[id];
      env.id = id;
      env.examples.push_back(std::move(ex));
    }
  }
  for (auto& [id, env] : train) set.train.push_back(std::move(env));
  set.validate();
  return set;
}

EnvironmentSet read_dataset(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  return read_dataset(in);
}

}  // namespace rgm::env
