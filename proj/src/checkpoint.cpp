#include "rgm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "rgm/error.hpp"

namespace rgm::model {

namespace {

constexpr const char* kMagic = "RGMCKPT1";

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

double get_f64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  require(in.gcount() == 8, ErrorCode::kFormat, "checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_players(const PlayerSet& players, std::ostream& out) {
  const auto params = players.all_params();
  nlohmann::json table = nlohmann::json::array();
  for (const auto* q : params) table.push_back({q->id, q->value.rows(), q->value.cols()});
  const nlohmann::json header = {{"arch", players.arch.to_json()}, {"n_envs", players.n_envs()}, {"params", table}};
  out << kMagic << '\n' << header.dump() << '\n';
  for (const auto* q : params)
    for (double v : q->value.values()) put_f64(out, v);
}

void save_players(const PlayerSet& players, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  save_players(players, out);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

PlayerSet load_players(std::istream& in) {
  std::string line;
  require(std::getline(in, line) && line == kMagic, ErrorCode::kFormat, "not a checkpoint (bad magic)");
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kFormat, "checkpoint header missing");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint header: ") + e.what());
  }
  const ArchConfig arch = ArchConfig::from_json(header.at("arch"));
  PlayerSet p = init_players(arch, header.at("n_envs").get<std::size_t>(), 0);
  auto params = p.all_params();
  const auto& table = header.at("params");
  require(table.size() == params.size(), ErrorCode::kFormat,
          "checkpoint lists " + std::to_string(table.size()) + " parameters, architecture has " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto id = table[i].at(0).get<std::string>();
    const auto rows = table[i].at(1).get<std::size_t>();
    const auto cols = table[i].at(2).get<std::size_t>();
    require(id == params[i]->id && rows == params[i]->value.rows() && cols == params[i]->value.cols(),
            ErrorCode::kFormat, "checkpoint parameter " + id + " does not match the architecture");
  }
  for (auto* q : params)
    for (double& v : q->value.values()) v = get_f64(in);
  return p;
}

PlayerSet load_players(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  return load_players(in);
}

}  // namespace rgm::model
