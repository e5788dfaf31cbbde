#pragma once

#include <iosfwd>
#include <string>

#include "rgm/models.hpp"

// Checkpoint layout: the line "RGMCKPT1", one line of JSON holding the
// architecture, environment count and the parameter table (id, rows, cols),
// then every parameter's values as little-endian f64 in table order.
namespace rgm::model {

void save_players(const PlayerSet& players, std::ostream& out);
void save_players(const PlayerSet& players, const std::string& path);
PlayerSet load_players(std::istream& in);
PlayerSet load_players(const std::string& path);

}  // namespace rgm::model
