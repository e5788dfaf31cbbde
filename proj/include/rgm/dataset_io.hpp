#pragma once

#include <iosfwd>
#include <string>

#include "rgm/environments.hpp"

// Line-delimited dataset format.
//
//   # rgm-dataset v1
//   # task classification classes 2 dim 20
//   # generator {"name":...,"seed":...,"config":{...}}
//   <env> <label> <descriptor> <x_1> ... <x_dim>
//
// <env> is a training environment id or one of "val" / "test"; <descriptor>
// is a hex code or "-" when the example has none. Numbers are written with
// 17 significant digits, so a write/read round trip is exact.
namespace rgm::env {

void write_dataset(const EnvironmentSet& envs, std::ostream& out);
void write_dataset(const EnvironmentSet& envs, const std::string& path);
EnvironmentSet read_dataset(std::istream& in);
EnvironmentSet read_dataset(const std::string& path);

}  // namespace rgm::env
