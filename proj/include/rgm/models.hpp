#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rgm/autodiff.hpp"
#include "rgm/environments.hpp"

namespace rgm::model {

enum class Activation { kIdentity, kTanh, kRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Layer widths from input to output; hidden layers use `hidden`, the last
/// layer `output`.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation hidden = Activation::kTanh;
  Activation output = Activation::kIdentity;

  std::size_t in() const { return widths.front(); }
  std::size_t out() const { return widths.back(); }
  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;

  nlohmann::json to_json() const;
  static MlpSpec from_json(const nlohmann::json& j);
};

/// Fully connected network. Parameters are named "<name>.W<i>" / "<name>.b<i>".
class Mlp {
 public:
  Mlp() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.
  Mlp(std::string name, MlpSpec spec, std::mt19937_64& rng);

  const std::string& name() const { return name_; }
  const MlpSpec& spec() const { return spec_; }

  ad::Var forward(ad::Tape& tape, ad::Var x, ad::Binding binding = ad::Binding::kTrainable);
  /// Tape-free forward for evaluation.
  Matrix forward(const Matrix& x) const;

  std::vector<ad::Parameter*> params();
  std::vector<const ad::Parameter*> params() const;
  std::size_t num_layers() const { return weights_.size(); }
  ad::Parameter& weight(std::size_t layer) { return weights_.at(layer); }
  ad::Parameter& bias(std::size_t layer) { return biases_.at(layer); }

  /// Same values under a different name (f~_e starts as a copy of f_e).
  Mlp renamed(const std::string& name) const;

 private:
  std::string name_;
  MlpSpec spec_;
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
};

enum class Role { kMain, kOracle, kHeldOut, kPerturbedOracle };

std::string to_string(Role r);

struct Predictor {
  Role role = Role::kMain;
  int env = -1;  // environment index for auxiliary roles
  Mlp net;
};

/// Architecture of every player in a run.
struct ArchConfig {
  std::size_t input_dim = 2;
  std::size_t num_outputs = 2;  // classes, or 1 for regression
  std::vector<std::size_t> phi_hidden{64};
  std::size_t rep_width = 16;
  Activation phi_activation = Activation::kTanh;
  Activation phi_output = Activation::kTanh;
  /// Hidden widths of the predictor family; empty means a linear head.
  std::vector<std::size_t> head_hidden;
  bool g_linear = false;
  std::size_t g_hidden = 64;
  std::size_t embedding_width = 16;

  MlpSpec phi_spec() const;
  MlpSpec head_spec() const;
  MlpSpec g_spec() const;
  MlpSpec encoder_spec() const;

  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

/// A named group of parameters updated (and clipped) together.
struct PlayerRef {
  std::string name;
  std::vector<ad::Parameter*> params;
};

struct PlayerSet {
  ArchConfig arch;
  Mlp phi;
  Predictor f;
  Mlp g;
  Mlp encoder;  // descriptor code -> embedding
  std::vector<Predictor> oracle;     // f_e
  std::vector<Predictor> heldout;    // f_{-e}
  std::vector<Predictor> perturbed;  // f~_e

  std::size_t n_envs() const { return oracle.size(); }
  std::vector<PlayerRef> players();
  std::vector<ad::Parameter*> all_params();
  std::vector<const ad::Parameter*> all_params() const;
  /// Throws unless every predictor uses the same architecture and the
  /// auxiliary arrays have one entry per environment.
  void check_family() const;
};

PlayerSet init_players(const ArchConfig& arch, std::size_t n_envs, std::uint64_t seed);

/// Seed of a player's private stream, derived from the run seed and its name.
std::uint64_t player_seed(std::uint64_t seed, const std::string& name);

ad::Var extract_features(ad::Tape& tape, Mlp& phi, const Matrix& x, ad::Binding binding = ad::Binding::kTrainable);
ad::Var predict(ad::Tape& tape, Predictor& p, ad::Var z, ad::Binding binding = ad::Binding::kTrainable);

/// Descriptor codes as +-1 rows.
Matrix descriptor_matrix(std::span<const env::Descriptor> descriptors);

/// Order-independent digest of a set of parameters, for disjointness checks.
std::uint64_t hash_params(std::span<const ad::Parameter* const> params);

}  // namespace rgm::model
