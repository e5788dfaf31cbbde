#include "rgm/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "rgm/error.hpp"
#include "rgm/kernels.hpp"

namespace rgm::model {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  fail(ErrorCode::kInvalidArgument, "unknown activation '" + s + "'");
}

std::string to_string(Role r) {
  switch (r) {
    case Role::kMain: return "main";
    case Role::kOracle: return "oracle";
    case Role::kHeldOut: return "heldout";
    case Role::kPerturbedOracle: return "perturbed_oracle";
  }
  return "?";
}

nlohmann::json MlpSpec::to_json() const {
  return {{"widths", widths}, {"hidden", to_string(hidden)}, {"output", to_string(output)}};
}

MlpSpec MlpSpec::from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.hidden = activation_from_string(j.at("hidden").get<std::string>());
  s.output = activation_from_string(j.at("output").get<std::string>());
  return s;
}

namespace {

ad::Var activate(ad::Tape& tape, ad::Var v, Activation a) {
  switch (a) {
    case Activation::kIdentity: return v;
    case Activation::kTanh: return tape.tanh(v);
    case Activation::kRelu: return tape.relu(v);
  }
  return v;
}

void activate(Matrix& m, Activation a) {
  for (double& v : m.values()) {
    if (a == Activation::kTanh) v = std::tanh(v);
    else if (a == Activation::kRelu) v = v > 0.0 ? v : 0.0;
  }
}

}  // namespace

Mlp::Mlp(std::string name, MlpSpec spec, std::mt19937_64& rng) : name_(std::move(name)), spec_(std::move(spec)) {
  require(spec_.widths.size() >= 2, ErrorCode::kInvalidArgument, name_ + ": an MLP needs input and output widths");
  for (std::size_t w : spec_.widths)
    require(w > 0, ErrorCode::kInvalidArgument, name_ + ": zero-width layer");
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const std::size_t fan_in = spec_.widths[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> init(-bound, bound);
    Matrix w(fan_in, spec_.widths[l + 1]);
    Matrix b(1, spec_.widths[l + 1]);
    for (double& v : w.values()) v = init(rng);
    for (double& v : b.values()) v = init(rng);
    weights_.emplace_back(name_ + ".W" + std::to_string(l), std::move(w));
    biases_.emplace_back(name_ + ".b" + std::to_string(l), std::move(b));
  }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x, ad::Binding binding) {
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = tape.affine(h, tape.parameter(weights_[l], binding), tape.parameter(biases_[l], binding));
    h = activate(tape, h, l + 1 == weights_.size() ? spec_.output : spec_.hidden);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x) const {
  require(x.cols() == spec_.in(), ErrorCode::kShapeMismatch,
          name_ + ": input " + x.shape_string() + " for input width " + std::to_string(spec_.in()));
  Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = kernels::matmul(h, weights_[l].value);
    kernels::add_row_bias(h, biases_[l].value);
    activate(h, l + 1 == weights_.size() ? spec_.output : spec_.hidden);
  }
  return h;
}

std::vector<ad::Parameter*> Mlp::params() {
  std::vector<ad::Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::params() const {
  std::vector<const ad::Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

Mlp Mlp::renamed(const std::string& name) const {
  Mlp m = *this;
  m.name_ = name;
  for (std::size_t l = 0; l < m.weights_.size(); ++l) {
    m.weights_[l].id = name + ".W" + std::to_string(l);
    m.biases_[l].id = name + ".b" + std::to_string(l);
  }
  return m;
}

// ---------------------------------------------------------------------------

MlpSpec ArchConfig::phi_spec() const {
  MlpSpec s;
  s.widths.push_back(input_dim);
  s.widths.insert(s.widths.end(), phi_hidden.begin(), phi_hidden.end());
  s.widths.push_back(rep_width);
  s.hidden = phi_activation;
  s.output = phi_output;
  return s;
}

MlpSpec ArchConfig::head_spec() const {
  MlpSpec s;
  s.widths.push_back(rep_width);
  s.widths.insert(s.widths.end(), head_hidden.begin(), head_hidden.end());
  s.widths.push_back(num_outputs);
  s.hidden = Activation::kRelu;
  return s;
}

MlpSpec ArchConfig::g_spec() const {
  MlpSpec s;
  s.widths.push_back(rep_width);
  if (!g_linear) s.widths.push_back(g_hidden);
  s.widths.push_back(embedding_width);
  s.hidden = Activation::kRelu;
  return s;
}

MlpSpec ArchConfig::encoder_spec() const {
  MlpSpec s;
  s.widths = {env::kCodeBits, embedding_width};
  return s;
}

nlohmann::json ArchConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"num_outputs", num_outputs},
          {"phi_hidden", phi_hidden},
          {"rep_width", rep_width},
          {"phi_activation", to_string(phi_activation)},
          {"phi_output", to_string(phi_output)},
          {"head_hidden", head_hidden},
          {"g_linear", g_linear},
          {"g_hidden", g_hidden},
          {"embedding_width", embedding_width}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.input_dim = j.value("input_dim", a.input_dim);
  a.num_outputs = j.value("num_outputs", a.num_outputs);
  a.phi_hidden = j.value("phi_hidden", a.phi_hidden);
  a.rep_width = j.value("rep_width", a.rep_width);
  a.phi_activation = activation_from_string(j.value("phi_activation", to_string(a.phi_activation)));
  a.phi_output = activation_from_string(j.value("phi_output", to_string(a.phi_output)));
  a.head_hidden = j.value("head_hidden", a.head_hidden);
  a.g_linear = j.value("g_linear", a.g_linear);
  a.g_hidden = j.value("g_hidden", a.g_hidden);
  a.embedding_width = j.value("embedding_width", a.embedding_width);
  return a;
}

std::uint64_t player_seed(std::uint64_t seed, const std::string& name) {
  // FNV-1a over the name, mixed with the run seed.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h ^ (seed * 0x9e3779b97f4a7c15ull);
}

namespace {

Mlp make_net(const std::string& name, const MlpSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(player_seed(seed, name));
  return Mlp(name, spec, rng);
}

}  // namespace

PlayerSet init_players(const ArchConfig& arch, std::size_t n_envs, std::uint64_t seed) {
  require(n_envs >= 1, ErrorCode::kInvalidArgument, "init_players: need at least one environment");
  PlayerSet p;
  p.arch = arch;
  p.phi = make_net("phi", arch.phi_spec(), seed);
  const MlpSpec head = arch.head_spec();
  p.f = {Role::kMain, -1, make_net("f", head, seed)};
  p.g = make_net("g", arch.g_spec(), seed);
  p.encoder = make_net("enc", arch.encoder_spec(), seed);
  for (std::size_t e = 0; e < n_envs; ++e) {
    const int id = static_cast<int>(e);
    const std::string tag = std::to_string(e);
    p.oracle.push_back({Role::kOracle, id, make_net("f_e" + tag, head, seed)});
    p.heldout.push_back({Role::kHeldOut, id, make_net("f_-e" + tag, head, seed)});
    p.perturbed.push_back({Role::kPerturbedOracle, id, p.oracle.back().net.renamed("f~_e" + tag)});
  }
  p.check_family();
  return p;
}

std::vector<PlayerRef> PlayerSet::players() {
  std::vector<PlayerRef> out;
  out.push_back({phi.name(), phi.params()});
  out.push_back({f.net.name(), f.net.params()});
  out.push_back({g.name(), g.params()});
  out.push_back({encoder.name(), encoder.params()});
  for (auto* group : {&oracle, &heldout, &perturbed})
    for (auto& pr : *group) out.push_back({pr.net.name(), pr.net.params()});
  return out;
}

std::vector<ad::Parameter*> PlayerSet::all_params() {
  std::vector<ad::Parameter*> out;
  for (auto& pl : players()) out.insert(out.end(), pl.params.begin(), pl.params.end());
  return out;
}

std::vector<const ad::Parameter*> PlayerSet::all_params() const {
  std::vector<const ad::Parameter*> out;
  auto add = [&](const Mlp& m) {
    const auto ps = m.params();
    out.insert(out.end(), ps.begin(), ps.end());
  };
  add(phi);
  add(f.net);
  add(g);
  add(encoder);
  for (const auto* group : {&oracle, &heldout, &perturbed})
    for (const auto& pr : *group) add(pr.net);
  return out;
}

void PlayerSet::check_family() const {
  const MlpSpec& family = f.net.spec();
  require(oracle.size() == heldout.size() && oracle.size() == perturbed.size(), ErrorCode::kInvalidArgument,
          "auxiliary predictor arrays differ in length");
  auto check = [&](const Predictor& p, Role role, std::size_t e) {
    require(p.role == role && p.env == static_cast<int>(e), ErrorCode::kInvalidArgument,
            p.net.name() + ": role tag " + to_string(p.role) + " in the " + to_string(role) + " slot");
    require(p.net.spec() == family, ErrorCode::kInvalidArgument,
            p.net.name() + ": predictor family differs from f");
  };
  require(f.role == Role::kMain, ErrorCode::kInvalidArgument, "f must carry the main role");
  for (std::size_t e = 0; e < oracle.size(); ++e) {
    check(oracle[e], Role::kOracle, e);
    check(heldout[e], Role::kHeldOut, e);
    check(perturbed[e], Role::kPerturbedOracle, e);
  }
  require(phi.spec().out() == family.in(), ErrorCode::kShapeMismatch,
          "representation width " + std::to_string(phi.spec().out()) + " vs predictor input " +
              std::to_string(family.in()));
}

ad::Var extract_features(ad::Tape& tape, Mlp& phi, const Matrix& x, ad::Binding binding) {
  require(x.cols() == phi.spec().in(), ErrorCode::kShapeMismatch,
          "extract_features: input " + x.shape_string() + " for width " + std::to_string(phi.spec().in()));
  return phi.forward(tape, tape.constant(x), binding);
}

ad::Var predict(ad::Tape& tape, Predictor& p, ad::Var z, ad::Binding binding) {
  return p.net.forward(tape, z, binding);
}

Matrix descriptor_matrix(std::span<const env::Descriptor> descriptors) {
  Matrix m(descriptors.size(), env::kCodeBits);
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    const auto bits = descriptors[i].signed_bits();
    std::copy(bits.begin(), bits.end(), m.row(i).begin());
  }
  return m;
}

std::uint64_t hash_params(std::span<const ad::Parameter* const> params) {
  std::uint64_t total = 0;
  for (const auto* p : params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    for (char c : p->id) mix(static_cast<unsigned char>(c));
    for (double v : p->value.values()) mix(std::bit_cast<std::uint64_t>(v));
    total += h;  // order independent
  }
  return total;
}

}  // namespace rgm::model
