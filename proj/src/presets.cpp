#include "rgm/presets.hpp"

#include "rgm/error.hpp"
#include "rgm/propositions.hpp"

namespace rgm::presets {

env::TranslationConfig fig2_translation(std::uint64_t seed) {
  env::TranslationConfig c;
  c.train_translations = {0.0, 3.0};
  c.test_translation = 6.0;
  c.label_noise = 0.05;
  c.n_per_env = 2000;
  c.shared_base = true;
  c.seed = seed;
  return c;
}

namespace {

train::TrainConfig base_train(obj::Method method) {
  train::TrainConfig t;
  t.method = method;
  t.steps = 3000;
  t.batch_size = 64;
  t.lr = 0.1;
  t.lr_end = 0.01;
  t.eval_every = 100;
  return t;
}

exp::MethodSpec method(const std::string& label, train::TrainConfig t, std::vector<double> lambdas = {},
                       std::vector<double> lambda_gs = {}) {
  return {label, std::move(t), std::move(lambdas), std::move(lambda_gs)};
}

}  // namespace

exp::ExperimentConfig translation_reference() {
  exp::ExperimentConfig c;
  c.generator.kind = "translation";
  env::TranslationConfig g = fig2_translation(0);
  g.shared_base = false;
  g.coupling = 0.0;
  g.spurious_shift = 1.0;
  g.label_noise = 0.15;
  c.generator.params = g.to_json();
  c.generator.params.erase("seed");
  train::TrainConfig t = base_train(obj::Method::kErm);
  t.arch.phi_hidden = {};
  c.methods.push_back(method("erm", t));
  t.method = obj::Method::kRgm;
  c.methods.push_back(method("rgm", t, {0.01, 0.1}));
  c.seeds = {0, 1, 2, 3, 4};
  return c;
}

exp::ExperimentConfig descriptor_reference() {
  exp::ExperimentConfig c;
  c.generator.kind = "descriptor";
  c.generator.params = env::DescriptorConfig{}.to_json();
  c.generator.params.erase("seed");
  c.generator.cluster = true;
  train::TrainConfig t = base_train(obj::Method::kErm);
  c.methods.push_back(method("erm", t));
  t.method = obj::Method::kRgm;
  c.methods.push_back(method("rgm", t, {0.01, 0.1}));
  t.method = obj::Method::kSrgm;
  t.alpha = 1.0;
  c.methods.push_back(method("srgm", t, {0.01, 0.1}, {0.1, 1.0}));
  t.method = obj::Method::kCrossGrad;
  c.methods.push_back(method("crossgrad", t, {}, {0.1, 1.0}));
  c.seeds = {0, 1, 2, 3, 4};
  return c;
}

exp::ExperimentConfig ablation_reference() {
  exp::ExperimentConfig c = descriptor_reference();
  c.methods.clear();
  train::TrainConfig t = base_train(obj::Method::kSrgm);
  t.alpha = 1.0;
  c.methods.push_back(method("srgm", t, {0.01, 0.1}, {0.1, 1.0}));
  t.detach_phi_from_g = true;
  c.methods.push_back(method("srgm_detach", t, {0.01, 0.1}, {0.1, 1.0}));
  t.detach_phi_from_g = false;
  t.arch.g_linear = true;
  c.methods.push_back(method("srgm_linear_g", t, {0.01, 0.1}, {0.1, 1.0}));
  return c;
}

exp::ExperimentConfig experiment(const std::string& name) {
  if (name == "translation") return translation_reference();
  if (name == "descriptor") return descriptor_reference();
  if (name == "ablation") return ablation_reference();
  fail(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
}

nlohmann::json check_propositions(std::uint64_t seed) {
  nlohmann::json out;
  // Fig. 2 construction: identity and X2-projection representations.
  const auto envs = env::gen_translation_envs(fig2_translation(seed));
  props::ConstraintConfig cc;
  cc.seed = seed;
  out["identity_phi"] = props::check_constraints(Matrix::identity(2), envs.train, cc).to_json();
  out["x2_phi"] = props::check_constraints(Matrix{{0.0}, {1.0}}, envs.train, cc).to_json();
  // Same check with independent draws per environment: the invariant
  // representation then carries a finite-sample gap of order 1 / n.
  auto independent = fig2_translation(seed);
  independent.shared_base = false;
  const auto ienvs = env::gen_translation_envs(independent);
  out["x2_phi_independent_draws"] = props::check_constraints(Matrix{{0.0}, {1.0}}, ienvs.train, cc).to_json();

  // Bayes predictor on environment-inferable discrete instances.
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto inst = props::random_env_inferable_instance(100, 2, 2, rng);
    std::vector<int> phi(inst.n_x());
    for (std::size_t x = 0; x < phi.size(); ++x) phi[x] = static_cast<int>(x);
    const auto r = props::brute_force_bayes(inst, phi, inst.n_x());
    for (double g : r.gap) worst = std::max(worst, std::abs(g));
  }
  out["bayes_identity_phi"] = {{"instances", 10}, {"max_abs_gap", worst}};
  return out;
}

}  // namespace rgm::presets
