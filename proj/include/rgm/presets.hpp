#pragma once

#include <string>

#include "json.hpp"
#include "rgm/environments.hpp"
#include "rgm/experiment.hpp"

// Reference configurations shared by the CLI and the acceptance suite.
namespace rgm::presets {

/// The two-environment translation construction: train translations {0, 3},
/// test 6, label noise 0.05, 2000 examples per environment.
env::TranslationConfig fig2_translation(std::uint64_t seed);

/// ERM vs RGM on the translation synthetic with a spurious shift in X1.
exp::ExperimentConfig translation_reference();
/// ERM, RGM, SRGM and CrossGrad on the clustered descriptor synthetic.
exp::ExperimentConfig descriptor_reference();
/// SRGM vs SRGM-detach vs linear-g on the clustered descriptor synthetic.
exp::ExperimentConfig ablation_reference();

/// Looks up one of "translation", "descriptor", "ablation".
exp::ExperimentConfig experiment(const std::string& name);

/// Runs the proposition checks at desk size and returns their results.
nlohmann::json check_propositions(std::uint64_t seed);

}  // namespace rgm::presets
