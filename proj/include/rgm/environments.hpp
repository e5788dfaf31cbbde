#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rgm/matrix.hpp"

namespace rgm::env {

inline constexpr std::size_t kCodeBits = 16;

/// Structured environment id: a fixed-width bit code. Two descriptors are the
/// same environment exactly when their codes match.
struct Descriptor {
  std::uint16_t code = 0;

  std::uint32_t key() const noexcept { return code; }
  bool bit(std::size_t i) const noexcept { return (code >> i) & 1u; }
  /// Bits as +-1 values, least significant first.
  std::array<double, kCodeBits> signed_bits() const noexcept;
  std::string hex() const;
  static Descriptor from_hex(const std::string& text);

  friend bool operator==(Descriptor, Descriptor) = default;
  friend auto operator<=>(Descriptor, Descriptor) = default;
};

enum class Task { kClassification, kRegression };

struct Example {
  std::vector<double> x;
  double y = 0.0;  // class index for classification
  std::optional<Descriptor> descriptor;

  int label() const noexcept { return static_cast<int>(y); }
};

struct Environment {
  int id = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  std::size_t dim() const noexcept { return examples.empty() ? 0 : examples.front().x.size(); }
  bool has_descriptors() const noexcept;
};

struct GeneratorInfo {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

struct EnvironmentSet {
  Task task = Task::kClassification;
  int num_classes = 2;
  std::vector<Environment> train;
  Environment validation;
  Environment test;
  GeneratorInfo info;

  std::size_t dim() const noexcept;
  std::size_t train_size() const noexcept;
  /// Throws if an environment is empty, dimensions disagree, features are
  /// non-finite, or a label falls outside [0, num_classes).
  void validate() const;
};

// ---------------------------------------------------------------------------
// Generators. Both are pure functions of (config, seed).

/// Two-feature construction x = (X1, X2) with y = 1[X2 > 0] (then flipped
/// with probability label_noise). X1 = base + translation of the environment
/// + spurious_shift * (2y - 1), where base = coupling * X2 +
/// sqrt(1 - coupling^2) * eps has unit variance.
struct TranslationConfig {
  std::vector<double> train_translations{0.0, 3.0};
  double test_translation = 6.0;
  /// Defaults to the midpoint of the largest train translation and the test one.
  std::optional<double> validation_translation;
  std::size_t n_per_env = 2000;
  double label_noise = 0.05;
  double coupling = 1.0;
  double spurious_shift = 0.0;
  /// Training environments reuse one base sample and differ only by the
  /// translation; validation and test keep their own draws.
  bool shared_base = false;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TranslationConfig from_json(const nlohmann::json& j);
};

EnvironmentSet gen_translation_envs(const TranslationConfig& config);

/// Descriptor-defined environments: one training environment per descriptor,
/// most of them singletons. See environments.cpp for the sampling scheme.
struct DescriptorConfig {
  std::size_t n_descriptors = 800;
  double singleton_fraction = 0.75;
  double spurious_strength = 0.9;
  std::size_t dim_causal = 4;
  std::size_t dim_spurious = 16;
  std::size_t n_examples = 2000;
  std::size_t n_validation = 1000;
  std::size_t n_test = 2000;
  /// Class separation of the causal block (mean offset along a unit direction).
  double causal_strength = 0.8;
  /// Spurious strength of the rare half of the descriptors relative to the frequent half.
  double rare_strength_scale = 0.5;
  /// Spurious strength of the validation split relative to training.
  double validation_strength_scale = 0.5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DescriptorConfig from_json(const nlohmann::json& j);
};

EnvironmentSet gen_descriptor_envs(const DescriptorConfig& config);

/// Realized fraction of descriptors with exactly one training example.
double singleton_fraction(const EnvironmentSet& envs);

// ---------------------------------------------------------------------------

/// Sorts training environments by size (largest first, ties by id) and merges
/// the first half into E0 and the rest into E1. Examples keep descriptors.
EnvironmentSet cluster_envs(const EnvironmentSet& envs);

struct Batch {
  int env_id = 0;
  Matrix x;
  std::vector<int> labels;
  std::vector<double> targets;
  std::vector<Descriptor> descriptors;  // empty when the data has none

  std::size_t size() const noexcept { return x.rows(); }
  bool has_descriptors() const noexcept { return !descriptors.empty(); }
};

Batch make_batch(const Environment& env, std::span<const std::size_t> indices);
Batch make_batch(const Environment& env);
Batch concat_batches(std::span<const Batch> parts);

struct MiniBatches {
  std::vector<Batch> per_env;     // B_e
  std::vector<Batch> complement;  // B_{-e}: union of the other batches, in env order
};

struct SamplerOptions {
  std::size_t batch_size = 32;
  /// Allows batches larger than an environment.
  bool with_replacement = false;
};

MiniBatches sample_minibatches(std::span<const Environment> envs, const SamplerOptions& options,
                               std::mt19937_64& rng);

}  // namespace rgm::env
