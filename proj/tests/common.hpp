#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <vector>

#include "rgm/environments.hpp"
#include "rgm/error.hpp"
#include "rgm/models.hpp"
#include "rgm/objectives.hpp"
#include "rgm/trainer.hpp"

namespace rgm::fixture {

// Small clustered descriptor problem: two environments, every example tagged.
inline env::EnvironmentSet toy_descriptor_envs(std::uint64_t seed, std::size_t n = 48) {
  env::DescriptorConfig c;
  c.n_examples = n;
  c.n_descriptors = n / 3;
  c.n_validation = 16;
  c.n_test = 16;
  c.dim_causal = 2;
  c.dim_spurious = 16;
  c.seed = seed;
  return env::cluster_envs(env::gen_descriptor_envs(c));
}

inline model::ArchConfig toy_arch(const env::EnvironmentSet& envs) {
  model::ArchConfig a;
  a.input_dim = envs.dim();
  a.num_outputs = 2;
  a.phi_hidden = {5};
  a.rep_width = 4;
  a.g_hidden = 6;
  a.embedding_width = 3;
  return a;
}

inline env::MiniBatches toy_batches(const env::EnvironmentSet& envs, std::uint64_t seed, std::size_t batch = 8) {
  std::mt19937_64 rng(seed);
  return env::sample_minibatches(envs.train, {batch, false}, rng);
}

inline std::vector<Matrix> grads_of(std::span<ad::Parameter* const> params) {
  std::vector<Matrix> out;
  for (auto* p : params) out.push_back(p->grad);
  return out;
}

inline std::vector<Matrix> values_of(const std::vector<ad::Parameter*>& params) {
  std::vector<Matrix> out;
  for (auto* p : params) out.push_back(p->value);
  return out;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace rgm::fixture
