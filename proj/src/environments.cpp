#include "rgm/environments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "rgm/error.hpp"

namespace rgm::env {

namespace {

// Independent, reproducible random streams for the parts of a generator.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint64_t {
  kLabels = 1,
  kFeatures = 2,
  kNoise = 3,
  kCounts = 4,
  kCodes = 5,
  kAssignment = 6,
  kProjection = 7,
  kHeldOut = 8,
};

}  // namespace

std::array<double, kCodeBits> Descriptor::signed_bits() const noexcept {
  std::array<double, kCodeBits> out{};
  for (std::size_t i = 0; i < kCodeBits; ++i) out[i] = bit(i) ? 1.0 : -1.0;
  return out;
}

std::string Descriptor::hex() const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%04x", static_cast<unsigned>(code));
  return buf;
}

Descriptor Descriptor::from_hex(const std::string& text) {
  require(!text.empty() && text.size() <= 4 &&
              std::all_of(text.begin(), text.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); }),
          ErrorCode::kFormat, "bad descriptor code '" + text + "'");
  return Descriptor{static_cast<std::uint16_t>(std::stoul(text, nullptr, 16))};
}

bool Environment::has_descriptors() const noexcept {
  return !examples.empty() &&
         std::all_of(examples.begin(), examples.end(), [](const Example& e) { return e.descriptor.has_value(); });
}

std::size_t EnvironmentSet::dim() const noexcept {
  for (const auto& e : train)
    if (e.size() > 0) return e.dim();
  return validation.dim();
}

std::size_t EnvironmentSet::train_size() const noexcept {
  std::size_t n = 0;
  for (const auto& e : train) n += e.size();
  return n;
}

void EnvironmentSet::validate() const {
  require(!train.empty(), ErrorCode::kInvalidArgument, "environment set has no training environments");
  const std::size_t d = dim();
  auto check = [&](const Environment& e, const std::string& what) {
    require(e.size() > 0, ErrorCode::kInvalidArgument, what + " environment " + std::to_string(e.id) + " is empty");
    for (const auto& ex : e.examples) {
      require(ex.x.size() == d, ErrorCode::kShapeMismatch,
              what + " environment " + std::to_string(e.id) + ": example of dimension " +
                  std::to_string(ex.x.size()) + ", expected " + std::to_string(d));
      for (double v : ex.x)
        require(std::isfinite(v), ErrorCode::kNonFinite, what + " environment has non-finite features");
      if (task == Task::kClassification) {
        require(ex.y >= 0 && ex.y < num_classes && ex.y == std::floor(ex.y), ErrorCode::kInvalidArgument,
                what + " label " + std::to_string(ex.y) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  };
  for (const auto& e : train) check(e, "train");
  check(validation, "validation");
  check(test, "test");
}

// ---------------------------------------------------------------------------

nlohmann::json TranslationConfig::to_json() const {
  nlohmann::json j = {{"train_translations", train_translations},
                      {"test_translation", test_translation},
                      {"n_per_env", n_per_env},
                      {"label_noise", label_noise},
                      {"coupling", coupling},
                      {"spurious_shift", spurious_shift},
                      {"shared_base", shared_base},
                      {"seed", seed}};
  if (validation_translation) j["validation_translation"] = *validation_translation;
  return j;
}

TranslationConfig TranslationConfig::from_json(const nlohmann::json& j) {
  TranslationConfig c;
  c.train_translations = j.value("train_translations", c.train_translations);
  c.test_translation = j.value("test_translation", c.test_translation);
  if (j.contains("validation_translation")) c.validation_translation = j.at("validation_translation").get<double>();
  c.n_per_env = j.value("n_per_env", c.n_per_env);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.coupling = j.value("coupling", c.coupling);
  c.spurious_shift = j.value("spurious_shift", c.spurious_shift);
  c.shared_base = j.value("shared_base", c.shared_base);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

Environment translation_env(int id, double translation, const TranslationConfig& c, std::uint64_t salt) {
  auto rng = stream(c.seed, (salt << 8) | kFeatures);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double residual = std::sqrt(std::max(0.0, 1.0 - c.coupling * c.coupling));
  Environment env{id, {}};
  env.examples.reserve(c.n_per_env);
  for (std::size_t i = 0; i < c.n_per_env; ++i) {
    const double x2 = normal(rng);
    const double eps = normal(rng);
    const bool flip = unit(rng) < c.label_noise;
    const int clean = x2 > 0.0 ? 1 : 0;
    const int y = flip ? 1 - clean : clean;
    const double x1 = c.coupling * x2 + residual * eps + translation + c.spurious_shift * (2.0 * y - 1.0);
    env.examples.push_back({{x1, x2}, static_cast<double>(y), std::nullopt});
  }
  return env;
}

}  // namespace

EnvironmentSet gen_translation_envs(const TranslationConfig& c) {
  require(c.train_translations.size() >= 2, ErrorCode::kInvalidArgument,
          "translation generator needs at least two training environments");
  require(c.label_noise >= 0.0 && c.label_noise < 0.5, ErrorCode::kInvalidArgument,
          "label_noise must lie in [0, 0.5)");
  require(c.coupling >= 0.0 && c.coupling <= 1.0, ErrorCode::kInvalidArgument, "coupling must lie in [0, 1]");
  require(c.n_per_env > 0, ErrorCode::kInvalidArgument, "n_per_env must be positive");
  for (double t : c.train_translations) {
    require(t != c.test_translation, ErrorCode::kInvalidArgument,
            "test translation " + std::to_string(c.test_translation) + " equals a training translation (no shift)");
  }
  const double val_t = c.validation_translation.value_or(
      0.5 * (*std::max_element(c.train_translations.begin(), c.train_translations.end()) + c.test_translation));

  EnvironmentSet set;
  set.task = Task::kClassification;
  set.num_classes = 2;
  for (std::size_t e = 0; e < c.train_translations.size(); ++e)
    set.train.push_back(
        translation_env(static_cast<int>(e), c.train_translations[e], c, c.shared_base ? 1 : e + 1));
  set.validation = translation_env(-1, val_t, c, 1000);
  set.test = translation_env(-2, c.test_translation, c, 2000);
  set.info = {"translation", c.seed, c.to_json()};
  return set;
}

// ---------------------------------------------------------------------------

nlohmann::json DescriptorConfig::to_json() const {
  return {{"n_descriptors", n_descriptors},
          {"singleton_fraction", singleton_fraction},
          {"spurious_strength", spurious_strength},
          {"dim_causal", dim_causal},
          {"dim_spurious", dim_spurious},
          {"n_examples", n_examples},
          {"n_validation", n_validation},
          {"n_test", n_test},
          {"causal_strength", causal_strength},
          {"rare_strength_scale", rare_strength_scale},
          {"validation_strength_scale", validation_strength_scale},
          {"seed", seed}};
}

DescriptorConfig DescriptorConfig::from_json(const nlohmann::json& j) {
  DescriptorConfig c;
  c.n_descriptors = j.value("n_descriptors", c.n_descriptors);
  c.singleton_fraction = j.value("singleton_fraction", c.singleton_fraction);
  c.spurious_strength = j.value("spurious_strength", c.spurious_strength);
  c.dim_causal = j.value("dim_causal", c.dim_causal);
  c.dim_spurious = j.value("dim_spurious", c.dim_spurious);
  c.n_examples = j.value("n_examples", c.n_examples);
  c.n_validation = j.value("n_validation", c.n_validation);
  c.n_test = j.value("n_test", c.n_test);
  c.causal_strength = j.value("causal_strength", c.causal_strength);
  c.rare_strength_scale = j.value("rare_strength_scale", c.rare_strength_scale);
  c.validation_strength_scale = j.value("validation_strength_scale", c.validation_strength_scale);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

// Per-descriptor example counts: round(singleton_fraction * D) singletons, the
// remaining descriptors share the rest with a heavy-tailed size profile and at
// least two examples each. Multi-example descriptors come first.
std::vector<std::size_t> descriptor_counts(const DescriptorConfig& c) {
  const std::size_t d = c.n_descriptors;
  const std::size_t singles = static_cast<std::size_t>(std::llround(c.singleton_fraction * static_cast<double>(d)));
  const std::size_t multi = d - singles;
  const std::size_t rest = c.n_examples - singles;
  const bool feasible = multi == 0 ? rest == 0 : rest >= 2 * multi;
  require(feasible, ErrorCode::kInvalidArgument,
          "singleton_fraction " + std::to_string(c.singleton_fraction) + " is infeasible for " +
              std::to_string(d) + " descriptors over " + std::to_string(c.n_examples) + " examples");

  std::vector<std::size_t> counts(multi, 2);
  if (multi > 0) {
    auto rng = stream(c.seed, kCounts);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> w(multi);
    for (double& v : w) v = 1.0 / (1.0 - unit(rng) * 0.999);  // Pareto(1), capped
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    const std::size_t extra = rest - 2 * multi;
    std::size_t placed = 0;
    for (std::size_t i = 0; i < multi; ++i) {
      const auto add = static_cast<std::size_t>(std::floor(w[i] / total * static_cast<double>(extra)));
      counts[i] += add;
      placed += add;
    }
    std::uniform_int_distribution<std::size_t> pick(0, multi - 1);
    for (; placed < extra; ++placed) ++counts[pick(rng)];
    std::stable_sort(counts.begin(), counts.end(), std::greater<>());
  }
  counts.insert(counts.end(), singles, 1);
  return counts;
}

std::vector<double> spurious_features(Descriptor s, const Matrix& projection) {
  const auto bits = s.signed_bits();
  std::vector<double> out(bits.begin(), bits.end());
  for (std::size_t r = 0; r < projection.rows(); ++r) {
    double v = 0.0;
    for (std::size_t k = 0; k < kCodeBits; ++k) v += projection(r, k) * bits[k];
    out.push_back(v);
  }
  return out;
}

std::vector<double> causal_features(int y, const DescriptorConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double offset = c.causal_strength * (2.0 * y - 1.0) / std::sqrt(static_cast<double>(c.dim_causal));
  std::vector<double> x(c.dim_causal);
  for (double& v : x) v = offset + normal(rng);
  return x;
}

// Fresh descriptors for held-out splits: unused codes whose affinity bit (bit
// 0) agrees with the label with probability (1 + strength) / 2.
Environment heldout_split(int id, std::size_t n, double strength, const DescriptorConfig& c,
                          const Matrix& projection, std::set<std::uint16_t>& used, std::uint64_t salt) {
  auto labels = stream(c.seed, (salt << 8) | kLabels);
  auto feats = stream(c.seed, (salt << 8) | kFeatures);
  auto codes = stream(c.seed, (salt << 8) | kCodes);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution agree((1.0 + strength) / 2.0);
  std::uniform_int_distribution<int> any_code(0, 0xffff);
  Environment env{id, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = coin(labels) ? 1 : 0;
    auto x = causal_features(y, c, feats);
    const int affinity = agree(codes) ? y : 1 - y;
    std::uint16_t code = 0;
    do {
      code = static_cast<std::uint16_t>((any_code(codes) & ~1) | affinity);
    } while (used.count(code));
    used.insert(code);
    const Descriptor s{code};
    const auto xs = spurious_features(s, projection);
    x.insert(x.end(), xs.begin(), xs.end());
    env.examples.push_back({std::move(x), static_cast<double>(y), s});
  }
  return env;
}

}  // namespace

EnvironmentSet gen_descriptor_envs(const DescriptorConfig& c) {
  require(c.n_descriptors > 0 && c.n_descriptors <= c.n_examples, ErrorCode::kInvalidArgument,
          "n_descriptors must lie in [1, n_examples]");
  require(c.singleton_fraction >= 0.0 && c.singleton_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "singleton_fraction must lie in [0, 1]");
  require(c.spurious_strength >= 0.0 && c.spurious_strength <= 1.0, ErrorCode::kInvalidArgument,
          "spurious_strength must lie in [0, 1]");
  require(c.dim_causal > 0, ErrorCode::kInvalidArgument, "dim_causal must be positive");
  require(c.dim_spurious >= kCodeBits, ErrorCode::kInvalidArgument,
          "dim_spurious must be at least " + std::to_string(kCodeBits) + " so the descriptor is recoverable");
  require(c.n_descriptors + c.n_validation + c.n_test < (1u << kCodeBits) / 2, ErrorCode::kInvalidArgument,
          "too many descriptors for the code space");

  const auto counts = descriptor_counts(c);
  const std::size_t d = counts.size();

  // Projection for spurious dimensions beyond the raw code bits.
  Matrix projection(c.dim_spurious - kCodeBits, kCodeBits);
  {
    auto rng = stream(c.seed, kProjection);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kCodeBits)));
    for (double& v : projection.values()) v = normal(rng);
  }

  // Unique codes; bit 0 is the affinity bit that carries the spurious signal.
  std::set<std::uint16_t> used;
  std::vector<Descriptor> table(d);
  {
    auto rng = stream(c.seed, kCodes);
    std::uniform_int_distribution<int> any_code(0, 0xffff);
    for (auto& s : table) {
      std::uint16_t code = 0;
      do {
        code = static_cast<std::uint16_t>(any_code(rng));
      } while (used.count(code));
      used.insert(code);
      s.code = code;
    }
  }

  // Labels first, then the causal block from the labels alone.
  const std::size_t n = c.n_examples;
  std::vector<int> y(n);
  {
    auto rng = stream(c.seed, kLabels);
    std::bernoulli_distribution coin(0.5);
    for (int& v : y) v = coin(rng) ? 1 : 0;
  }
  std::vector<std::vector<double>> causal(n);
  {
    auto rng = stream(c.seed, kFeatures);
    for (std::size_t i = 0; i < n; ++i) causal[i] = causal_features(y[i], c, rng);
  }

  // Descriptor slots are matched to examples: a slot of descriptor s takes an
  // example whose label equals the affinity bit of s with probability
  // (1 + strength_s) / 2, where the frequent half of the descriptors uses the
  // full strength and the rare half the scaled one.
  std::vector<std::size_t> slots;
  slots.reserve(n);
  for (std::size_t s = 0; s < d; ++s) slots.insert(slots.end(), counts[s], s);
  auto rng = stream(c.seed, kAssignment);
  std::shuffle(slots.begin(), slots.end(), rng);
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[static_cast<std::size_t>(y[i])].push_back(i);
  for (auto& pool : by_label) std::shuffle(pool.begin(), pool.end(), rng);

  const std::size_t head = (d + 1) / 2;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Environment> envs(d);
  for (std::size_t s = 0; s < d; ++s) envs[s].id = static_cast<int>(s);
  for (std::size_t slot : slots) {
    const double strength = slot < head ? c.spurious_strength : c.spurious_strength * c.rare_strength_scale;
    const int affinity = table[slot].bit(0) ? 1 : 0;
    int want = unit(rng) < (1.0 + strength) / 2.0 ? affinity : 1 - affinity;
    if (by_label[static_cast<std::size_t>(want)].empty()) want = 1 - want;
    auto& pool = by_label[static_cast<std::size_t>(want)];
    const std::size_t i = pool.back();
    pool.pop_back();
    auto x = causal[i];
    const auto xs = spurious_features(table[slot], projection);
    x.insert(x.end(), xs.begin(), xs.end());
    envs[slot].examples.push_back({std::move(x), static_cast<double>(y[i]), table[slot]});
  }

  EnvironmentSet set;
  set.task = Task::kClassification;
  set.num_classes = 2;
  set.train = std::move(envs);
  set.validation = heldout_split(-1, c.n_validation, c.spurious_strength * c.validation_strength_scale, c,
                                 projection, used, 1);
  set.test = heldout_split(-2, c.n_test, 0.0, c, projection, used, 2);
  set.info = {"descriptor", c.seed, c.to_json()};
  return set;
}

double singleton_fraction(const EnvironmentSet& envs) {
  std::map<std::uint16_t, std::size_t> counts;
  for (const auto& e : envs.train)
    for (const auto& ex : e.examples)
      if (ex.descriptor) ++counts[ex.descriptor->code];
  if (counts.empty()) return 0.0;
  std::size_t singles = 0;
  for (const auto& [code, count] : counts) singles += count == 1;
  return static_cast<double>(singles) / static_cast<double>(counts.size());
}

// ---------------------------------------------------------------------------

EnvironmentSet cluster_envs(const EnvironmentSet& envs) {
  require(envs.train.size() >= 2, ErrorCode::kInvalidArgument, "cluster_envs needs at least two environments");
  std::vector<std::size_t> order(envs.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = envs.train[a];
    const auto& eb = envs.train[b];
    if (ea.size() != eb.size()) return ea.size() > eb.size();
    return ea.id < eb.id;
  });
  const std::size_t head = (order.size() + 1) / 2;
  EnvironmentSet out;
  out.task = envs.task;
  out.num_classes = envs.num_classes;
  out.validation = envs.validation;
  out.test = envs.test;
  out.info = envs.info;
  out.info.config["clustered"] = true;
  out.train = {Environment{0, {}}, Environment{1, {}}};
  for (std::size_t r = 0; r < order.size(); ++r) {
    auto& dst = out.train[r < head ? 0 : 1].examples;
    const auto& src = envs.train[order[r]].examples;
    dst.insert(dst.end(), src.begin(), src.end());
  }
  return out;
}

Batch make_batch(const Environment& env, std::span<const std::size_t> indices) {
  require(!indices.empty(), ErrorCode::kInvalidArgument,
          "empty batch from environment " + std::to_string(env.id));
  const std::size_t dim = env.dim();
  Batch b;
  b.env_id = env.id;
  b.x = Matrix(indices.size(), dim);
  const bool with_descriptors = env.has_descriptors();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Example& ex = env.examples.at(indices[r]);
    std::copy(ex.x.begin(), ex.x.end(), b.x.row(r).begin());
    b.labels.push_back(ex.label());
    b.targets.push_back(ex.y);
    if (with_descriptors) b.descriptors.push_back(*ex.descriptor);
  }
  return b;
}

Batch make_batch(const Environment& env) {
  std::vector<std::size_t> all(env.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(env, all);
}

Batch concat_batches(std::span<const Batch> parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "concat of zero batches");
  Batch out;
  out.env_id = -1;
  std::vector<Matrix> xs;
  bool descriptors = true;
  for (const auto& p : parts) descriptors = descriptors && p.has_descriptors();
  for (const auto& p : parts) {
    xs.push_back(p.x);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.targets.insert(out.targets.end(), p.targets.begin(), p.targets.end());
    if (descriptors) out.descriptors.insert(out.descriptors.end(), p.descriptors.begin(), p.descriptors.end());
  }
  out.x = vstack(xs);
  return out;
}

MiniBatches sample_minibatches(std::span<const Environment> envs, const SamplerOptions& options,
                               std::mt19937_64& rng) {
  require(!envs.empty(), ErrorCode::kInvalidArgument, "no environments to sample from");
  require(options.batch_size > 0, ErrorCode::kInvalidArgument, "batch_size must be positive");
  MiniBatches out;
  for (const auto& env : envs) {
    require(env.size() > 0, ErrorCode::kInvalidArgument, "environment " + std::to_string(env.id) + " is empty");
    std::vector<std::size_t> idx;
    if (options.batch_size <= env.size()) {
      // Partial Fisher-Yates: the first batch_size entries are a uniform subset.
      std::vector<std::size_t> perm(env.size());
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < options.batch_size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, perm.size() - 1);
        std::swap(perm[i], perm[pick(rng)]);
      }
      idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(options.batch_size));
    } else {
      require(options.with_replacement, ErrorCode::kInvalidArgument,
              "batch_size " + std::to_string(options.batch_size) + " exceeds environment " +
                  std::to_string(env.id) + " of size " + std::to_string(env.size()));
      std::uniform_int_distribution<std::size_t> pick(0, env.size() - 1);
      for (std::size_t i = 0; i < options.batch_size; ++i) idx.push_back(pick(rng));
    }
    out.per_env.push_back(make_batch(env, idx));
  }
  for (std::size_t e = 0; e < out.per_env.size(); ++e) {
    std::vector<Batch> others;
    for (std::size_t k = 0; k < out.per_env.size(); ++k)
      if (k != e) others.push_back(out.per_env[k]);
    if (others.empty()) {
      out.complement.push_back(Batch{});
    } else {
      out.complement.push_back(concat_batches(others));
      out.complement.back().env_id = out.per_env[e].env_id;
    }
  }
  return out;
}

}  // namespace rgm::env
