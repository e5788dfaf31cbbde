#include "rgm/propositions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rgm/error.hpp"
#include "rgm/kernels.hpp"

namespace rgm::props {

namespace {

void require_distribution(std::span<const double> p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument, what + " has a negative or non-finite entry");
    s += v;
  }
  require(std::abs(s - 1.0) < 1e-9, ErrorCode::kInvalidArgument,
          what + " sums to " + std::to_string(s) + ", not 1");
}

double log_loss(double p, double q) {
  if (p == 0.0) return 0.0;
  return -p * std::log(q);
}

}  // namespace

void DiscreteInstance::validate() const {
  require(!p_env.empty(), ErrorCode::kInvalidArgument, "instance has no environments");
  require(p_x_given_env.rows() == n_env() && p_y_given_x_env.size() == n_env(), ErrorCode::kShapeMismatch,
          "instance tables disagree on the environment count");
  require_distribution(p_env, "p(e)");
  for (std::size_t e = 0; e < n_env(); ++e) {
    require_distribution(p_x_given_env.row(e), "p(x | e=" + std::to_string(e) + ")");
    const Matrix& t = p_y_given_x_env[e];
    require(t.rows() == n_x() && t.cols() == n_labels(), ErrorCode::kShapeMismatch, "p(y | x, e) has the wrong shape");
    for (std::size_t x = 0; x < n_x(); ++x)
      require_distribution(t.row(x), "p(y | x=" + std::to_string(x) + ", e=" + std::to_string(e) + ")");
  }
}

DiscreteInstance random_env_inferable_instance(std::size_t n_x, std::size_t n_env, std::size_t n_labels,
                                               std::mt19937_64& rng) {
  require(n_x >= n_env && n_env >= 1 && n_labels >= 2, ErrorCode::kInvalidArgument,
          "instance needs n_x >= n_env >= 1 and at least two labels");
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  // Each x belongs to one environment; every environment owns at least one x.
  std::vector<std::size_t> owner(n_x);
  for (std::size_t x = 0; x < n_x; ++x) owner[x] = x < n_env ? x : std::uniform_int_distribution<std::size_t>(0, n_env - 1)(rng);
  std::shuffle(owner.begin(), owner.end(), rng);

  DiscreteInstance inst;
  inst.p_env.resize(n_env);
  for (double& v : inst.p_env) v = unit(rng);
  const double pe = std::accumulate(inst.p_env.begin(), inst.p_env.end(), 0.0);
  for (double& v : inst.p_env) v /= pe;

  inst.p_x_given_env = Matrix(n_env, n_x);
  for (std::size_t e = 0; e < n_env; ++e) {
    double s = 0.0;
    for (std::size_t x = 0; x < n_x; ++x)
      if (owner[x] == e) s += inst.p_x_given_env(e, x) = unit(rng);
    for (std::size_t x = 0; x < n_x; ++x) inst.p_x_given_env(e, x) /= s;
  }
  // p(y | x) depends on x alone; off-support rows are filled with the same
  // table so every row stays a distribution.
  Matrix p_y(n_x, n_labels);
  for (std::size_t x = 0; x < n_x; ++x) {
    double s = 0.0;
    for (std::size_t y = 0; y < n_labels; ++y) s += p_y(x, y) = unit(rng);
    for (std::size_t y = 0; y < n_labels; ++y) p_y(x, y) /= s;
  }
  inst.p_y_given_x_env.assign(n_env, p_y);
  return inst;
}

std::vector<double> env_risks(const DiscreteInstance& inst, std::span<const int> phi, const Matrix& predictor) {
  require(phi.size() == inst.n_x(), ErrorCode::kShapeMismatch, "phi must map every x");
  std::vector<double> risk(inst.n_env(), 0.0);
  for (std::size_t e = 0; e < inst.n_env(); ++e) {
    for (std::size_t x = 0; x < inst.n_x(); ++x) {
      const double px = inst.p_x_given_env(e, x);
      if (px == 0.0) continue;
      const auto v = static_cast<std::size_t>(phi[x]);
      for (std::size_t y = 0; y < inst.n_labels(); ++y)
        risk[e] += px * log_loss(inst.p_y_given_x_env[e](x, y), predictor(v, y));
    }
  }
  return risk;
}

BayesResult brute_force_bayes(const DiscreteInstance& inst, std::span<const int> phi, std::size_t n_phi) {
  inst.validate();
  require(inst.n_x() * inst.n_env() * inst.n_labels() <= 10000, ErrorCode::kInvalidArgument,
          "instance too large to enumerate");
  require(phi.size() == inst.n_x(), ErrorCode::kShapeMismatch, "phi must map every x");
  for (int v : phi)
    require(v >= 0 && static_cast<std::size_t>(v) < n_phi, ErrorCode::kInvalidArgument, "phi value out of range");
  const std::size_t n_y = inst.n_labels();

  // Joint mass over (phi value, y), pooled and per environment.
  Matrix pooled(n_phi, n_y);
  std::vector<Matrix> per_env(inst.n_env(), Matrix(n_phi, n_y));
  for (std::size_t e = 0; e < inst.n_env(); ++e) {
    for (std::size_t x = 0; x < inst.n_x(); ++x) {
      const auto v = static_cast<std::size_t>(phi[x]);
      for (std::size_t y = 0; y < n_y; ++y) {
        const double m = inst.p_x_given_env(e, x) * inst.p_y_given_x_env[e](x, y);
        per_env[e](v, y) += m;
        pooled(v, y) += inst.p_env[e] * m;
      }
    }
  }
  auto normalize_rows = [n_y](Matrix m) {
    for (std::size_t v = 0; v < m.rows(); ++v) {
      double s = 0.0;
      for (std::size_t y = 0; y < n_y; ++y) s += m(v, y);
      for (std::size_t y = 0; y < n_y; ++y) m(v, y) = s > 0.0 ? m(v, y) / s : 1.0 / static_cast<double>(n_y);
    }
    return m;
  };

  BayesResult r;
  r.predictor = normalize_rows(pooled);
  r.risk = env_risks(inst, phi, r.predictor);
  for (std::size_t e = 0; e < inst.n_env(); ++e) {
    const Matrix best = normalize_rows(per_env[e]);
    r.optimal_risk.push_back(env_risks(inst, phi, best)[e]);
    r.gap.push_back(r.risk[e] - r.optimal_risk[e]);
    r.bayes_risk += inst.p_env[e] * r.risk[e];
  }
  return r;
}

// ---------------------------------------------------------------------------

nlohmann::json ConstraintCheck::to_json() const {
  return {{"irm_gap", irm_gap},   {"irm_feasible", irm_feasible}, {"irm_gaps", irm_gaps}, {"rgm_gap", rgm_gap},
          {"rgm_feasible", rgm_feasible}, {"rgm_gaps", rgm_gaps}, {"converged", converged}};
}

ConstraintCheck check_constraints(const Matrix& projection, std::span<const env::Environment> envs,
                                  const ConstraintConfig& config) {
  require(envs.size() >= 2, ErrorCode::kInvalidArgument, "check_constraints needs at least two environments");
  const env::Task task = env::Task::kClassification;
  int classes = 0;
  std::vector<env::Batch> batches;
  std::vector<Matrix> z;
  for (const auto& e : envs) {
    batches.push_back(env::make_batch(e));
    require(batches.back().x.cols() == projection.rows(), ErrorCode::kShapeMismatch,
            "projection " + projection.shape_string() + " for inputs of width " +
                std::to_string(batches.back().x.cols()));
    z.push_back(kernels::matmul(batches.back().x, projection));
    for (int y : batches.back().labels) classes = std::max(classes, y + 1);
  }
  classes = std::max(classes, 2);

  std::mt19937_64 rng(config.seed);
  model::MlpSpec spec;
  spec.widths = {projection.cols(), static_cast<std::size_t>(classes)};
  auto fresh = [&]() {
    model::Predictor p{model::Role::kMain, -1, model::Mlp("h", spec, rng)};
    for (auto* q : p.net.params()) q->value.fill(0.0);
    return p;
  };

  ConstraintCheck out;
  auto fit = [&](model::Predictor& p, const Matrix& zz, const env::Batch& b) {
    const auto r = train::fit_predictor(p, zz, b, task, config.fit);
    out.converged = out.converged && r.converged;
    return r.loss;
  };

  // Per-environment minima.
  std::vector<double> best(envs.size());
  for (std::size_t e = 0; e < envs.size(); ++e) {
    auto h = fresh();
    best[e] = fit(h, z[e], batches[e]);
  }

  // IRM: the pooled optimum must be optimal in every environment.
  auto pooled = fresh();
  fit(pooled, vstack(z), env::concat_batches(batches));
  for (std::size_t e = 0; e < envs.size(); ++e)
    out.irm_gaps.push_back(train::mean_loss(pooled, z[e], batches[e], task) - best[e]);

  // RGM: every member of F_{-e} must be optimal on E_e. Members are found by
  // converged fits on the complement from the zero start and from perturbed
  // starts; one violating member is a witness.
  std::normal_distribution<double> noise(0.0, config.restart_scale);
  for (std::size_t e = 0; e < envs.size(); ++e) {
    std::vector<Matrix> zs;
    std::vector<env::Batch> bs;
    for (std::size_t k = 0; k < envs.size(); ++k) {
      if (k == e) continue;
      zs.push_back(z[k]);
      bs.push_back(batches[k]);
    }
    const Matrix zc = vstack(zs);
    const env::Batch bc = env::concat_batches(bs);
    auto base = fresh();
    fit(base, zc, bc);
    double worst = train::mean_loss(base, z[e], batches[e], task) - best[e];
    for (std::size_t r = 0; r < config.restarts; ++r) {
      auto h = base;
      for (auto* q : h.net.params())
        for (double& v : q->value.values()) v += noise(rng);
      fit(h, zc, bc);
      worst = std::max(worst, train::mean_loss(h, z[e], batches[e], task) - best[e]);
    }
    out.rgm_gaps.push_back(worst);
  }
  out.irm_gap = *std::max_element(out.irm_gaps.begin(), out.irm_gaps.end());
  out.rgm_gap = *std::max_element(out.rgm_gaps.begin(), out.rgm_gaps.end());
  out.irm_feasible = out.irm_gap < config.tolerance;
  out.rgm_feasible = out.rgm_gap < config.tolerance;
  return out;
}

}  // namespace rgm::props
