#include "rgm/optim.hpp"

#include <algorithm>
#include <cmath>

#include "rgm/error.hpp"

namespace rgm::ad {

void sgd_step(std::span<Parameter* const> params, double lr) {
  require(std::isfinite(lr) && lr >= 0.0, ErrorCode::kInvalidArgument,
          "sgd_step: learning rate must be finite and non-negative");
  for (const Parameter* p : params) {
    if (!p->grad.all_finite())
      fail(ErrorCode::kNonFinite, "non-finite gradient in parameter '" + p->id + "'");
  }
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
    p->zero_grad();
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

double grad_norm(std::span<Parameter* const> params) {
  double s = 0.0;
  for (const Parameter* p : params) s += p->grad.squared_norm();
  return std::sqrt(s);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad.values()) g *= factor;
  }
  return norm;
}

namespace {

double evaluate(const std::function<Var(Tape&)>& build_loss) {
  Tape tape;
  Var loss = build_loss(tape);
  return tape.value(loss).item();
}

}  // namespace

FiniteDiffReport finite_diff_check(std::span<Parameter* const> params,
                                   const std::function<Var(Tape&)>& build_loss,
                                   const FiniteDiffOptions& options) {
  zero_grads(params);
  double base = 0.0;
  {
    Tape tape;
    Var loss = build_loss(tape);
    base = tape.value(loss).item();
    if (std::isfinite(base)) tape.backward(loss);
  }

  FiniteDiffReport report;
  if (!std::isfinite(base)) {
    report.all_finite = false;
    for (const Parameter* p : params) report.entries.push_back({p->id, 0.0, 0, 0, false});
    return report;
  }

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);
  zero_grads(params);

  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    FiniteDiffEntry entry{p.id, 0.0, 0, 0, true};
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate(build_loss);
      p.value[i] = saved - h;
      const double down = evaluate(build_loss);
      p.value[i] = saved;

      if (!std::isfinite(up) || !std::isfinite(down)) {
        entry.finite = false;
        continue;
      }
      const double right = (up - base) / h;
      const double left = (base - down) / h;
      const double slope_scale = std::max({std::abs(right), std::abs(left), 1.0});
      if (std::abs(right - left) > options.kink_tolerance * slope_scale) {
        ++entry.flagged;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.all_finite = report.all_finite && entry.finite;
    report.flagged += entry.flagged;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rgm::ad
