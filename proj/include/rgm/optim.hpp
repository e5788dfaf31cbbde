#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rgm/autodiff.hpp"

namespace rgm::ad {

/// theta <- theta - lr * grad for every parameter, then grads are zeroed.
/// All gradients are validated before anything is written, so a non-finite
/// gradient leaves the whole set untouched (Error(kNonFinite) names it).
void sgd_step(std::span<Parameter* const> params, double lr);

void zero_grads(std::span<Parameter* const> params);

double grad_norm(std::span<Parameter* const> params);

/// Rescales the gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

struct FiniteDiffEntry {
  std::string id;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t flagged = 0;  // coordinates at a kink, excluded from the max
  bool finite = true;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double max_rel_error = 0.0;
  bool all_finite = true;
  std::size_t flagged = 0;
};

struct FiniteDiffOptions {
  double step = 1e-6;
  /// Denominator floor: below this magnitude the error is absolute.
  double scale_floor = 1e-4;
  /// One-sided slopes disagreeing by more than this (relative) mark a kink.
  double kink_tolerance = 1e-2;
};

/// Builds the loss on a fresh tape per evaluation and compares the analytic
/// gradient of every coordinate of `params` with a central difference.
/// Non-finite losses are reported, never thrown.
FiniteDiffReport finite_diff_check(std::span<Parameter* const> params,
                                   const std::function<Var(Tape&)>& build_loss,
                                   const FiniteDiffOptions& options = {});

}  // namespace rgm::ad
