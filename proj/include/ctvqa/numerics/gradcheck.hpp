#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctvqa/numerics/tape.hpp"

namespace ctvqa {

/// Scalar objective recorded on `tape`; `params` are leaves bound to the
/// current parameter values, in the order passed to finite_diff_check.
using TapeObjective = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
  /// When nonzero, check a seeded random subset of this many coordinates per
  /// tensor instead of every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

/// Central-difference gradient check of `f` against its tape gradient.
/// Throws NumericError if f evaluates to a non-finite value.
GradCheckReport finite_diff_check(const TapeObjective& f, std::span<const Tensor2> params,
                                  const GradCheckOptions& options = {});

/// Analytic gradients of `f` at `params`, one tensor per parameter.
std::vector<Tensor2> tape_gradients(const TapeObjective& f, std::span<const Tensor2> params);

}  // namespace ctvqa
