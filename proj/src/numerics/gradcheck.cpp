#include "ctvqa/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

namespace {

double evaluate(const TapeObjective& f, std::span<const Tensor2> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor2& p : params) leaves.push_back(tape.leaf(p));
  const Var out = f(tape, leaves);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("finite_diff_check: objective must be 1x1, got " +
                     shape_string(out.value()));
  }
  const double v = out.value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: objective is not finite");
  return v;
}

}  // namespace

std::vector<Tensor2> tape_gradients(const TapeObjective& f, std::span<const Tensor2> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor2& p : params) leaves.push_back(tape.leaf(p));
  const Var out = f(tape, leaves);
  if (!std::isfinite(out.value()(0, 0))) {
    throw NumericError("tape_gradients: objective is not finite");
  }
  tape.backward(out);
  std::vector<Tensor2> grads;
  grads.reserve(leaves.size());
  for (const Var& v : leaves) grads.push_back(tape.grad(v));
  return grads;
}

GradCheckReport finite_diff_check(const TapeObjective& f, std::span<const Tensor2> params,
                                  const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  const std::vector<Tensor2> analytic = tape_gradients(f, params);
  std::vector<Tensor2> work(params.begin(), params.end());
  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < work.size(); ++t) {
    std::vector<Index> coords(static_cast<std::size_t>(work[t].size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (Index i : coords) {
      double& x = work[t].data()[i];
      const double saved = x;
      x = saved + options.eps;
      const double up = evaluate(f, work);
      x = saved - options.eps;
      const double down = evaluate(f, work);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[t].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.coords_checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) {
          report.worst_tensor = t;
          report.worst_index = i;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

}  // namespace ctvqa
