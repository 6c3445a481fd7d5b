#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctvqa/errors.hpp"

namespace ctvqa {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major matrix of doubles. Rows index positions or nodes, columns
/// index features.
using Tensor2 = MatrixX<double>;
using Index = Eigen::Index;

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline std::string shape_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename DerivedA, typename DerivedB>
void require_same_shape(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

/// Checked matrix product.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a) + " by " + shape_string(b));
  }
  return a * b;
}

/// Sum whose result does not depend on the order of `terms`: the terms are
/// sorted before a left-to-right accumulation. Used wherever a graph
/// neighborhood is reduced so node permutations commute bit-exactly.
template <typename Scalar>
Scalar order_invariant_sum(std::span<Scalar> terms) {
  std::sort(terms.begin(), terms.end());
  Scalar acc = 0;
  for (Scalar t : terms) acc += t;
  return acc;
}

enum class SoftmaxNorm {
  /// Denominator restricted to the mask; rows sum to one.
  kMasked,
  /// Denominator sums over every column while the numerator is masked.
  kPaperLiteral,
};

/// Row-wise softmax restricted to the entries where `mask` is one. The row max
/// over masked entries is subtracted before exponentiation (kPaperLiteral
/// subtracts the max over the whole row, since every column enters its
/// denominator).
template <typename DerivedL, typename DerivedM>
MatrixX<typename DerivedL::Scalar> masked_row_softmax(const Eigen::MatrixBase<DerivedL>& logits,
                                                      const Eigen::MatrixBase<DerivedM>& mask,
                                                      SoftmaxNorm norm = SoftmaxNorm::kMasked) {
  using Scalar = typename DerivedL::Scalar;
  require_same_shape(logits, mask, "masked_row_softmax");
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(logits.rows(), logits.cols());
  std::vector<Scalar> terms(static_cast<std::size_t>(logits.cols()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Index c = 0; c < logits.cols(); ++c) {
      const bool on = mask(r, c) != Scalar(0);
      any = any || on;
      if (on || norm == SoftmaxNorm::kPaperLiteral) row_max = std::max(row_max, logits(r, c));
    }
    if (!any) {
      throw NumericError("masked_row_softmax: row " + std::to_string(r) +
                         " has an all-zero mask (degenerate row)");
    }
    std::size_t n = 0;
    for (Index c = 0; c < logits.cols(); ++c) {
      const Scalar e = std::exp(logits(r, c) - row_max);
      const bool on = mask(r, c) != Scalar(0);
      if (on) out(r, c) = e;
      if (on || norm == SoftmaxNorm::kPaperLiteral) terms[n++] = e;
    }
    const Scalar denom = order_invariant_sum(std::span<Scalar>(terms.data(), n));
    for (Index c = 0; c < logits.cols(); ++c) out(r, c) /= denom;
  }
  return out;
}

/// Max over columns of each row; returns a single column. `argmax` receives the
/// lowest column index attaining the max for each row.
template <typename Derived>
MatrixX<typename Derived::Scalar> column_max_pool(const Eigen::MatrixBase<Derived>& h,
                                                  std::vector<Index>* argmax = nullptr) {
  if (h.rows() == 0 || h.cols() == 0) {
    throw ShapeError("column_max_pool: empty input " + shape_string(h));
  }
  MatrixX<typename Derived::Scalar> out(h.rows(), 1);
  if (argmax) argmax->assign(static_cast<std::size_t>(h.rows()), 0);
  for (Index r = 0; r < h.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < h.cols(); ++c) {
      if (h(r, c) > h(r, best)) best = c;
    }
    out(r, 0) = h(r, best);
    if (argmax) (*argmax)[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace ctvqa
