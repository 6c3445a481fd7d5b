#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ctvqa/numerics/tensor.hpp"

namespace ctvqa {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor2& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kAddRow,
  kScale,
  kHadamard,
  kTranspose,
  kRelu,
  kLeakyRelu,
  kMaskedRowSoftmax,
  kColumnMaxPool,
  kEmbeddingLookup,
  kCrossEntropy,
  kLayerNorm,
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kSum,
  kRowAffine,
  kBilinearScores,
  kNeighborhoodSum,
  kPairwiseSum,
};

std::string_view op_name(OpKind kind);

/// Ordered record of primitive operations. Backward runs in exact reverse
/// recording order; nodes never reached from the root keep a zero gradient.
class Tape {
 public:
  /// Receives the gradient and the forward value of the node being visited.
  using BackwardFn =
      std::function<void(Tape&, const Tensor2& out_grad, const Tensor2& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor2 value);
  Var record(OpKind kind, Tensor2 value, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1. When
  /// `visit_order` is given it receives the ids whose backward ran, in order.
  void backward(const Var& root, std::vector<std::size_t>* visit_order = nullptr);

  const Tensor2& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor2& grad(const Var& v) const;
  /// Accumulation target used by backward closures.
  Tensor2& grad_ref(std::size_t id) { return grads_[id]; }

  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    Tensor2 value;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor2> grads_;
};

// Differentiable primitives. All operands must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// a + broadcast of the 1xC row `row` onto every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var transpose(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double negative_slope);
/// `mask` is a constant {0,1} matrix; see ctvqa::masked_row_softmax.
Var masked_row_softmax(const Var& logits, const Tensor2& mask,
                       SoftmaxNorm norm = SoftmaxNorm::kMasked);
/// Max over columns per row. Gradient goes to the lowest-index argmax.
Var column_max_pool(const Var& h);
/// Gathers rows of `table`; ids must be < table.rows().
Var embedding_lookup(const Var& table, std::span<const int> ids);
/// Mean over non-ignored rows of -log softmax(logits)[target]. Rows whose
/// target equals `ignore_id` contribute nothing.
Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_id = -1);
/// Per-row normalization followed by gamma * x + beta (gamma, beta are 1xC).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Index begin, Index count);
Var slice_cols(const Var& a, Index begin, Index count);
Var sum(const Var& a);

// Row-local kernels with a fixed per-row accumulation order. Each output row
// depends only on its own input rows, so permuting rows of the inputs permutes
// the outputs bit-exactly.

/// out_j = h_j * w (+ bias). `bias` may be null.
Var row_affine(const Var& h, const Var& w, const Var* bias = nullptr);
/// out_jk = h_j * wa * h_k^T.
Var bilinear_scores(const Var& h, const Var& wa);
/// out_j = sum_k weights_jk * values_k, each sum order-invariant in k.
Var neighborhood_sum(const Var& weights, const Var& values);
/// out_jk = u_j + v_k for column vectors u, v.
Var pairwise_sum(const Var& u, const Var& v);

}  // namespace ctvqa
