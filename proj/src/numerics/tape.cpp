#include "ctvqa/numerics/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace ctvqa {

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::logic_error("operands recorded on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw std::logic_error("operand is not bound to a tape");
  return *a.tape();
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kScale: return "scale";
    case OpKind::kHadamard: return "hadamard";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kMaskedRowSoftmax: return "masked_row_softmax";
    case OpKind::kColumnMaxPool: return "column_max_pool";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSum: return "sum";
    case OpKind::kRowAffine: return "row_affine";
    case OpKind::kBilinearScores: return "bilinear_scores";
    case OpKind::kNeighborhoodSum: return "neighborhood_sum";
    case OpKind::kPairwiseSum: return "pairwise_sum";
  }
  return "unknown";
}

const Tensor2& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("Var is not bound to a tape");
  return tape_->value(id_);
}

Var Tape::leaf(Tensor2 value) { return record(OpKind::kLeaf, std::move(value), nullptr); }

Var Tape::record(OpKind kind, Tensor2 value, BackwardFn backward) {
  nodes_.push_back(Node{kind, std::move(value), std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& root, std::vector<std::size_t>* visit_order) {
  if (root.tape() != this) throw std::logic_error("backward: root belongs to another tape");
  const Tensor2& root_value = value(root.id());
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw ShapeError("backward: root must be 1x1, got " + shape_string(root_value));
  }
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.push_back(Tensor2::Zero(n.value.rows(), n.value.cols()));
  grads_[root.id()](0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (visit_order) visit_order->push_back(i);
    // Closures only accumulate into inputs, which have lower ids than i.
    n.backward(*this, grads_[i], n.value);
  }
}

const Tensor2& Tape::grad(const Var& v) const {
  if (v.tape() != this) throw std::logic_error("grad: variable belongs to another tape");
  if (grads_.size() <= v.id()) throw std::logic_error("grad: backward has not been run");
  return grads_[v.id()];
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  Tensor2 out = ctvqa::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kMatmul, std::move(out), [ia, ib](Tape& tp, const Tensor2& g, const Tensor2&) {
    tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kAdd, a.value() + b.value(), [ia, ib](Tape& tp, const Tensor2& g, const Tensor2&) {
    tp.grad_ref(ia) += g;
    tp.grad_ref(ib) += g;
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: cannot broadcast " + shape_string(row.value()) + " onto " +
                     shape_string(a.value()));
  }
  Tensor2 out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(OpKind::kAddRow, std::move(out), [ia, ir](Tape& tp, const Tensor2& g, const Tensor2&) {
    tp.grad_ref(ia) += g;
    tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::kScale, a.value() * s,
                  [ia, s](Tape& tp, const Tensor2& g, const Tensor2&) { tp.grad_ref(ia) += g * s; });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::kHadamard, a.value().cwiseProduct(b.value()),
                  [ia, ib](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
                    tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
                  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::kTranspose, a.value().transpose(),
                  [ia](Tape& tp, const Tensor2& g, const Tensor2&) { tp.grad_ref(ia) += g.transpose(); });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  return t.record(OpKind::kRelu, a.value().cwiseMax(0.0), [ia](Tape& tp, const Tensor2& g, const Tensor2&) {
    const Tensor2& x = tp.value(ia);
    tp.grad_ref(ia) += (x.array() > 0.0).select(g, 0.0);
  });
}

Var leaky_relu(const Var& a, double negative_slope) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  Tensor2 out = (a.value().array() > 0.0).select(a.value(), a.value() * negative_slope);
  return t.record(OpKind::kLeakyRelu, std::move(out),
                  [ia, negative_slope](Tape& tp, const Tensor2& g, const Tensor2&) {
                    const Tensor2& x = tp.value(ia);
                    tp.grad_ref(ia) += (x.array() > 0.0).select(g, g * negative_slope);
                  });
}


Var masked_row_softmax(const Var& logits, const Tensor2& mask, SoftmaxNorm norm) {
  Tape& t = tape_of(logits);
  Tensor2 out = ctvqa::masked_row_softmax(logits.value(), mask, norm);
  const std::size_t il = logits.id();
  // d out_c / d x_k = out_c (delta_ck - p_k) with p the distribution forming
  // the denominator: out itself when masked, the unmasked softmax otherwise.
  Tensor2 full;
  if (norm == SoftmaxNorm::kPaperLiteral) {
    full = ctvqa::masked_row_softmax(logits.value(), Tensor2::Ones(mask.rows(), mask.cols()));
  }
  return t.record(OpKind::kMaskedRowSoftmax, std::move(out),
                  [il, full = std::move(full)](Tape& tp, const Tensor2& g, const Tensor2& y) {
                    const Tensor2& p = full.size() == 0 ? y : full;
                    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                    Tensor2 dx = g.cwiseProduct(y);
                    dx -= (p.array().colwise() * dot.array()).matrix();
                    tp.grad_ref(il) += dx;
                  });
}

Var column_max_pool(const Var& h) {
  Tape& t = tape_of(h);
  std::vector<Index> argmax;
  Tensor2 out = ctvqa::column_max_pool(h.value(), &argmax);
  const std::size_t ih = h.id();
  return t.record(OpKind::kColumnMaxPool, std::move(out),
                  [ih, argmax = std::move(argmax)](Tape& tp, const Tensor2& g, const Tensor2&) {
                    Tensor2& dh = tp.grad_ref(ih);
                    for (Index r = 0; r < g.rows(); ++r) {
                      dh(r, argmax[static_cast<std::size_t>(r)]) += g(r, 0);
                    }
                  });
}

Var embedding_lookup(const Var& table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Tensor2& tab = table.value();
  Tensor2 out(static_cast<Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows()) {
      throw VocabularyError("embedding_lookup: id " + std::to_string(ids[i]) +
                            " outside table of " + std::to_string(tab.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = tab.row(ids[i]);
  }
  const std::size_t it = table.id();
  std::vector<int> id_copy(ids.begin(), ids.end());
  return t.record(OpKind::kEmbeddingLookup, std::move(out),
                  [it, id_copy = std::move(id_copy)](Tape& tp, const Tensor2& g, const Tensor2&) {
                    Tensor2& dt = tp.grad_ref(it);
                    for (std::size_t i = 0; i < id_copy.size(); ++i) {
                      dt.row(id_copy[i]) += g.row(static_cast<Index>(i));
                    }
                  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_id) {
  Tape& t = tape_of(logits);
  const Tensor2& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_string(z) + " logits");
  }
  Tensor2 probs = Tensor2::Zero(z.rows(), z.cols());
  double total = 0.0;
  int counted = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y == ignore_id) continue;
    if (y < 0 || y >= z.cols()) {
      throw VocabularyError("cross_entropy: target " + std::to_string(y) +
                            " outside vocabulary of " + std::to_string(z.cols()));
    }
    const double m = z.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(r).array() - m).exp();
    const double s = e.sum();
    probs.row(r) = e / s;
    total += std::log(s) + m - z(r, y);
    ++counted;
  }
  Tensor2 out(1, 1);
  out(0, 0) = counted > 0 ? total / counted : 0.0;
  const std::size_t il = logits.id();
  std::vector<int> tgt(targets.begin(), targets.end());
  return t.record(OpKind::kCrossEntropy, std::move(out),
                  [il, probs = std::move(probs), tgt = std::move(tgt), ignore_id, counted](
                      Tape& tp, const Tensor2& g, const Tensor2&) {
                    if (counted == 0) return;
                    const double w = g(0, 0) / counted;
                    Tensor2& dz = tp.grad_ref(il);
                    for (std::size_t r = 0; r < tgt.size(); ++r) {
                      if (tgt[r] == ignore_id) continue;
                      const auto ri = static_cast<Index>(r);
                      dz.row(ri) += w * probs.row(ri);
                      dz(ri, tgt[r]) -= w;
                    }
                  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor2& xv = x.value();
  const Index c = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(c));
  }
  Tensor2 xhat(xv.rows(), c);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Tensor2 out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                beta.value().row(0).array();
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(
      OpKind::kLayerNorm, std::move(out),
      [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& tp, const Tensor2& g, const Tensor2&) {
        tp.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
        tp.grad_ref(ib) += g.colwise().sum();
        const Tensor2 dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
        const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
        const Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
        Tensor2 dx = dxhat;
        dx.array().colwise() -= mean_d.array();
        dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
        dx.array().colwise() *= inv_std.array();
        tp.grad_ref(ix) += dx;
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Tape& t = tape_of(parts[0]);
  const Index c = parts[0].cols();
  Index total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0].value()) +
                       " vs " + shape_string(p.value()));
    }
    total += p.rows();
  }
  Tensor2 out(total, c);
  std::vector<std::pair<std::size_t, Index>> pieces;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    pieces.emplace_back(p.id(), p.rows());
    at += p.rows();
  }
  return t.record(OpKind::kConcatRows, std::move(out),
                  [pieces = std::move(pieces)](Tape& tp, const Tensor2& g, const Tensor2&) {
                    Index off = 0;
                    for (const auto& [id, n] : pieces) {
                      tp.grad_ref(id) += g.middleRows(off, n);
                      off += n;
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& t = tape_of(parts[0]);
  const Index r = parts[0].rows();
  Index total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].value()) + " vs " +
                       shape_string(p.value()));
    }
    total += p.cols();
  }
  Tensor2 out(r, total);
  std::vector<std::pair<std::size_t, Index>> pieces;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    pieces.emplace_back(p.id(), p.cols());
    at += p.cols();
  }
  return t.record(OpKind::kConcatCols, std::move(out),
                  [pieces = std::move(pieces)](Tape& tp, const Tensor2& g, const Tensor2&) {
                    Index off = 0;
                    for (const auto& [id, n] : pieces) {
                      tp.grad_ref(id) += g.middleCols(off, n);
                      off += n;
                    }
                  });
}

Var slice_rows(const Var& a, Index begin, Index count) {
  Tape& t = tape_of(a);
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(a.value()));
  }
  const std::size_t ia = a.id();
  return t.record(OpKind::kSliceRows, a.value().middleRows(begin, count),
                  [ia, begin, count](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(ia).middleRows(begin, count) += g;
                  });
}

Var slice_cols(const Var& a, Index begin, Index count) {
  Tape& t = tape_of(a);
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(a.value()));
  }
  const std::size_t ia = a.id();
  return t.record(OpKind::kSliceCols, a.value().middleCols(begin, count),
                  [ia, begin, count](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(ia).middleCols(begin, count) += g;
                  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  Tensor2 out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.id();
  return t.record(OpKind::kSum, std::move(out),
                  [ia](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(ia).array() += g(0, 0);
                  });
}

Var row_affine(const Var& h, const Var& w, const Var* bias) {
  Tape& t = same_tape(h, w);
  const Tensor2& hv = h.value();
  const Tensor2& wv = w.value();
  if (hv.cols() != wv.rows()) {
    throw ShapeError("row_affine: cannot multiply " + shape_string(hv) + " by " +
                     shape_string(wv));
  }
  if (bias && (bias->rows() != 1 || bias->cols() != wv.cols())) {
    throw ShapeError("row_affine: bias " + shape_string(bias->value()) + " for output width " +
                     std::to_string(wv.cols()));
  }
  Tensor2 out(hv.rows(), wv.cols());
  for (Index j = 0; j < hv.rows(); ++j) {
    for (Index c = 0; c < wv.cols(); ++c) {
      double acc = 0.0;
      for (Index a = 0; a < hv.cols(); ++a) acc += hv(j, a) * wv(a, c);
      out(j, c) = bias ? acc + bias->value()(0, c) : acc;
    }
  }
  const std::size_t ih = h.id(), iw = w.id();
  const std::size_t ib = bias ? bias->id() : 0;
  const bool has_bias = bias != nullptr;
  return t.record(OpKind::kRowAffine, std::move(out),
                  [ih, iw, ib, has_bias](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(ih).noalias() += g * tp.value(iw).transpose();
                    tp.grad_ref(iw).noalias() += tp.value(ih).transpose() * g;
                    if (has_bias) tp.grad_ref(ib) += g.colwise().sum();
                  });
}

Var bilinear_scores(const Var& h, const Var& wa) {
  Tape& t = same_tape(h, wa);
  const Tensor2& hv = h.value();
  const Tensor2& av = wa.value();
  if (av.rows() != hv.cols() || av.cols() != hv.cols()) {
    throw ShapeError("bilinear_scores: weight " + shape_string(av) + " for features " +
                     shape_string(hv));
  }
  const Index n = hv.rows(), d = hv.cols();
  Tensor2 left(n, d);
  for (Index j = 0; j < n; ++j) {
    for (Index b = 0; b < d; ++b) {
      double acc = 0.0;
      for (Index a = 0; a < d; ++a) acc += hv(j, a) * av(a, b);
      left(j, b) = acc;
    }
  }
  Tensor2 out(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < n; ++k) {
      double acc = 0.0;
      for (Index b = 0; b < d; ++b) acc += left(j, b) * hv(k, b);
      out(j, k) = acc;
    }
  }
  const std::size_t ih = h.id(), ia = wa.id();
  return t.record(OpKind::kBilinearScores, std::move(out),
                  [ih, ia](Tape& tp, const Tensor2& g, const Tensor2&) {
                    const Tensor2& H = tp.value(ih);
                    const Tensor2& A = tp.value(ia);
                    tp.grad_ref(ih).noalias() += g * H * A.transpose();
                    tp.grad_ref(ih).noalias() += g.transpose() * H * A;
                    tp.grad_ref(ia).noalias() += H.transpose() * g * H;
                  });
}

Var neighborhood_sum(const Var& weights, const Var& values) {
  Tape& t = same_tape(weights, values);
  const Tensor2& w = weights.value();
  const Tensor2& v = values.value();
  if (w.cols() != v.rows()) {
    throw ShapeError("neighborhood_sum: weights " + shape_string(w) + " vs values " +
                     shape_string(v));
  }
  Tensor2 out(w.rows(), v.cols());
  std::vector<double> terms(static_cast<std::size_t>(w.cols()));
  for (Index j = 0; j < w.rows(); ++j) {
    for (Index c = 0; c < v.cols(); ++c) {
      std::size_t n = 0;
      for (Index k = 0; k < w.cols(); ++k) {
        if (w(j, k) != 0.0) terms[n++] = w(j, k) * v(k, c);
      }
      out(j, c) = order_invariant_sum(std::span<double>(terms.data(), n));
    }
  }
  const std::size_t iw = weights.id(), iv = values.id();
  return t.record(OpKind::kNeighborhoodSum, std::move(out),
                  [iw, iv](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(iw).noalias() += g * tp.value(iv).transpose();
                    tp.grad_ref(iv).noalias() += tp.value(iw).transpose() * g;
                  });
}

Var pairwise_sum(const Var& u, const Var& v) {
  Tape& t = same_tape(u, v);
  if (u.cols() != 1 || v.cols() != 1) {
    throw ShapeError("pairwise_sum: expects column vectors, got " + shape_string(u.value()) +
                     " and " + shape_string(v.value()));
  }
  Tensor2 out(u.rows(), v.rows());
  for (Index j = 0; j < u.rows(); ++j) {
    for (Index k = 0; k < v.rows(); ++k) out(j, k) = u.value()(j, 0) + v.value()(k, 0);
  }
  const std::size_t iu = u.id(), iv = v.id();
  return t.record(OpKind::kPairwiseSum, std::move(out),
                  [iu, iv](Tape& tp, const Tensor2& g, const Tensor2&) {
                    tp.grad_ref(iu) += g.rowwise().sum();
                    tp.grad_ref(iv) += g.colwise().sum().transpose();
                  });
}

}  // namespace ctvqa
