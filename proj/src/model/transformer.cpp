#include "ctvqa/model/transformer.hpp"

#include <cmath>
#include <vector>

namespace ctvqa {

void add_block_params(ParamStore& store, const std::string& prefix, const BlockShape& shape,
                      Rng& rng) {
  const Index d = shape.d_model;
  if (d % shape.n_heads != 0) {
    throw ConfigError(prefix + ": d_model " + std::to_string(d) + " not divisible by " +
                      std::to_string(shape.n_heads) + " heads");
  }
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(shape.d_ff));
  store.add(prefix + ".ln1.gamma", Tensor2::Ones(1, d));
  store.add(prefix + ".ln1.beta", Tensor2::Zero(1, d));
  store.add(prefix + ".attn.wq", rng.normal_matrix(d, d, s_in));
  store.add(prefix + ".attn.wk", rng.normal_matrix(d, d, s_in));
  store.add(prefix + ".attn.wv", rng.normal_matrix(d, d, s_in));
  store.add(prefix + ".attn.wo", rng.normal_matrix(d, d, s_in));
  store.add(prefix + ".attn.bo", Tensor2::Zero(1, d));
  store.add(prefix + ".ln2.gamma", Tensor2::Ones(1, d));
  store.add(prefix + ".ln2.beta", Tensor2::Zero(1, d));
  store.add(prefix + ".ff.w1", rng.normal_matrix(d, shape.d_ff, s_in));
  store.add(prefix + ".ff.b1", Tensor2::Zero(1, shape.d_ff));
  store.add(prefix + ".ff.w2", rng.normal_matrix(shape.d_ff, d, s_ff));
  store.add(prefix + ".ff.b2", Tensor2::Zero(1, d));
}

void zero_block_outputs(ParamStore& store, const std::string& prefix) {
  store.at(prefix + ".attn.wo").setZero();
  store.at(prefix + ".attn.bo").setZero();
  store.at(prefix + ".ff.w2").setZero();
  store.at(prefix + ".ff.b2").setZero();
}

Var transformer_block(const ParamBinding& params, const std::string& prefix, const Var& x,
                      const Tensor2& attention_mask, Index n_heads) {
  const Index d = x.cols();
  const Index d_head = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));

  const Var h = layer_norm(x, params[prefix + ".ln1.gamma"], params[prefix + ".ln1.beta"]);
  const Var q = matmul(h, params[prefix + ".attn.wq"]);
  const Var k = matmul(h, params[prefix + ".attn.wk"]);
  const Var v = matmul(h, params[prefix + ".attn.wv"]);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (Index head = 0; head < n_heads; ++head) {
    const Var qh = slice_cols(q, head * d_head, d_head);
    const Var kh = slice_cols(k, head * d_head, d_head);
    const Var vh = slice_cols(v, head * d_head, d_head);
    const Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    heads.push_back(matmul(masked_row_softmax(scores, attention_mask), vh));
  }
  const Var mixed = n_heads == 1 ? heads[0] : concat_cols(heads);
  const Var attn_out = add_row(matmul(mixed, params[prefix + ".attn.wo"]),
                               params[prefix + ".attn.bo"]);
  const Var x1 = add(x, attn_out);

  const Var h2 = layer_norm(x1, params[prefix + ".ln2.gamma"], params[prefix + ".ln2.beta"]);
  const Var ff = relu(add_row(matmul(h2, params[prefix + ".ff.w1"]), params[prefix + ".ff.b1"]));
  const Var ff_out = add_row(matmul(ff, params[prefix + ".ff.w2"]), params[prefix + ".ff.b2"]);
  return add(x1, ff_out);
}

Tensor2 causal_mask(Index n) {
  Tensor2 m = Tensor2::Zero(n, n);
  for (Index i = 0; i < n; ++i) m.row(i).head(i + 1).setOnes();
  return m;
}

}  // namespace ctvqa
