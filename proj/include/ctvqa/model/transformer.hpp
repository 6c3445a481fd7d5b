#pragma once

#include <string>

#include "ctvqa/model/params.hpp"
#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

struct BlockShape {
  Index d_model = 32;
  Index n_heads = 2;
  Index d_ff = 64;
};

/// Registers the weights of one pre-norm block under `prefix`.
void add_block_params(ParamStore& store, const std::string& prefix, const BlockShape& shape,
                      Rng& rng);

/// Zeroes the attention output projection and the second feed-forward layer so
/// the block reduces to its residual path.
void zero_block_outputs(ParamStore& store, const std::string& prefix);

/// x + MHA(LN(x)), then + FF(LN(x)). `attention_mask` is a {0,1} matrix over
/// rows of x (1 = may attend).
Var transformer_block(const ParamBinding& params, const std::string& prefix, const Var& x,
                      const Tensor2& attention_mask, Index n_heads);

/// Lower-triangular (inclusive) mask of size n.
Tensor2 causal_mask(Index n);

}  // namespace ctvqa
