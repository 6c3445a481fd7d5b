#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ctvqa/model/params.hpp"
#include "ctvqa/model/transformer.hpp"

namespace ctvqa {

enum class PromptMode { kBoth, kVisionOnly, kTextOnly };

std::string_view to_string(PromptMode m);
/// Throws ConfigError on an unknown name.
PromptMode parse_prompt_mode(std::string_view name);

struct DecoderConfig {
  Index d_model = 64;
  Index n_layers = 2;
  Index n_heads = 4;
  Index d_ff = 128;
  Index vocab_size = 64;
  Index context_limit = 256;
  /// Output head reuses the token embedding table (transposed).
  bool tie_head = false;
  PromptMode prompt_mode = PromptMode::kBoth;
  /// Soft prompt before the question embeddings; false swaps them.
  bool prompt_first = true;
};

void add_decoder_params(ParamStore& store, const DecoderConfig& cfg, Index d_graph, Rng& rng);

/// O = H W + b, one d_model row per node, node order preserved.
Var project_prompt(const Var& final_nodes, const Var& weight, const Var& bias);

/// Selects soft-prompt rows by mode (slice rows, token rows or both) and joins
/// them with the question embeddings.
Var assemble_prompt(const Var& prompt, const Var& question_embeddings, int num_slices,
                    int num_tokens, PromptMode mode, bool prompt_first = true);

/// Causal transformer over [prefix, BOS, answer...]. Returns one logit row per
/// position from BOS on: row t predicts answer token t (the last row predicts
/// EOS). Throws InputError when the sequence exceeds the context limit.
Var decoder_forward(const ParamBinding& params, const DecoderConfig& cfg, const Var& prefix,
                    std::span<const int> answer_tokens);

/// Mean token cross-entropy of `logits` against answer + EOS; PAD ignored.
Var answer_loss(const Var& logits, std::span<const int> answer_tokens);

/// Index of the largest entry of a row; ties go to the lowest index.
int argmax_lowest(const Tensor2& row);

/// Greedy generation: `next_logits(generated)` returns the 1 x vocab logits for
/// the next token. Stops at EOS (not emitted) or after max_len tokens.
std::vector<int> greedy_decode(const std::function<Tensor2(std::span<const int>)>& next_logits,
                               int max_len, int eos_id);

}  // namespace ctvqa
