#include "ctvqa/decoder/decoder.hpp"

#include <cmath>
#include <string>

#include "ctvqa/data/vocab.hpp"

namespace ctvqa {

namespace {

std::string block_name(Index l) { return "decoder.block" + std::to_string(l); }

}  // namespace

std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::kBoth: return "both";
    case PromptMode::kVisionOnly: return "vision_only";
    case PromptMode::kTextOnly: return "text_only";
  }
  return "unknown";
}

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "both") return PromptMode::kBoth;
  if (name == "vision_only") return PromptMode::kVisionOnly;
  if (name == "text_only") return PromptMode::kTextOnly;
  throw ConfigError("unknown prompt mode '" + std::string(name) +
                    "' (expected both|vision_only|text_only)");
}

void add_decoder_params(ParamStore& store, const DecoderConfig& cfg, Index d_graph, Rng& rng) {
  const Index d = cfg.d_model;
  store.add("prompt.w", rng.normal_matrix(d_graph, d, 1.0 / std::sqrt(double(d_graph))));
  store.add("prompt.b", Tensor2::Zero(1, d));
  store.add("decoder.embed", rng.normal_matrix(cfg.vocab_size, d, 0.1));
  store.add("decoder.pos", rng.normal_matrix(cfg.context_limit, d, 0.1));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    add_block_params(store, block_name(l), {d, cfg.n_heads, cfg.d_ff}, rng);
  }
  if (!cfg.tie_head) {
    store.add("decoder.head.w", rng.normal_matrix(d, cfg.vocab_size, 1.0 / std::sqrt(double(d))));
  }
  store.add("decoder.head.b", Tensor2::Zero(1, cfg.vocab_size));
}

Var project_prompt(const Var& final_nodes, const Var& weight, const Var& bias) {
  if (weight.rows() != final_nodes.cols() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("project_prompt: nodes " + shape_string(final_nodes.value()) + ", weight " +
                     shape_string(weight.value()) + ", bias " + shape_string(bias.value()));
  }
  return add_row(matmul(final_nodes, weight), bias);
}

Var assemble_prompt(const Var& prompt, const Var& question_embeddings, int num_slices,
                    int num_tokens, PromptMode mode, bool prompt_first) {
  if (prompt.rows() != num_slices + num_tokens) {
    throw ShapeError("assemble_prompt: prompt has " + std::to_string(prompt.rows()) +
                     " rows for " + std::to_string(num_slices) + " slices + " +
                     std::to_string(num_tokens) + " tokens");
  }
  Var selected;
  switch (mode) {
    case PromptMode::kBoth: selected = prompt; break;
    case PromptMode::kVisionOnly: selected = slice_rows(prompt, 0, num_slices); break;
    case PromptMode::kTextOnly: selected = slice_rows(prompt, num_slices, num_tokens); break;
  }
  const Var parts[] = {prompt_first ? selected : question_embeddings,
                       prompt_first ? question_embeddings : selected};
  return concat_rows(parts);
}

Var decoder_forward(const ParamBinding& params, const DecoderConfig& cfg, const Var& prefix,
                    std::span<const int> answer_tokens) {
  const Index prefix_len = prefix.rows();
  const Index total = prefix_len + 1 + static_cast<Index>(answer_tokens.size());
  if (total > cfg.context_limit) {
    throw InputError("decoder_forward: sequence of " + std::to_string(total) +
                     " positions exceeds the context limit of " +
                     std::to_string(cfg.context_limit));
  }
  std::vector<int> ids;
  ids.reserve(answer_tokens.size() + 1);
  ids.push_back(kBosId);
  ids.insert(ids.end(), answer_tokens.begin(), answer_tokens.end());
  const Var answer_emb = embedding_lookup(params["decoder.embed"], ids);
  const Var parts[] = {prefix, answer_emb};
  Var x = add(concat_rows(parts), slice_rows(params["decoder.pos"], 0, total));
  const Tensor2 mask = causal_mask(total);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    x = transformer_block(params, block_name(l), x, mask, cfg.n_heads);
  }
  const Var tail = slice_rows(x, prefix_len, total - prefix_len);
  const Var head = cfg.tie_head ? transpose(params["decoder.embed"]) : params["decoder.head.w"];
  return add_row(matmul(tail, head), params["decoder.head.b"]);
}

Var answer_loss(const Var& logits, std::span<const int> answer_tokens) {
  std::vector<int> gold(answer_tokens.begin(), answer_tokens.end());
  gold.push_back(kEosId);
  return cross_entropy(logits, gold, kPadId);
}

int argmax_lowest(const Tensor2& row) {
  if (row.size() == 0) throw ShapeError("argmax_lowest: empty row");
  Index best = 0;
  for (Index i = 1; i < row.size(); ++i) {
    if (row.data()[i] > row.data()[best]) best = i;
  }
  return static_cast<int>(best);
}

std::vector<int> greedy_decode(const std::function<Tensor2(std::span<const int>)>& next_logits,
                               int max_len, int eos_id) {
  if (max_len < 1) throw InputError("greedy_decode: max_len must be >= 1");
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_len) {
    const int next = argmax_lowest(next_logits(out));
    if (next == eos_id) break;
    out.push_back(next);
  }
  return out;
}

}  // namespace ctvqa
