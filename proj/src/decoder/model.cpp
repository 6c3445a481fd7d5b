#include "ctvqa/decoder/model.hpp"

#include <algorithm>
#include <cmath>

#include "ctvqa/data/vocab.hpp"

namespace ctvqa {

void ModelConfig::validate() const {
  encoder.validate();
  if (encoder.vocab_size != decoder.vocab_size) {
    throw ConfigError("encoder and decoder vocabularies differ (" +
                      std::to_string(encoder.vocab_size) + " vs " +
                      std::to_string(decoder.vocab_size) + ")");
  }
  if (decoder.d_model % decoder.n_heads != 0) {
    throw ConfigError("decoder d_model must be divisible by n_heads");
  }
  if (graph.d_graph < 1) throw ConfigError("graph width must be positive");
  if (graph.variant != GraphVariant::kNone && graph.layers < 1) {
    throw ConfigError("graph needs at least one layer");
  }
  if (max_answer_len < 1) throw ConfigError("max_answer_len must be >= 1");
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  Rng rng(seed);
  add_encoder_params(store, cfg.encoder, rng);
  add_node_projection_params(store, cfg.encoder.d_vision, cfg.encoder.d_text, cfg.graph.d_graph,
                             rng);
  add_graph_params(store, cfg.graph, rng);
  add_decoder_params(store, cfg.decoder, cfg.graph.d_graph, rng);
  return store;
}

PrefixPass build_prefix(const ParamBinding& params, const ModelConfig& cfg,
                        std::span<const Tensor2> slices, std::span<const int> question) {
  if (static_cast<Index>(slices.size()) > cfg.encoder.max_slices) {
    throw InputError("volume has " + std::to_string(slices.size()) + " slices, limit is " +
                     std::to_string(cfg.encoder.max_slices));
  }
  const Var slice_features = encode_slices(params, cfg.encoder, slices);
  const Var token_features = encode_question(params, cfg.encoder, question);
  PrefixPass pass{Var{}, assemble_nodes(params, slice_features, token_features), {}};
  Var final_nodes = pass.graph.node_features;
  if (cfg.graph.variant != GraphVariant::kNone) {
    GraphEncoding enc = encode_graph(final_nodes, pass.graph.adjacency, params, cfg.graph);
    final_nodes = enc.output;
    pass.attention = std::move(enc.attention);
  }
  const Var prompt = project_prompt(final_nodes, params["prompt.w"], params["prompt.b"]);
  const Var question_emb = embedding_lookup(params["decoder.embed"], question);
  pass.prefix = assemble_prompt(prompt, question_emb, pass.graph.num_slices,
                                pass.graph.num_tokens, cfg.decoder.prompt_mode,
                                cfg.decoder.prompt_first);
  return pass;
}

Var example_loss(const ParamBinding& params, const ModelConfig& cfg,
                 std::span<const Tensor2> slices, std::span<const int> question,
                 std::span<const int> answer) {
  const PrefixPass pass = build_prefix(params, cfg, slices, question);
  return answer_loss(decoder_forward(params, cfg.decoder, pass.prefix, answer), answer);
}

namespace {

Tensor2 prefix_value(const ParamStore& params, const ModelConfig& cfg,
                     std::span<const Tensor2> slices, std::span<const int> question) {
  Tape tape;
  const ParamBinding binding(tape, params);
  return build_prefix(binding, cfg, slices, question).prefix.value();
}

Tensor2 next_token_logits(const ParamStore& params, const ModelConfig& cfg, const Tensor2& prefix,
                          std::span<const int> generated) {
  Tape tape;
  const ParamBinding binding(tape, params);
  const Var logits = decoder_forward(binding, cfg.decoder, tape.leaf(prefix), generated);
  return logits.value().bottomRows(1);
}

}  // namespace

std::vector<int> generate_answer(const ParamStore& params, const ModelConfig& cfg,
                                 std::span<const Tensor2> slices, std::span<const int> question) {
  const Tensor2 prefix = prefix_value(params, cfg, slices, question);
  return greedy_decode(
      [&](std::span<const int> generated) {
        return next_token_logits(params, cfg, prefix, generated);
      },
      cfg.max_answer_len, kEosId);
}

std::vector<StepDistribution> generate_answer_with_probs(const ParamStore& params,
                                                         const ModelConfig& cfg,
                                                         std::span<const Tensor2> slices,
                                                         std::span<const int> question,
                                                         int top_k) {
  const Tensor2 prefix = prefix_value(params, cfg, slices, question);
  std::vector<StepDistribution> steps;
  std::vector<int> generated;
  while (static_cast<int>(generated.size()) < cfg.max_answer_len) {
    const Tensor2 logits = next_token_logits(params, cfg, prefix, generated);
    const Tensor2 probs =
        ctvqa::masked_row_softmax(logits, Tensor2::Ones(logits.rows(), logits.cols()));
    StepDistribution step{argmax_lowest(logits), {}};
    std::vector<int> order(static_cast<std::size_t>(probs.cols()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs(0, a) > probs(0, b); });
    for (int i = 0; i < std::min<int>(top_k, static_cast<int>(order.size())); ++i) {
      step.top.emplace_back(order[static_cast<std::size_t>(i)], probs(0, order[static_cast<std::size_t>(i)]));
    }
    steps.push_back(step);
    if (step.chosen == kEosId) break;
    generated.push_back(step.chosen);
  }
  return steps;
}

AttentionTrace attention_trace(const ParamStore& params, const ModelConfig& cfg,
                               std::span<const Tensor2> slices, std::span<const int> question) {
  if (cfg.graph.variant == GraphVariant::kNone) {
    throw ConfigError("variant 'none' bypasses the graph, so there is no attention to trace");
  }
  Tape tape;
  const ParamBinding binding(tape, params);
  PrefixPass pass = build_prefix(binding, cfg, slices, question);
  return AttentionTrace::from_layers(std::move(pass.attention), pass.graph.num_slices,
                                     pass.graph.num_tokens);
}

}  // namespace ctvqa
