#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctvqa/decoder/decoder.hpp"
#include "ctvqa/encoders/encoders.hpp"
#include "ctvqa/fusion/graph.hpp"

namespace ctvqa {

/// Every shape of the end-to-end model: encoders, graph, soft prompt, decoder.
struct ModelConfig {
  EncoderConfig encoder;
  GraphConfig graph;
  DecoderConfig decoder;
  /// Generation stops after this many answer tokens.
  int max_answer_len = 6;

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

struct PrefixPass {
  Var prefix;
  CrossModalGraph graph;
  /// Per graph layer; empty for GraphVariant::kNone.
  std::vector<Tensor2> attention;
};

/// Encoders, cross-modal graph, graph encoder and soft-prompt projection, up to
/// the decoder input prefix.
PrefixPass build_prefix(const ParamBinding& params, const ModelConfig& cfg,
                        std::span<const Tensor2> slices, std::span<const int> question);

/// Teacher-forced answer loss for one example.
Var example_loss(const ParamBinding& params, const ModelConfig& cfg,
                 std::span<const Tensor2> slices, std::span<const int> question,
                 std::span<const int> answer);

/// Greedy answer token ids (EOS excluded).
std::vector<int> generate_answer(const ParamStore& params, const ModelConfig& cfg,
                                 std::span<const Tensor2> slices, std::span<const int> question);

struct StepDistribution {
  int chosen;
  /// (token id, probability), most probable first.
  std::vector<std::pair<int, double>> top;
};

/// Greedy answer with the top-k next-token probabilities at every step,
/// including the step that produced EOS.
std::vector<StepDistribution> generate_answer_with_probs(const ParamStore& params,
                                                         const ModelConfig& cfg,
                                                         std::span<const Tensor2> slices,
                                                         std::span<const int> question, int top_k);

/// Graph attention for one (volume, question). Throws ConfigError for the
/// graph-free variant.
AttentionTrace attention_trace(const ParamStore& params, const ModelConfig& cfg,
                               std::span<const Tensor2> slices, std::span<const int> question);

}  // namespace ctvqa
