#pragma once

// Reference implementations shared by the unit suites and the acceptance run.
// They are written independently of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctvqa/data/synth.hpp"
#include "ctvqa/decoder/model.hpp"
#include "ctvqa/numerics/random.hpp"

namespace ctvqa::oracle {

/// N slices of 8x8 pixels, d_g = 8, vocabulary of 12 ids.
inline ModelConfig tiny_model(GraphVariant variant) {
  ModelConfig cfg;
  cfg.encoder.slice_height = 8;
  cfg.encoder.slice_width = 8;
  cfg.encoder.patch_size = 4;
  cfg.encoder.d_vision = 4;
  cfg.encoder.d_text = 4;
  cfg.encoder.n_layers = 1;
  cfg.encoder.n_heads = 2;
  cfg.encoder.d_ff = 8;
  cfg.encoder.vocab_size = 12;
  cfg.encoder.max_question_len = 6;
  cfg.encoder.max_slices = 4;
  cfg.graph.variant = variant;
  cfg.graph.d_graph = 8;
  cfg.graph.layers = 2;
  cfg.decoder.d_model = 4;
  cfg.decoder.n_layers = 1;
  cfg.decoder.n_heads = 2;
  cfg.decoder.d_ff = 8;
  cfg.decoder.vocab_size = 12;
  cfg.decoder.context_limit = 32;
  cfg.max_answer_len = 4;
  return cfg;
}

struct TinyExample {
  std::vector<Tensor2> slices;
  std::vector<int> question;
  std::vector<int> answer;
};

/// N = 3 slices, M = 4 question tokens, a two-token answer.
inline TinyExample tiny_example(std::uint64_t seed) {
  Rng rng(seed);
  TinyExample ex;
  for (int s = 0; s < 3; ++s) ex.slices.push_back(rng.uniform_matrix(8, 8));
  for (int m = 0; m < 4; ++m) ex.question.push_back(4 + static_cast<int>(rng.below(8)));
  for (int a = 0; a < 2; ++a) ex.answer.push_back(4 + static_cast<int>(rng.below(8)));
  return ex;
}

inline double model_loss(const ParamStore& params, const ModelConfig& cfg, const TinyExample& ex) {
  Tape tape;
  const ParamBinding binding(tape, params);
  return example_loss(binding, cfg, ex.slices, ex.question, ex.answer).value()(0, 0);
}

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t coords = 0;
};

/// Central differences on up to `per_tensor` seeded coordinates of every
/// parameter tensor, compared with `analytic` (store order). Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline FiniteDiffResult finite_difference(const ParamStore& params, const ModelConfig& cfg,
                                          const TinyExample& ex,
                                          const std::vector<Tensor2>& analytic,
                                          std::size_t per_tensor, double eps, std::uint64_t seed,
                                          double floor = 1e-6) {
  FiniteDiffResult r;
  Rng rng(seed);
  ParamStore work = params;
  for (std::size_t t = 0; t < work.size(); ++t) {
    Tensor2& value = work.entries()[t].value;
    const auto size = static_cast<std::uint64_t>(value.size());
    std::vector<Index> coords;
    if (size <= per_tensor) {
      for (Index i = 0; i < value.size(); ++i) coords.push_back(i);
    } else {
      while (coords.size() < per_tensor) {
        const auto i = static_cast<Index>(rng.below(size));
        if (std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);
      }
    }
    for (Index i : coords) {
      const double orig = value.data()[i];
      value.data()[i] = orig + eps;
      const double up = model_loss(work, cfg, ex);
      value.data()[i] = orig - eps;
      const double down = model_loss(work, cfg, ex);
      value.data()[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[t].data()[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.coords;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = work.entries()[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

/// LCS length by enumerating every subsequence of the shorter sequence and
/// testing it against the longer one. Exponential; keep inputs short.
inline std::size_t brute_force_lcs(const std::vector<std::string>& a,
                                   const std::vector<std::string>& b) {
  const auto& shorter = a.size() <= b.size() ? a : b;
  const auto& longer = a.size() <= b.size() ? b : a;
  const std::size_t n = shorter.size();
  std::size_t best = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    std::size_t len = 0;
    std::size_t pos = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      ++len;
      while (pos < longer.size() && longer[pos] != shorter[i]) ++pos;
      if (pos == longer.size()) ok = false;
      ++pos;
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

/// The answer a reader of the facts would give, restated from the task rules.
inline std::string rule_answer(QuestionType type, const VolumeFacts& f) {
  switch (type) {
    case QuestionType::kPlane: return f.plane;
    case QuestionType::kPhase: return f.phase;
    case QuestionType::kOrgan: return f.organ;
    case QuestionType::kAbnormality: return f.abnormality;
    case QuestionType::kLocation:
      return f.abnormality == "no abnormality" ? "not applicable" : f.planted_quadrant;
  }
  return {};
}

}  // namespace ctvqa::oracle
