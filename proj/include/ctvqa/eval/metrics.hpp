#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ctvqa/data/synth.hpp"

namespace ctvqa {

/// Normalized whitespace tokens of an answer string.
std::vector<std::string> metric_tokens(std::string_view text);

struct NgramPrecision {
  std::size_t matches = 0;  // clipped by reference counts
  std::size_t total = 0;
};

NgramPrecision clipped_precision(std::span<const std::string> candidate,
                                 std::span<const std::string> reference, int n);

/// Sentence BLEU on a 0-100 scale over n = 1..min(max_n, |candidate|), with
/// the brevity penalty. For n >= 2 a zero match count is add-one smoothed to
/// 1 / (total + 1). An empty candidate scores 0.
double bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
            int max_n = 4);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS-based F1 (beta = 1) on a 0-100 scale.
double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

/// 100 when the normalized strings are equal, else 0.
double exact_match(std::string_view candidate, std::string_view reference);

struct EvalItem {
  std::string question_type;
  std::string candidate;
  std::string reference;
};

struct MetricScores {
  std::size_t count = 0;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double exact_match = 0.0;
};

struct MetricReport {
  /// Indexed like kQuestionTypes; count 0 marks an absent type.
  std::array<MetricScores, 5> per_type{};
  /// Unweighted mean over the types that have items; count is the item total.
  MetricScores mean;

  nlohmann::json to_json() const;
  /// Aligned text table, one row per type plus the mean row.
  std::string to_table() const;
};

/// Per-type averages, then the unweighted mean over present types. Throws
/// InputError on an unknown question type or an empty reference.
MetricReport aggregate(std::span<const EvalItem> items);

}  // namespace ctvqa
