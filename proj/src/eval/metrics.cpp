#include "ctvqa/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "ctvqa/data/vocab.hpp"
#include "ctvqa/errors.hpp"

namespace ctvqa {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<Ngram, std::size_t> counts;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + un))];
  }
  return counts;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in(normalize_text(text));
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

NgramPrecision clipped_precision(std::span<const std::string> candidate,
                                 std::span<const std::string> reference, int n) {
  NgramPrecision p;
  if (n < 1) throw InputError("clipped_precision: n must be >= 1");
  const auto ref = ngram_counts(reference, n);
  for (const auto& [gram, count] : ngram_counts(candidate, n)) {
    p.total += count;
    const auto it = ref.find(gram);
    if (it != ref.end()) p.matches += std::min(count, it->second);
  }
  return p;
}

double bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
            int max_n) {
  if (reference.empty()) throw InputError("bleu: empty reference");
  if (max_n < 1) throw InputError("bleu: max_n must be >= 1");
  if (candidate.empty()) return 0.0;
  const int top = std::min<int>(max_n, static_cast<int>(candidate.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= top; ++n) {
    const NgramPrecision p = clipped_precision(candidate, reference, n);
    double precision = static_cast<double>(p.matches) / static_cast<double>(p.total);
    if (p.matches == 0) {
      if (n == 1) return 0.0;
      precision = 1.0 / static_cast<double>(p.total + 1);
    }
    log_sum += std::log(precision);
  }
  const auto c = static_cast<double>(candidate.size());
  const auto r = static_cast<double>(reference.size());
  const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * brevity * std::exp(log_sum / top);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (reference.empty()) throw InputError("rouge_l: empty reference");
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 100.0 * 2.0 * p * r / (p + r);
}

double exact_match(std::string_view candidate, std::string_view reference) {
  return normalize_text(candidate) == normalize_text(reference) ? 100.0 : 0.0;
}

MetricReport aggregate(std::span<const EvalItem> items) {
  MetricReport report;
  for (const EvalItem& item : items) {
    const QuestionType type = parse_question_type(item.question_type);
    const auto cand = metric_tokens(item.candidate);
    const auto ref = metric_tokens(item.reference);
    MetricScores& s = report.per_type[static_cast<std::size_t>(type)];
    ++s.count;
    s.bleu += bleu(cand, ref);
    s.rouge_l += rouge_l(cand, ref);
    s.exact_match += exact_match(item.candidate, item.reference);
  }
  std::size_t present = 0;
  for (MetricScores& s : report.per_type) {
    if (s.count == 0) continue;
    const auto n = static_cast<double>(s.count);
    s.bleu /= n;
    s.rouge_l /= n;
    s.exact_match /= n;
    ++present;
    report.mean.count += s.count;
    report.mean.bleu += s.bleu;
    report.mean.rouge_l += s.rouge_l;
    report.mean.exact_match += s.exact_match;
  }
  if (present > 0) {
    const auto n = static_cast<double>(present);
    report.mean.bleu /= n;
    report.mean.rouge_l /= n;
    report.mean.exact_match /= n;
  }
  return report;
}

nlohmann::json MetricReport::to_json() const {
  auto row = [](const MetricScores& s) {
    return nlohmann::json{{"count", s.count},
                          {"bleu", s.bleu},
                          {"rouge_l", s.rouge_l},
                          {"exact_match", s.exact_match}};
  };
  nlohmann::json types = nlohmann::json::object();
  for (std::size_t i = 0; i < kQuestionTypes.size(); ++i) {
    if (per_type[i].count > 0) types[std::string(to_string(kQuestionTypes[i]))] = row(per_type[i]);
  }
  return {{"by_type", types}, {"mean", row(mean)}};
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %6s %8s %8s %8s\n", "type", "count", "bleu", "rouge_l",
                "em");
  out << line;
  auto emit = [&](std::string_view name, const MetricScores& s) {
    std::snprintf(line, sizeof line, "%-12.*s %6zu %8s %8s %8s\n", static_cast<int>(name.size()),
                  name.data(), s.count, fmt(s.bleu).c_str(), fmt(s.rouge_l).c_str(),
                  fmt(s.exact_match).c_str());
    out << line;
  };
  for (std::size_t i = 0; i < kQuestionTypes.size(); ++i) {
    if (per_type[i].count > 0) emit(to_string(kQuestionTypes[i]), per_type[i]);
  }
  emit("mean", mean);
  return out.str();
}

}  // namespace ctvqa
