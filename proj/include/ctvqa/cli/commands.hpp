#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "ctvqa/cli/run_config.hpp"
#include "ctvqa/data/synth.hpp"
#include "ctvqa/eval/metrics.hpp"

namespace ctvqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Maps a library exception to the process exit code.
int exit_code_for(const std::exception& e);

/// Split sizes for a total of `volumes`: dev and test get round(volumes / 12)
/// each (at least 1), train the rest. 600 gives the 500/50/50 default.
SynthConfig synth_config_for(int volumes);

struct GenerateOptions {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::optional<int> volumes;
  bool force = false;
};

/// Refuses an existing non-empty directory unless `force`, which clears it.
Dataset run_generate(const GenerateOptions& opts, std::ostream& log);

struct TrainOptions {
  std::filesystem::path data;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  /// Flag overrides by config key; they win over the config file.
  std::map<std::string, std::string> overrides;
};

/// Config precedence: defaults, then the file, then the overrides.
RunConfig resolve_run_config(const TrainOptions& opts);

/// Trains, writes the checkpoint (plus sidecar) and "<out>.loss.json", and
/// prints one line per epoch.
TrainResult run_train(const TrainOptions& opts, std::ostream& log);

struct EvaluateOptions {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  std::string split = "test";
  /// Reports go to "<prefix>.json" and "<prefix>.txt"; defaults to
  /// "<ckpt>.<split>".
  std::optional<std::filesystem::path> out_prefix;
};

/// Number of evaluation workers: CTVQA_THREADS when set (at least 1), else the
/// hardware concurrency.
int worker_count();

struct Prediction {
  std::string question_type;
  std::string question;
  std::string reference;
  std::string answer;
};

/// Greedy answers for every item of a split, in item order.
std::vector<Prediction> predict_split(const ModelConfig& cfg, const ParamStore& params,
                                      const SplitData& split, int workers);

MetricReport run_evaluate(const EvaluateOptions& opts, std::ostream& log);

struct AnswerOptions {
  std::filesystem::path ckpt;
  std::filesystem::path volume;
  std::string question;
  int top_k = 0;
};

/// Prints the answer (and top-k probabilities per step when top_k > 0). Each
/// unknown question word is reported once on `warn`.
std::string run_answer(const AnswerOptions& opts, std::ostream& out, std::ostream& warn);

struct DumpAttentionOptions {
  std::filesystem::path ckpt;
  std::filesystem::path volume;
  std::string question;
  std::filesystem::path out;
  /// "json" or "csv"; empty picks by the output extension.
  std::string format;
};

AttentionTrace run_dump_attention(const DumpAttentionOptions& opts, std::ostream& warn);

}  // namespace ctvqa::cli
