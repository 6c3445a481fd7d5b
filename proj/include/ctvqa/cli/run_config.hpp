#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ctvqa/decoder/train.hpp"

namespace ctvqa {

/// Everything a training run needs, as one flat JSON object. Keys mirror the
/// field names below; `variant`, `prompt_mode` and `attention_norm` take their
/// string spellings. vocab_size always follows the generator vocabulary.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string data;
  std::string out;

  RunConfig();

  nlohmann::json to_json() const;
};

/// Applies `j` on top of `base`. Unknown keys and ill-typed values throw
/// ConfigError naming the key.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);

/// Parses a config file; syntax errors throw ConfigError with line and column.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = RunConfig{});

/// Applies "key" -> "value" overrides given as text (command-line flags), with
/// the same key set and checks as the JSON form.
RunConfig apply_overrides(RunConfig base, const std::map<std::string, std::string>& overrides);

/// The seed propagates into the training config; then both configs validate.
void finalize(RunConfig& cfg);

/// Every accepted key, in a fixed order.
std::vector<std::string> run_config_keys();

}  // namespace ctvqa
