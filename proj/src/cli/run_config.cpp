#include "ctvqa/cli/run_config.hpp"

#include <charconv>
#include <functional>
#include <vector>

#include "ctvqa/data/binary_io.hpp"
#include "ctvqa/data/vocab.hpp"
#include "ctvqa/decoder/checkpoint.hpp"
#include "ctvqa/errors.hpp"

namespace ctvqa {

using nlohmann::json;

namespace {

enum class Kind { kInt, kReal, kBool, kText };

struct Key {
  const char* name;
  Kind kind;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const char* key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "': expected " +
                      (std::is_same_v<T, bool>          ? "a boolean"
                       : std::is_same_v<T, std::string> ? "a string"
                       : std::is_floating_point_v<T>    ? "a number"
                                                        : "an integer") +
                      ", got " + v.dump());
  }
}

#define CTVQA_FIELD(key, kind, type, path)                                        \
  Key {                                                                           \
    key, kind, [](const RunConfig& c) { return json(c.path); },                   \
        [](RunConfig& c, const json& v) { c.path = as<type>(v, key); }            \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      CTVQA_FIELD("slice_height", Kind::kInt, Index, model.encoder.slice_height),
      CTVQA_FIELD("slice_width", Kind::kInt, Index, model.encoder.slice_width),
      CTVQA_FIELD("patch_size", Kind::kInt, Index, model.encoder.patch_size),
      CTVQA_FIELD("d_vision", Kind::kInt, Index, model.encoder.d_vision),
      CTVQA_FIELD("d_text", Kind::kInt, Index, model.encoder.d_text),
      CTVQA_FIELD("encoder_layers", Kind::kInt, Index, model.encoder.n_layers),
      CTVQA_FIELD("encoder_heads", Kind::kInt, Index, model.encoder.n_heads),
      CTVQA_FIELD("encoder_d_ff", Kind::kInt, Index, model.encoder.d_ff),
      CTVQA_FIELD("max_question_len", Kind::kInt, Index, model.encoder.max_question_len),
      CTVQA_FIELD("max_slices", Kind::kInt, Index, model.encoder.max_slices),
      CTVQA_FIELD("positional", Kind::kBool, bool, model.encoder.positional),
      CTVQA_FIELD("pixel_offset", Kind::kReal, double, model.encoder.pixel_offset),
      Key{"variant", Kind::kText,
          [](const RunConfig& c) { return json(std::string(to_string(c.model.graph.variant))); },
          [](RunConfig& c, const json& v) {
            c.model.graph.variant = parse_graph_variant(as<std::string>(v, "variant"));
          }},
      CTVQA_FIELD("graph_layers", Kind::kInt, Index, model.graph.layers),
      CTVQA_FIELD("d_graph", Kind::kInt, Index, model.graph.d_graph),
      Key{"attention_norm", Kind::kText,
          [](const RunConfig& c) {
            return json(c.model.graph.attention_norm == SoftmaxNorm::kMasked ? "masked"
                                                                              : "paper_literal");
          },
          [](RunConfig& c, const json& v) {
            const auto s = as<std::string>(v, "attention_norm");
            if (s == "masked") {
              c.model.graph.attention_norm = SoftmaxNorm::kMasked;
            } else if (s == "paper_literal") {
              c.model.graph.attention_norm = SoftmaxNorm::kPaperLiteral;
            } else {
              throw ConfigError("config key 'attention_norm': unknown value '" + s +
                                "' (expected masked|paper_literal)");
            }
          }},
      CTVQA_FIELD("inter_layer_relu", Kind::kBool, bool, model.graph.inter_layer_relu),
      CTVQA_FIELD("gat_negative_slope", Kind::kReal, double, model.graph.gat_negative_slope),
      CTVQA_FIELD("d_model", Kind::kInt, Index, model.decoder.d_model),
      CTVQA_FIELD("decoder_layers", Kind::kInt, Index, model.decoder.n_layers),
      CTVQA_FIELD("decoder_heads", Kind::kInt, Index, model.decoder.n_heads),
      CTVQA_FIELD("decoder_d_ff", Kind::kInt, Index, model.decoder.d_ff),
      CTVQA_FIELD("context_limit", Kind::kInt, Index, model.decoder.context_limit),
      CTVQA_FIELD("tie_head", Kind::kBool, bool, model.decoder.tie_head),
      Key{"prompt_mode", Kind::kText,
          [](const RunConfig& c) { return json(std::string(to_string(c.model.decoder.prompt_mode))); },
          [](RunConfig& c, const json& v) {
            c.model.decoder.prompt_mode = parse_prompt_mode(as<std::string>(v, "prompt_mode"));
          }},
      CTVQA_FIELD("prompt_first", Kind::kBool, bool, model.decoder.prompt_first),
      CTVQA_FIELD("max_answer_len", Kind::kInt, int, model.max_answer_len),
      CTVQA_FIELD("learning_rate", Kind::kReal, double, train.learning_rate),
      CTVQA_FIELD("batch_size", Kind::kInt, int, train.batch_size),
      CTVQA_FIELD("epochs", Kind::kInt, int, train.epochs),
      CTVQA_FIELD("weight_decay", Kind::kReal, double, train.weight_decay),
      CTVQA_FIELD("beta1", Kind::kReal, double, train.beta1),
      CTVQA_FIELD("beta2", Kind::kReal, double, train.beta2),
      CTVQA_FIELD("adam_eps", Kind::kReal, double, train.adam_eps),
      CTVQA_FIELD("seed", Kind::kInt, std::uint64_t, seed),
      CTVQA_FIELD("data", Kind::kText, std::string, data),
      CTVQA_FIELD("out", Kind::kText, std::string, out),
  };
  return table;
}

#undef CTVQA_FIELD

const Key& find_key(std::string_view name) {
  for (const Key& k : keys()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

// Applies one value and turns parser errors for enumerations into keyed ones.
void set_key(RunConfig& cfg, const Key& key, const json& value) {
  try {
    key.set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config key '") + key.name + "': " + e.what());
  }
}

template <typename T>
T parse_number(const std::string& text, const char* key) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError(std::string("config key '") + key + "': cannot parse '" + text + "'");
  }
  return value;
}

json text_to_json(const Key& key, const std::string& text) {
  switch (key.kind) {
    case Kind::kInt:
      if (!text.empty() && text[0] == '-') return parse_number<long long>(text, key.name);
      return parse_number<unsigned long long>(text, key.name);
    case Kind::kReal:
      return parse_number<double>(text, key.name);
    case Kind::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError(std::string("config key '") + key.name + "': expected true|false, got '" +
                        text + "'");
    case Kind::kText:
      return text;
  }
  return text;
}

}  // namespace

RunConfig::RunConfig() {
  const auto vocab = static_cast<Index>(Vocabulary::standard().size());
  model.encoder.vocab_size = vocab;
  model.decoder.vocab_size = vocab;
}

json RunConfig::to_json() const {
  json j = json::object();
  for (const Key& k : keys()) j[k.name] = k.get(*this);
  return j;
}

RunConfig apply_json(RunConfig base, const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object at the top level");
  for (const auto& [name, value] : j.items()) set_key(base, find_key(name), value);
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  json j;
  try {
    j = json::parse(binary::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return apply_json(std::move(base), j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig apply_overrides(RunConfig base, const std::map<std::string, std::string>& overrides) {
  for (const auto& [name, text] : overrides) {
    const Key& key = find_key(name);
    set_key(base, key, text_to_json(key, text));
  }
  return base;
}

void finalize(RunConfig& cfg) {
  cfg.train.seed = cfg.seed;
  cfg.train.validate();
  cfg.model.validate();
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.emplace_back(k.name);
  return out;
}

}  // namespace ctvqa
