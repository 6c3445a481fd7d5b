#include "ctvqa/decoder/checkpoint.hpp"

#include <cstring>
#include <initializer_list>

#include "ctvqa/data/binary_io.hpp"

namespace ctvqa {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string_view norm_name(SoftmaxNorm n) {
  return n == SoftmaxNorm::kMasked ? "masked" : "paper_literal";
}

SoftmaxNorm parse_norm(const std::string& s) {
  if (s == "masked") return SoftmaxNorm::kMasked;
  if (s == "paper_literal") return SoftmaxNorm::kPaperLiteral;
  throw ConfigError("unknown attention_norm '" + s + "' (expected masked|paper_literal)");
}

}  // namespace

json to_json(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& g = cfg.graph;
  const auto& d = cfg.decoder;
  return json{
      {"encoder",
       {{"slice_height", e.slice_height}, {"slice_width", e.slice_width},
        {"patch_size", e.patch_size}, {"d_vision", e.d_vision}, {"d_text", e.d_text},
        {"n_layers", e.n_layers}, {"n_heads", e.n_heads}, {"d_ff", e.d_ff},
        {"vocab_size", e.vocab_size}, {"max_question_len", e.max_question_len},
        {"max_slices", e.max_slices}, {"positional", e.positional},
        {"pixel_offset", e.pixel_offset}}},
      {"graph",
       {{"variant", to_string(g.variant)}, {"layers", g.layers}, {"d_graph", g.d_graph},
        {"attention_norm", norm_name(g.attention_norm)},
        {"inter_layer_relu", g.inter_layer_relu}, {"gat_negative_slope", g.gat_negative_slope}}},
      {"decoder",
       {{"d_model", d.d_model}, {"n_layers", d.n_layers}, {"n_heads", d.n_heads},
        {"d_ff", d.d_ff}, {"vocab_size", d.vocab_size}, {"context_limit", d.context_limit},
        {"tie_head", d.tie_head}, {"prompt_mode", to_string(d.prompt_mode)},
        {"prompt_first", d.prompt_first}}},
      {"max_answer_len", cfg.max_answer_len}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, {"encoder", "graph", "decoder", "max_answer_len"}, "model config");
  ModelConfig cfg;
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    reject_unknown(e,
                   {"slice_height", "slice_width", "patch_size", "d_vision", "d_text", "n_layers",
                    "n_heads", "d_ff", "vocab_size", "max_question_len", "max_slices",
                    "positional", "pixel_offset"},
                   "encoder config");
    auto& c = cfg.encoder;
    read_key(e, "slice_height", c.slice_height);
    read_key(e, "slice_width", c.slice_width);
    read_key(e, "patch_size", c.patch_size);
    read_key(e, "d_vision", c.d_vision);
    read_key(e, "d_text", c.d_text);
    read_key(e, "n_layers", c.n_layers);
    read_key(e, "n_heads", c.n_heads);
    read_key(e, "d_ff", c.d_ff);
    read_key(e, "vocab_size", c.vocab_size);
    read_key(e, "max_question_len", c.max_question_len);
    read_key(e, "max_slices", c.max_slices);
    read_key(e, "positional", c.positional);
    read_key(e, "pixel_offset", c.pixel_offset);
  }
  if (j.contains("graph")) {
    const json& g = j["graph"];
    reject_unknown(g,
                   {"variant", "layers", "d_graph", "attention_norm", "inter_layer_relu",
                    "gat_negative_slope"},
                   "graph config");
    auto& c = cfg.graph;
    std::string variant(to_string(c.variant));
    std::string norm(norm_name(c.attention_norm));
    read_key(g, "variant", variant);
    read_key(g, "attention_norm", norm);
    c.variant = parse_graph_variant(variant);
    c.attention_norm = parse_norm(norm);
    read_key(g, "layers", c.layers);
    read_key(g, "d_graph", c.d_graph);
    read_key(g, "inter_layer_relu", c.inter_layer_relu);
    read_key(g, "gat_negative_slope", c.gat_negative_slope);
  }
  if (j.contains("decoder")) {
    const json& d = j["decoder"];
    reject_unknown(d,
                   {"d_model", "n_layers", "n_heads", "d_ff", "vocab_size", "context_limit",
                    "tie_head", "prompt_mode", "prompt_first"},
                   "decoder config");
    auto& c = cfg.decoder;
    std::string mode(to_string(c.prompt_mode));
    read_key(d, "prompt_mode", mode);
    c.prompt_mode = parse_prompt_mode(mode);
    read_key(d, "d_model", c.d_model);
    read_key(d, "n_layers", c.n_layers);
    read_key(d, "n_heads", c.n_heads);
    read_key(d, "d_ff", c.d_ff);
    read_key(d, "vocab_size", c.vocab_size);
    read_key(d, "context_limit", c.context_limit);
    read_key(d, "tie_head", c.tie_head);
    read_key(d, "prompt_first", c.prompt_first);
  }
  read_key(j, "max_answer_len", cfg.max_answer_len);
  cfg.validate();
  return cfg;
}

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

std::string encode_checkpoint(const ParamStore& params) {
  std::string out(kCheckpointMagic, std::strlen(kCheckpointMagic));
  binary::put_le<std::uint32_t>(out, kCheckpointVersion);
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rows()));
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.cols()));
    for (Index i = 0; i < e.value.size(); ++i) binary::put_le<double>(out, e.value.data()[i]);
  }
  return out;
}

ParamStore decode_checkpoint(std::string_view bytes, const std::string& source) {
  binary::Reader in(bytes, source);
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (in.bytes(magic_len, "magic") != std::string_view(kCheckpointMagic, magic_len)) {
    throw FormatError(source + ": bad magic at offset 0 (expected " + kCheckpointMagic + ")");
  }
  const auto version = in.get_le<std::uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get_le<std::uint32_t>("tensor count");
  ParamStore store;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.get_le<std::uint32_t>("name length");
    std::string name(in.bytes(name_len, "tensor name"));
    const auto rows = in.get_le<std::uint32_t>("rows");
    const auto cols = in.get_le<std::uint32_t>("cols");
    in.require(std::size_t{rows} * cols * sizeof(double), "tensor data");
    Tensor2 value(rows, cols);
    for (Index i = 0; i < value.size(); ++i) value.data()[i] = in.get_le<double>("tensor data");
    if (store.contains(name)) throw FormatError(source + ": duplicate tensor '" + name + "'");
    store.add(std::move(name), std::move(value));
  }
  if (in.remaining() != 0) {
    throw FormatError(source + ": " + std::to_string(in.remaining()) +
                      " trailing bytes at offset " + std::to_string(in.offset()));
  }
  return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const ModelConfig& cfg) {
  binary::write_file(path, encode_checkpoint(params));
  const json sidecar{{"format_version", kCheckpointVersion}, {"model", to_json(cfg)}};
  binary::write_file(checkpoint_sidecar(path), sidecar.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string side_path = checkpoint_sidecar(path).string();
  json sidecar;
  try {
    sidecar = json::parse(binary::read_file(side_path));
  } catch (const json::exception& e) {
    throw FormatError(side_path + ": " + e.what());
  }
  try {
    reject_unknown(sidecar, {"format_version", "model"}, side_path.c_str());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  const auto version = sidecar.value("format_version", 0u);
  if (version != kCheckpointVersion) {
    throw FormatError(side_path + ": unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(sidecar.value("model", json::object()));
  } catch (const ConfigError& e) {
    throw FormatError(side_path + ": " + e.what());
  }
  ck.params = decode_checkpoint(binary::read_file(path), path.string());

  const ParamStore expected = init_params(ck.config, 0);
  if (expected.size() != ck.params.size()) {
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(ck.params.size()) +
                      " tensors but the config implies " + std::to_string(expected.size()));
  }
  for (const auto& e : expected.entries()) {
    if (!ck.params.contains(e.name)) {
      throw FormatError(path.string() + ": tensor '" + e.name + "' missing for this config");
    }
    const Tensor2& got = ck.params.at(e.name);
    if (got.rows() != e.value.rows() || got.cols() != e.value.cols()) {
      throw FormatError(path.string() + ": tensor '" + e.name + "' is " + shape_string(got) +
                        " but the config implies " + shape_string(e.value));
    }
  }
  return ck;
}

}  // namespace ctvqa
