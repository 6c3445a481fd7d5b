#include "ctvqa/fusion/graph.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace ctvqa {

namespace {

std::string layer_prefix(Index l) { return "graph.layer" + std::to_string(l); }

}  // namespace

std::string_view to_string(GraphVariant v) {
  switch (v) {
    case GraphVariant::kAgcn: return "agcn";
    case GraphVariant::kGcn: return "gcn";
    case GraphVariant::kGat: return "gat";
    case GraphVariant::kNone: return "none";
  }
  return "unknown";
}

GraphVariant parse_graph_variant(std::string_view name) {
  if (name == "agcn") return GraphVariant::kAgcn;
  if (name == "gcn") return GraphVariant::kGcn;
  if (name == "gat") return GraphVariant::kGat;
  if (name == "none") return GraphVariant::kNone;
  throw ConfigError("unknown graph variant '" + std::string(name) +
                    "' (expected agcn|gcn|gat|none)");
}

Tensor2 build_adjacency(int num_slices, int num_tokens) {
  const int n = num_slices + num_tokens;
  Tensor2 a = Tensor2::Zero(n, n);
  a.diagonal().setOnes();
  for (int s = 0; s + 1 < num_slices; ++s) {
    a(s, s + 1) = 1.0;
    a(s + 1, s) = 1.0;
  }
  for (int t = num_slices; t < n; ++t) {
    for (int s = 0; s < num_slices; ++s) {
      a(t, s) = 1.0;
      a(s, t) = 1.0;
    }
  }
  return a;
}

std::vector<NodeKind> node_kinds(int num_slices, int num_tokens) {
  std::vector<NodeKind> kinds;
  kinds.reserve(static_cast<std::size_t>(num_slices + num_tokens));
  for (int s = 0; s < num_slices; ++s) kinds.push_back({NodeKind::Type::kSlice, s});
  for (int t = 0; t < num_tokens; ++t) kinds.push_back({NodeKind::Type::kToken, t});
  return kinds;
}

void add_node_projection_params(ParamStore& store, Index d_vision, Index d_text, Index d_graph,
                                Rng& rng) {
  store.add("nodes.slice_proj", rng.normal_matrix(d_vision, d_graph, 0.1 / std::sqrt(double(d_vision))));
  store.add("nodes.token_proj", rng.normal_matrix(d_text, d_graph, 0.1 / std::sqrt(double(d_text))));
}

CrossModalGraph assemble_nodes(const ParamBinding& params, const Var& slice_features,
                               const Var& token_features) {
  if (slice_features.rows() < 1) throw InputError("assemble_nodes: no slice features");
  if (token_features.rows() < 1) throw InputError("assemble_nodes: no token features");
  const Var slices = matmul(slice_features, params["nodes.slice_proj"]);
  const Var tokens = matmul(token_features, params["nodes.token_proj"]);
  const auto n = static_cast<int>(slice_features.rows());
  const auto m = static_cast<int>(token_features.rows());
  const Var parts[] = {slices, tokens};
  return CrossModalGraph{concat_rows(parts), build_adjacency(n, m), node_kinds(n, m), n, m};
}

void add_graph_params(ParamStore& store, const GraphConfig& cfg, Rng& rng) {
  if (cfg.variant == GraphVariant::kNone) return;
  if (cfg.layers < 1) throw ConfigError("graph needs at least one layer");
  const Index d = cfg.d_graph;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  // Attention parameters start small so the initial neighborhood weights are
  // close to uniform.
  const double sa = s / static_cast<double>(d);
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string p = layer_prefix(l);
    switch (cfg.variant) {
      case GraphVariant::kAgcn:
        store.add(p + ".w", rng.normal_matrix(d, d, s));
        store.add(p + ".b", Tensor2::Zero(1, d));
        store.add(p + ".wa", rng.normal_matrix(d, d, 0.3 * s));
        break;
      case GraphVariant::kGcn:
        store.add(p + ".w", rng.normal_matrix(d, d, s));
        store.add(p + ".b", Tensor2::Zero(1, d));
        break;
      case GraphVariant::kGat:
        store.add(p + ".w", rng.normal_matrix(d, d, s));
        store.add(p + ".a_src", rng.normal_matrix(d, 1, sa));
        store.add(p + ".a_dst", rng.normal_matrix(d, 1, sa));
        break;
      case GraphVariant::kNone:
        break;
    }
  }
}

LayerOutput agcn_layer(const Var& h, const Tensor2& adjacency, const AgcnLayerParams& p,
                       SoftmaxNorm norm) {
  const Var weights = masked_row_softmax(bilinear_scores(h, p.attention), adjacency, norm);
  const Var messages = row_affine(h, p.weight);
  const Var mixed = neighborhood_sum(weights, messages);
  return {add_row(mixed, p.bias), weights.value()};
}

LayerOutput gcn_layer(const Var& h, const Tensor2& adjacency, const GcnLayerParams& p) {
  Tape& tape = *h.tape();
  const Var messages = row_affine(h, p.weight);
  const Var mixed = neighborhood_sum(tape.leaf(adjacency), messages);
  Tensor2 normalized = adjacency;
  for (Index r = 0; r < normalized.rows(); ++r) {
    const double deg = normalized.row(r).sum();
    if (deg > 0.0) normalized.row(r) /= deg;
  }
  return {add_row(mixed, p.bias), std::move(normalized)};
}

LayerOutput gat_layer(const Var& h, const Tensor2& adjacency, const GatLayerParams& p,
                      double negative_slope, SoftmaxNorm norm) {
  const Var messages = row_affine(h, p.weight);
  const Var scores = leaky_relu(
      pairwise_sum(row_affine(messages, p.score_src), row_affine(messages, p.score_dst)),
      negative_slope);
  const Var weights = masked_row_softmax(scores, adjacency, norm);
  return {neighborhood_sum(weights, messages), weights.value()};
}

GraphEncoding encode_graph(const Var& nodes, const Tensor2& adjacency,
                           const ParamBinding& params, const GraphConfig& cfg) {
  if (cfg.variant == GraphVariant::kNone) {
    throw ConfigError("encode_graph: variant 'none' has no graph encoder");
  }
  if (cfg.layers < 1) throw ConfigError("encode_graph: needs at least one layer");
  if (adjacency.rows() != nodes.rows() || adjacency.cols() != nodes.rows()) {
    throw ShapeError("encode_graph: adjacency " + shape_string(adjacency) + " for " +
                     std::to_string(nodes.rows()) + " nodes");
  }
  GraphEncoding enc{nodes, {}};
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string p = layer_prefix(l);
    LayerOutput out;
    switch (cfg.variant) {
      case GraphVariant::kAgcn:
        out = agcn_layer(enc.output, adjacency,
                         {params[p + ".w"], params[p + ".b"], params[p + ".wa"]},
                         cfg.attention_norm);
        break;
      case GraphVariant::kGcn:
        out = gcn_layer(enc.output, adjacency, {params[p + ".w"], params[p + ".b"]});
        break;
      case GraphVariant::kGat:
        out = gat_layer(enc.output, adjacency,
                        {params[p + ".w"], params[p + ".a_src"], params[p + ".a_dst"]},
                        cfg.gat_negative_slope, cfg.attention_norm);
        break;
      case GraphVariant::kNone:
        break;
    }
    enc.output = (cfg.inter_layer_relu && l + 1 < cfg.layers) ? relu(out.features) : out.features;
    enc.attention.push_back(std::move(out.attention));
  }
  return enc;
}

AttentionTrace AttentionTrace::from_layers(std::vector<Tensor2> layers, int num_slices,
                                           int num_tokens) {
  AttentionTrace trace;
  trace.node_kinds = ctvqa::node_kinds(num_slices, num_tokens);
  trace.slice_importance.assign(static_cast<std::size_t>(num_slices), 0.0);
  if (!layers.empty() && num_tokens > 0) {
    const Tensor2& last = layers.back();
    for (int s = 0; s < num_slices; ++s) {
      double acc = 0.0;
      for (int t = 0; t < num_tokens; ++t) acc += last(num_slices + t, s);
      trace.slice_importance[static_cast<std::size_t>(s)] = acc / num_tokens;
    }
  }
  trace.layers = std::move(layers);
  return trace;
}

std::string AttentionTrace::to_json() const {
  nlohmann::json doc;
  doc["layers"] = nlohmann::json::array();
  for (const Tensor2& m : layers) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
    }
    doc["layers"].push_back(std::move(rows));
  }
  doc["slice_importance"] = slice_importance;
  nlohmann::json kinds = nlohmann::json::array();
  for (const NodeKind& k : node_kinds) {
    kinds.push_back(std::string(k.type == NodeKind::Type::kSlice ? "slice:" : "token:") +
                    std::to_string(k.index));
  }
  doc["node_kinds"] = std::move(kinds);
  return doc.dump(2);
}

std::string AttentionTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "layer,j,k,w\n";
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor2& m = layers[l];
    for (Index j = 0; j < m.rows(); ++j) {
      for (Index k = 0; k < m.cols(); ++k) out << l << ',' << j << ',' << k << ',' << m(j, k) << '\n';
    }
  }
  return out.str();
}

}  // namespace ctvqa
