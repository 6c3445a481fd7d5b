#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctvqa/model/params.hpp"
#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

enum class GraphVariant { kAgcn, kGcn, kGat, kNone };

std::string_view to_string(GraphVariant v);
/// Throws ConfigError on an unknown name.
GraphVariant parse_graph_variant(std::string_view name);

struct GraphConfig {
  GraphVariant variant = GraphVariant::kAgcn;
  Index layers = 2;
  Index d_graph = 32;
  SoftmaxNorm attention_norm = SoftmaxNorm::kMasked;
  /// ReLU between graph layers (never after the last one).
  bool inter_layer_relu = false;
  double gat_negative_slope = 0.2;
};

struct NodeKind {
  enum class Type { kSlice, kToken };
  Type type;
  /// 0-based slice index or token position.
  int index;

  bool operator==(const NodeKind&) const = default;
};

/// Node features of the cross-modal graph: rows 0..N-1 are slices, rows
/// N..N+M-1 are question tokens, with a binary symmetric adjacency.
struct CrossModalGraph {
  Var node_features;
  Tensor2 adjacency;
  std::vector<NodeKind> node_kinds;
  int num_slices = 0;
  int num_tokens = 0;
};

/// Self-loops on every node, chain edges between consecutive slices, complete
/// token-slice bipartite edges, no token-token edges. num_tokens may be 0.
Tensor2 build_adjacency(int num_slices, int num_tokens);

std::vector<NodeKind> node_kinds(int num_slices, int num_tokens);

void add_node_projection_params(ParamStore& store, Index d_vision, Index d_text, Index d_graph,
                                Rng& rng);

/// Projects slice features (N x d_vision) and token features (M x d_text) into
/// the shared graph width and stacks them slices-first.
CrossModalGraph assemble_nodes(const ParamBinding& params, const Var& slice_features,
                               const Var& token_features);

void add_graph_params(ParamStore& store, const GraphConfig& cfg, Rng& rng);

struct AgcnLayerParams {
  Var weight;     // d x d, applied as h * weight
  Var bias;       // 1 x d
  Var attention;  // d x d bilinear form
};

struct GcnLayerParams {
  Var weight;
  Var bias;
};

struct GatLayerParams {
  Var weight;
  Var score_src;  // d x 1
  Var score_dst;  // d x 1
};

struct LayerOutput {
  Var features;
  /// Row-stochastic (masked mode) attention used to mix neighbors.
  Tensor2 attention;
};

/// w = softmax_A(h Wa h^T); out_j = sum_k w_jk (h_k W) + b.
LayerOutput agcn_layer(const Var& h, const Tensor2& adjacency, const AgcnLayerParams& p,
                       SoftmaxNorm norm = SoftmaxNorm::kMasked);
/// out_j = sum_k a_jk (h_k W) + b, unnormalized.
LayerOutput gcn_layer(const Var& h, const Tensor2& adjacency, const GcnLayerParams& p);
/// e_jk = leaky_relu(a_src . Wh_j + a_dst . Wh_k); out_j = sum_k softmax_A(e)_jk Wh_k.
LayerOutput gat_layer(const Var& h, const Tensor2& adjacency, const GatLayerParams& p,
                      double negative_slope = 0.2, SoftmaxNorm norm = SoftmaxNorm::kMasked);

struct GraphEncoding {
  Var output;
  /// Per-layer mixing weights; gcn reports the row-normalized adjacency.
  std::vector<Tensor2> attention;
};

/// Applies cfg.layers layers of the configured variant. Throws ConfigError for
/// GraphVariant::kNone, which has no graph encoder.
GraphEncoding encode_graph(const Var& nodes, const Tensor2& adjacency,
                           const ParamBinding& params, const GraphConfig& cfg);

struct AttentionTrace {
  std::vector<Tensor2> layers;
  /// Per slice n: mean over token rows of the final-layer weight in column n.
  std::vector<double> slice_importance;
  std::vector<NodeKind> node_kinds;

  static AttentionTrace from_layers(std::vector<Tensor2> layers, int num_slices, int num_tokens);

  /// {"layers": [[row-major weights]...], "slice_importance": [...],
  ///  "node_kinds": ["slice:0", ..., "token:0", ...]}
  std::string to_json() const;
  /// Header "layer,j,k,w" then one line per matrix entry.
  std::string to_csv() const;
};

}  // namespace ctvqa
