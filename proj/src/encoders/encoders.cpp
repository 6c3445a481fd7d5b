#include "ctvqa/encoders/encoders.hpp"

#include <cmath>
#include <string>

namespace ctvqa {

namespace {

std::string vision_block(Index l) { return "vision.block" + std::to_string(l); }
std::string text_block(Index l) { return "text.block" + std::to_string(l); }

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size <= 0 || slice_height % patch_size != 0 || slice_width % patch_size != 0) {
    throw ConfigError("slice " + shape_string(slice_height, slice_width) +
                      " is not divisible into patches of " + std::to_string(patch_size));
  }
  if (d_vision % n_heads != 0 || d_text % n_heads != 0) {
    throw ConfigError("encoder widths must be divisible by n_heads=" + std::to_string(n_heads));
  }
  if (n_layers < 0 || vocab_size < 1 || max_question_len < 1 || max_slices < 1) {
    throw ConfigError("invalid encoder configuration");
  }
}

PatchSequence split_into_patches(const Tensor2& slice, Index patch_size) {
  if (patch_size <= 0 || slice.rows() % patch_size != 0 || slice.cols() % patch_size != 0) {
    throw ShapeError("split_into_patches: slice " + shape_string(slice) +
                     " not divisible by patch size " + std::to_string(patch_size));
  }
  const Index per_row = slice.cols() / patch_size;
  const Index count = (slice.rows() / patch_size) * per_row;
  PatchSequence seq{Tensor2(count, patch_size * patch_size)};
  for (Index u = 0; u < count; ++u) {
    const Index r0 = (u / per_row) * patch_size;
    const Index c0 = (u % per_row) * patch_size;
    for (Index r = 0; r < patch_size; ++r) {
      for (Index c = 0; c < patch_size; ++c) {
        seq.patches(u, r * patch_size + c) = slice(r0 + r, c0 + c);
      }
    }
  }
  return seq;
}

void add_encoder_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index pd = cfg.patch_dim();
  store.add("vision.patch.w", rng.normal_matrix(pd, cfg.d_vision, 3.0 / std::sqrt(double(pd))));
  store.add("vision.patch.b", Tensor2::Zero(1, cfg.d_vision));
  store.add("vision.pos", rng.normal_matrix(cfg.patches_per_slice(), cfg.d_vision, 0.5));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    add_block_params(store, vision_block(l), {cfg.d_vision, cfg.n_heads, cfg.d_ff}, rng);
  }
  store.add("text.embed", rng.normal_matrix(cfg.vocab_size, cfg.d_text, 0.1));
  store.add("text.pos", rng.normal_matrix(cfg.max_question_len, cfg.d_text, 0.1));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    add_block_params(store, text_block(l), {cfg.d_text, cfg.n_heads, cfg.d_ff}, rng);
  }
}

Var encode_slices(const ParamBinding& params, const EncoderConfig& cfg,
                  std::span<const Tensor2> slices) {
  if (slices.empty()) throw InputError("encode_slices: volume has no slices");
  const Index u = cfg.patches_per_slice();
  const auto n = static_cast<Index>(slices.size());
  Tensor2 stacked(n * u, cfg.patch_dim());
  for (Index s = 0; s < n; ++s) {
    const Tensor2& slice = slices[static_cast<std::size_t>(s)];
    if (slice.rows() != cfg.slice_height || slice.cols() != cfg.slice_width) {
      throw ShapeError("encode_slices: slice " + shape_string(slice) + " but config expects " +
                       shape_string(cfg.slice_height, cfg.slice_width));
    }
    stacked.middleRows(s * u, u) =
        split_into_patches(slice, cfg.patch_size).patches.array() - cfg.pixel_offset;
  }
  Tape& tape = params.tape();
  Var x = add_row(matmul(tape.leaf(std::move(stacked)), params["vision.patch.w"]),
                  params["vision.patch.b"]);
  if (cfg.positional) {
    std::vector<int> pos_ids(static_cast<std::size_t>(n * u));
    for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<int>(i % u);
    x = add(x, embedding_lookup(params["vision.pos"], pos_ids));
  }
  Tensor2 block_mask = Tensor2::Zero(n * u, n * u);
  for (Index s = 0; s < n; ++s) block_mask.block(s * u, s * u, u, u).setOnes();
  for (Index l = 0; l < cfg.n_layers; ++l) {
    x = transformer_block(params, vision_block(l), x, block_mask, cfg.n_heads);
  }
  // Max-pool each slice's d x U column block down to one feature column.
  std::vector<Var> pooled;
  pooled.reserve(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) {
    pooled.push_back(column_max_pool(transpose(slice_rows(x, s * u, u))));
  }
  return transpose(n == 1 ? pooled[0] : concat_cols(pooled));
}

Var encode_slice(const ParamBinding& params, const EncoderConfig& cfg,
                 const PatchSequence& patches) {
  if (patches.count() != cfg.patches_per_slice() || patches.patches.cols() != cfg.patch_dim()) {
    throw ShapeError("encode_slice: patch sequence " + shape_string(patches.patches) +
                     " does not match config (" + std::to_string(cfg.patches_per_slice()) +
                     " patches of " + std::to_string(cfg.patch_dim()) + ")");
  }
  Tape& tape = params.tape();
  const Index u = patches.count();
  Tensor2 centered = patches.patches.array() - cfg.pixel_offset;
  Var x = add_row(matmul(tape.leaf(std::move(centered)), params["vision.patch.w"]),
                  params["vision.patch.b"]);
  if (cfg.positional) x = add(x, slice_rows(params["vision.pos"], 0, u));
  const Tensor2 full = Tensor2::Ones(u, u);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    x = transformer_block(params, vision_block(l), x, full, cfg.n_heads);
  }
  return transpose(column_max_pool(transpose(x)));
}

Var encode_question(const ParamBinding& params, const EncoderConfig& cfg,
                    std::span<const int> tokens) {
  if (tokens.empty()) throw InputError("encode_question: empty question");
  const auto m = static_cast<Index>(tokens.size());
  if (m > cfg.max_question_len) {
    throw InputError("encode_question: " + std::to_string(m) + " tokens exceed the limit of " +
                     std::to_string(cfg.max_question_len));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw VocabularyError("encode_question: token id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
  }
  Var x = embedding_lookup(params["text.embed"], tokens);
  if (cfg.positional) x = add(x, slice_rows(params["text.pos"], 0, m));
  const Tensor2 full = Tensor2::Ones(m, m);
  for (Index l = 0; l < cfg.n_layers; ++l) {
    x = transformer_block(params, text_block(l), x, full, cfg.n_heads);
  }
  return x;
}

}  // namespace ctvqa
