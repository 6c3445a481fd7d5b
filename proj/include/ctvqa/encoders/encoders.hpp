#pragma once

#include <span>
#include <vector>

#include "ctvqa/model/params.hpp"
#include "ctvqa/model/transformer.hpp"
#include "ctvqa/numerics/random.hpp"

namespace ctvqa {

struct EncoderConfig {
  Index slice_height = 16;
  Index slice_width = 16;
  Index patch_size = 8;
  Index d_vision = 32;
  Index d_text = 32;
  Index n_layers = 2;
  Index n_heads = 2;
  Index d_ff = 64;
  Index vocab_size = 64;
  Index max_question_len = 16;
  Index max_slices = 12;
  /// Learned absolute positional embeddings on both encoders.
  bool positional = true;
  /// Subtracted from every pixel before the patch projection.
  double pixel_offset = 0.3;

  Index patches_per_slice() const {
    return (slice_height / patch_size) * (slice_width / patch_size);
  }
  Index patch_dim() const { return patch_size * patch_size; }
  /// Throws ConfigError on indivisible dimensions.
  void validate() const;
};

/// One slice cut into non-overlapping square patches: row u is patch u,
/// patches in row-major order, each flattened row-major.
struct PatchSequence {
  Tensor2 patches;

  Index count() const { return patches.rows(); }
};

PatchSequence split_into_patches(const Tensor2& slice, Index patch_size);

void add_encoder_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng);

/// Vision transformer on one slice, max-pooled over patches: 1 x d_vision.
Var encode_slice(const ParamBinding& params, const EncoderConfig& cfg,
                 const PatchSequence& patches);

/// encode_slice for every slice of a volume, batched: N x d_vision. Patches
/// of different slices never attend to each other.
Var encode_slices(const ParamBinding& params, const EncoderConfig& cfg,
                  std::span<const Tensor2> slices);

/// Text transformer over question tokens: M x d_text. Throws InputError on an
/// empty or over-long question and VocabularyError on an out-of-range id.
Var encode_question(const ParamBinding& params, const EncoderConfig& cfg,
                    std::span<const int> tokens);

}  // namespace ctvqa
