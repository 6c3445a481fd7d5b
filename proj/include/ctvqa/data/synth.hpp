#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctvqa/data/vocab.hpp"
#include "ctvqa/numerics/tensor.hpp"

namespace ctvqa {

enum class QuestionType { kPlane, kPhase, kOrgan, kAbnormality, kLocation };

inline constexpr std::array<QuestionType, 5> kQuestionTypes = {
    QuestionType::kPlane, QuestionType::kPhase, QuestionType::kOrgan, QuestionType::kAbnormality,
    QuestionType::kLocation};

std::string_view to_string(QuestionType t);
/// Throws InputError on an unknown name.
QuestionType parse_question_type(std::string_view name);

enum class Archetype { kDisk, kCross, kRing, kNone };

/// Answer phrase naming an archetype ("lesion-a", ..., "no abnormality").
std::string_view archetype_answer(Archetype a);

struct VolumeFacts {
  std::string plane;
  std::string phase;
  std::string organ;
  /// Archetype answer phrase.
  std::string abnormality;
  /// Contiguous, ascending, nonempty for generated volumes.
  std::vector<int> planted_slices;
  /// "upper left" | "upper right" | "lower left" | "lower right".
  std::string planted_quadrant;

  bool operator==(const VolumeFacts&) const = default;
};

struct Volume {
  std::string id;
  std::vector<Tensor2> slices;
  VolumeFacts facts;

  int num_slices() const { return static_cast<int>(slices.size()); }
  bool operator==(const Volume&) const = default;
};

struct SynthConfig {
  int train_volumes = 500;
  int dev_volumes = 50;
  int test_volumes = 50;
  int min_slices = 4;
  int max_slices = 12;
  int height = 16;
  int width = 16;
  /// Lesion pixels are background + this amount.
  double lesion_contrast = 0.6;
};

/// Deterministic in (seed, cfg). Pixel values are representable as float so a
/// write/load round trip is exact.
Volume generate_volume(std::uint64_t seed, const SynthConfig& cfg, std::string id = "");

/// Pixels stamped by the lesion pattern for the given facts geometry; used by
/// the generator and exposed for geometry checks.
std::vector<std::pair<int, int>> lesion_pixels(Archetype a, int center_row, int center_col);

struct QAItem {
  std::string volume_id;
  QuestionType type = QuestionType::kPlane;
  std::string question;
  std::string answer;
  std::vector<int> question_ids;
  std::vector<int> answer_ids;

  bool operator==(const QAItem&) const = default;
};

/// One question per family from fixed templates; the template variant is
/// drawn from `seed`. Throws InputError when a needed fact is missing.
std::vector<QAItem> generate_questions(const Volume& volume, std::uint64_t seed);

struct SplitData {
  std::vector<Volume> volumes;
  std::vector<QAItem> items;

  const Volume& volume(std::string_view id) const;
  bool operator==(const SplitData&) const = default;
};

struct Dataset {
  std::uint64_t seed = 0;
  SynthConfig config;
  SplitData train;
  SplitData dev;
  SplitData test;

  const SplitData& split(std::string_view name) const;
  bool operator==(const Dataset& o) const {
    return seed == o.seed && train == o.train && dev == o.dev && test == o.test;
  }
};

/// Volume i of the whole corpus (train, then dev, then test) uses seed
/// mix_seed(master_seed, i); output is independent of generation order.
Dataset generate_dataset(std::uint64_t master_seed, const SynthConfig& cfg);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct SplitManifest {
  std::string split;
  int volumes = 0;
  std::array<int, 5> counts{};  // indexed like kQuestionTypes
};

struct DatasetManifest {
  std::uint32_t format_version = kDatasetFormatVersion;
  std::uint64_t generator_seed = 0;
  std::vector<SplitManifest> splits;
};

DatasetManifest make_manifest(const Dataset& ds);

// Volume file: "CTVQVOL1", u32 N, u32 H, u32 W (little-endian), N*H*W
// little-endian f32 row-major, u32 length, JSON facts.
void write_volume(const std::filesystem::path& path, const Volume& volume);
/// Throws FormatError naming the offset on bad magic or truncation.
Volume load_volume(const std::filesystem::path& path);

/// Writes manifest.json, {train,dev,test}.jsonl and volumes/<id>.ctv.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Loads and re-tokenizes; verifies manifest counts against the records.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ctvqa
