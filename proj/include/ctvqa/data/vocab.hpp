#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctvqa {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;

/// Closed word-level vocabulary with whitespace tokenization.
class Vocabulary {
 public:
  /// The generator vocabulary: specials followed by every template and answer
  /// word.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> words);

  int size() const { return static_cast<int>(words_.size()); }
  /// Returns kUnkId for unknown words.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;

  /// Lowercases and splits on whitespace. Unknown words become kUnkId and are
  /// appended to `unknown` (once each) when given.
  std::vector<int> encode(std::string_view text, std::vector<std::string>* unknown = nullptr) const;
  /// Joins words with single spaces, stopping at EOS and skipping PAD/BOS.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

/// Lowercase and collapse whitespace runs; trims both ends.
std::string normalize_text(std::string_view text);

}  // namespace ctvqa
